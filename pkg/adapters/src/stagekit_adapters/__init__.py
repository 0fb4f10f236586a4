"""Format shims feeding the stagekit toolkit.

These converters turn ecosystem artifacts (COCO result lists, framework
checkpoints, logit tables) into stagekit's canonical files. They talk to
the toolkit exclusively through its documented file formats and its
command line; nothing here imports it. Every converter validates its
output via ``stagekit validate`` before the file lands and writes a
conversion manifest next to it.
"""

__version__ = "0.1.0"
