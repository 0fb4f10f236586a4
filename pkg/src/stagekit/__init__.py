"""Two-stage gated inference toolkit.

Post-network plumbing for detection/segmentation pipelines that gate a
costly grounding stage behind a classifier: test-time-augmentation inverse
mapping, multi-model box ensembling, checkpoint weight averaging, and
COCO-style evaluation with report and figure output.
"""

__version__ = "0.1.0"
