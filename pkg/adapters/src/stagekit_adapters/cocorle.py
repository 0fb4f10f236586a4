"""COCO run-length codec.

COCO stores binary masks column-major as alternating zero/one run counts,
always beginning with the zero count. The list form carries the counts
verbatim; the compact string form packs each count into 5-bit groups
(printable as chr(group + 48)), a set 0x20 bit chaining groups, sign
extension from the 0x10 bit of the last group, and counts from index 3 on
stored as deltas against the count two places back.
"""

from __future__ import annotations


def decode_counts_string(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            if p >= len(s):
                raise ValueError("truncated run-length string")
            c = ord(s[p]) - 48
            if not 0 <= c < 64:
                raise ValueError(f"invalid run-length character {s[p]!r}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        if x < 0:
            raise ValueError(f"run-length string decodes to negative count {x}")
        counts.append(x)
    return counts


def encode_counts_string(counts: list[int]) -> str:
    chars: list[str] = []
    for i, count in enumerate(counts):
        x = count - (counts[i - 2] if i > 2 else 0)
        more = True
        while more:
            group = x & 0x1F
            x >>= 5
            more = (x != -1) if (group & 0x10) else (x != 0)
            if more:
                group |= 0x20
            chars.append(chr(group + 48))
    return "".join(chars)
