"""Tests for the COCO run-length string codec."""

import random

import pytest

from stagekit_adapters.cocorle import decode_counts_string, encode_counts_string

# frozen vectors worked out by hand from the reference algorithm:
# 5-bit groups, 0x20 continuation, 0x10 sign extension, counts from
# index 3 on delta-coded against the count two places back
FROZEN = [
    ([1, 2], "12"),
    ([5, 3, 4, 6, 7], "53433"),
    ([2, 9, 1, 2], "291I"),
    ([100], "T3"),
]


@pytest.mark.parametrize("counts,encoded", FROZEN)
def test_frozen_encodings(counts, encoded):
    assert encode_counts_string(counts) == encoded
    assert decode_counts_string(encoded) == counts


def test_round_trip_random_run_lists():
    rng = random.Random(7)
    for _ in range(500):
        n = rng.randrange(1, 60)
        counts = [rng.randrange(0, 100_000) for _ in range(n)]
        assert decode_counts_string(encode_counts_string(counts)) == counts


def test_round_trip_large_counts():
    counts = [0, 10**9, 3, 10**9, 5]
    assert decode_counts_string(encode_counts_string(counts)) == counts


def test_decode_rejects_bad_character():
    with pytest.raises(ValueError, match="invalid run-length character"):
        decode_counts_string("1\x10")


def test_decode_rejects_truncated_string():
    # a continuation bit with nothing after it
    with pytest.raises(ValueError, match="truncated"):
        decode_counts_string(encode_counts_string([100])[:1])


def test_decode_rejects_negative_count():
    # 'I' alone decodes to -7 with no earlier count to absorb it
    with pytest.raises(ValueError, match="negative"):
        decode_counts_string("I")
