"""Runtime multiply-accumulate tally for convolution, affine and matmul ops."""

from __future__ import annotations

import contextlib
from collections import Counter

_ACTIVE: list[Counter] = []


def record(op: str, macs: int) -> None:
    for counter in _ACTIVE:
        counter[op] += int(macs)


@contextlib.contextmanager
def count_macs():
    """Collect multiply-accumulates executed inside the block, keyed by op name."""
    counter: Counter = Counter()
    _ACTIVE.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE.remove(counter)
