"""Bit-reproducible streaming reduction over ensemble members.

Floating-point addition is not associative, so naive partial sums would make
results depend on how members were split across workers.  Member payloads
are instead combined through a fixed dyadic tree aligned to absolute member
indices: two nodes merge only if they are siblings (levels equal, even/odd
index pair) of that tree.  Every addition is then "parent = left + right" at
a fixed tree position, so

* any contiguous split of the member range merges back bit-identically,
* thread count and scheduling cannot change the result,
* ``merge`` is associative and (for disjoint adjacent ranges) commutative.

An accumulator holds the maximal dyadic nodes of its member range (at most
~2 log2 M of them) plus the exact member count.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


class DyadicAccumulator:
    """Reduction state over a contiguous range of member indices."""

    def __init__(self, payload_len: int):
        self.payload_len = int(payload_len)
        self.start: int | None = None
        self.end: int | None = None
        # parallel lists: level, index (position = index << level), payload
        self._levels: list[int] = []
        self._indices: list[int] = []
        self._payloads: list[np.ndarray] = []

    # -- construction ---------------------------------------------------------

    def push_leaf(self, member: int, payload: np.ndarray) -> None:
        """Append one member's payload; members must arrive in index order."""
        self._push(0, member, np.array(payload, dtype=np.float64, copy=True))

    def push_node(self, level: int, index: int, payload: np.ndarray) -> None:
        """Append a complete aligned node covering [index << level, (index+1) << level)."""
        self._push(int(level), int(index), np.array(payload, dtype=np.float64, copy=True))

    def _push(self, level: int, index: int, payload: np.ndarray) -> None:
        if payload.shape != (self.payload_len,):
            raise DataError(
                f"payload length {payload.shape} does not match layout ({self.payload_len},)"
            )
        lo = index << level
        hi = (index + 1) << level
        if self.end is None:
            self.start = lo
        elif lo != self.end:
            raise DataError(f"non-contiguous push: node starts at {lo}, range ends at {self.end}")
        self.end = hi
        self._levels.append(level)
        self._indices.append(index)
        self._payloads.append(payload)
        self._coalesce()

    def _coalesce(self) -> None:
        lv, ix, pl = self._levels, self._indices, self._payloads
        while (
            len(lv) >= 2
            and lv[-1] == lv[-2]
            and ix[-1] & 1 == 1
            and ix[-2] == ix[-1] - 1
        ):
            pl[-2] += pl[-1]
            ix[-2] >>= 1
            lv[-2] += 1
            lv.pop(); ix.pop(); pl.pop()

    # -- combination ------------------------------------------------------------

    @property
    def count(self) -> int:
        return 0 if self.end is None else self.end - self.start

    def merge(self, other: "DyadicAccumulator") -> "DyadicAccumulator":
        """Combine with an accumulator over the adjacent member range."""
        if self.payload_len != other.payload_len:
            raise DataError("cannot merge accumulators with different layouts")
        if other.end is None:
            lo, hi = self, None
        elif self.end is None:
            lo, hi = other, None
        elif other.start == self.end:
            lo, hi = self, other
        elif other.end == self.start:
            lo, hi = other, self
        else:
            raise DataError(
                f"cannot merge non-adjacent member ranges "
                f"[{self.start}, {self.end}) and [{other.start}, {other.end})"
            )
        out = DyadicAccumulator(self.payload_len)
        out.start, out.end = lo.start, lo.end
        out._levels = list(lo._levels)
        out._indices = list(lo._indices)
        out._payloads = [p.copy() for p in lo._payloads]
        if hi is not None:
            for level, index, payload in zip(hi._levels, hi._indices, hi._payloads):
                out._push(level, index, payload.copy())
        return out

    def totals(self) -> np.ndarray:
        """Left-to-right fold of the remaining maximal nodes (canonical order)."""
        if not self._payloads:
            raise DataError("empty accumulator has no totals")
        total = self._payloads[0].copy()
        for p in self._payloads[1:]:
            total += p
        return total

    def node_summary(self) -> list[tuple[int, int]]:
        return list(zip(self._levels, self._indices))
