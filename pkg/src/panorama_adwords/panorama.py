"""Circular budget intervals and the panoramic interval-level assignment.

Each advertiser's budget [0, B) is a circle.  Assignments claim half-open
pieces of it; a scan pointer y* walks around the circle skipping the
deterministically assigned region, which keeps semi-assignment counts level.
Everything here is integer arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

Interval = tuple[int, int]
Subset = tuple[Interval, ...]

SEMI = "semi"
DETERMINISTIC = "deterministic"


# -- subsets of the circle ----------------------------------------------------

def normalize(intervals: Iterable[Interval]) -> Subset:
    """Sort, drop empties, merge touching pieces."""
    out: list[list[int]] = []
    for s, e in sorted((s, e) for s, e in intervals if e > s):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return tuple((s, e) for s, e in out)


def measure(subset: Iterable[Interval]) -> int:
    return sum(e - s for s, e in subset)


def complement(subset: Sequence[Interval], budget: int) -> Subset:
    out, cur = [], 0
    for s, e in normalize(subset):
        if s > cur:
            out.append((cur, s))
        cur = max(cur, e)
    if cur < budget:
        out.append((cur, budget))
    return tuple(out)


def intersect(a: Sequence[Interval], b: Sequence[Interval]) -> Subset:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        s, e = max(a[i][0], b[j][0]), min(a[i][1], b[j][1])
        if s < e:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return tuple(out)


def contains(subset: Sequence[Interval], y) -> bool:
    return any(s <= y < e for s, e in subset)


def _rotated_free(y: int, excluded: Sequence[Interval], budget: int) -> list[Interval]:
    free = complement(excluded, budget)
    after = [(max(s, y), e) for s, e in free if e > y]
    before = [(s, min(e, y)) for s, e in free if s < y]
    return after + before


def scan_forward(y: int, excluded: Sequence[Interval], b: int, budget: int) -> tuple[Subset, int]:
    """Pieces of [y, z) minus `excluded` with measure b, and the end point z.

    When fewer than b units are free the whole free region is returned and
    z = y.  z is the smallest point reaching measure b, reported mod budget.
    """
    if b <= 0:
        return (), y
    order = _rotated_free(y, excluded, budget)
    if b > sum(e - s for s, e in order):
        return normalize(order), y
    pieces, acc = [], 0
    for s, e in order:
        take = min(e - s, b - acc)
        pieces.append((s, s + take))
        acc += take
        if acc == b:
            return normalize(pieces), (s + take) % budget
    raise AssertionError("unreachable")


def scan_backward(y: int, excluded: Sequence[Interval], b: int, budget: int) -> tuple[Subset, int]:
    if b <= 0:
        return (), y
    free = complement(excluded, budget)
    before = [(s, min(e, y)) for s, e in free if s < y]
    after = [(max(s, y), e) for s, e in free if e > y]
    order = list(reversed(before)) + list(reversed(after))
    if b > sum(e - s for s, e in order):
        return normalize(order), y
    pieces, acc = [], 0
    for s, e in order:
        take = min(e - s, b - acc)
        pieces.append((e - take, e))
        acc += take
        if acc == b:
            return normalize(pieces), (e - take) % budget
    raise AssertionError("unreachable")


def oplus(y: int, excluded: Sequence[Interval], b: int, budget: int) -> int:
    return scan_forward(y, excluded, b, budget)[1]


def ominus(y: int, excluded: Sequence[Interval], b: int, budget: int) -> int:
    return scan_backward(y, excluded, b, budget)[1]


def circular_free_measure(y: int, z: int, excluded: Sequence[Interval], budget: int) -> int:
    """Measure of [y, z) taken around the circle, minus excluded."""
    if y <= z:
        arc = ((y, z),)
    else:
        arc = normalize([(y, budget), (0, z)])
    return measure(arc) - measure(intersect(arc, normalize(excluded)))


def panorama_payment(subsets: Iterable[Sequence[Interval]]) -> int:
    """Measure of the union of the given subsets of one advertiser's circle."""
    pieces = [iv for sub in subsets for iv in sub]
    return measure(normalize(pieces))


# -- per-advertiser state -----------------------------------------------------

@dataclass(frozen=True)
class Segment:
    start: int
    end: int
    k: int = 0            # semi-assignments so far, kept after a deterministic one
    det: bool = False
    kl: int = 0           # large-bid semi-assignments before the first small one
    small: bool = False   # a small-bid semi-assignment has happened

    @property
    def status(self):
        return (self.k, self.det, self.kl, self.small)

    @property
    def length(self) -> int:
        return self.end - self.start


class AdvertiserPanorama:

    def __init__(self, budget: int):
        if budget <= 0:
            raise ValueError("budget must be positive")
        self.budget = budget
        self.segments: list[Segment] = [Segment(0, budget)]
        self.y_star = 0
        self.det_measure = 0

    def copy(self) -> "AdvertiserPanorama":
        other = AdvertiserPanorama.__new__(AdvertiserPanorama)
        other.budget, other.y_star, other.det_measure = self.budget, self.y_star, self.det_measure
        other.segments = list(self.segments)
        return other

    def det_region(self) -> Subset:
        return normalize((s.start, s.end) for s in self.segments if s.det)

    def segment_at(self, y) -> Segment:
        for seg in self.segments:
            if seg.start <= y < seg.end:
                return seg
        raise ValueError(f"point {y} outside [0, {self.budget})")

    def k_at(self, y):
        seg = self.segment_at(y)
        return None if seg.det else seg.k

    def _scan(self, b: int) -> tuple[Subset, int]:
        return scan_forward(self.y_star, self.det_region(), b, self.budget)

    def next_subset(self, b: int) -> Subset:
        if b > self.budget:
            raise ValueError("bid exceeds budget")
        return self._scan(b)[0]

    def pieces(self, subset: Sequence[Interval]) -> list[Segment]:
        """Segments clipped to `subset`, carrying their current counters."""
        out = []
        for seg in self.segments:
            for s, e in subset:
                lo, hi = max(s, seg.start), min(e, seg.end)
                if lo < hi:
                    out.append(replace(seg, start=lo, end=hi))
        return out

    def _split(self, x: int) -> None:
        if x <= 0 or x >= self.budget:
            return
        for idx, seg in enumerate(self.segments):
            if seg.start < x < seg.end:
                self.segments[idx:idx + 1] = [replace(seg, end=x), replace(seg, start=x)]
                return

    def _merge(self) -> None:
        out: list[Segment] = []
        for seg in self.segments:
            if out and out[-1].status == seg.status:
                out[-1] = replace(out[-1], end=seg.end)
            else:
                out.append(seg)
        self.segments = out

    def commit(self, subset: Sequence[Interval], kind: str, *, large: bool = True,
               bid: int | None = None) -> None:
        subset = normalize(subset)
        if measure(intersect(subset, self.det_region())):
            raise ValueError("subset overlaps the deterministic region")
        b = measure(subset) if bid is None else bid
        expected, z = self._scan(b)
        if expected != subset:
            raise ValueError("subset is not the next panoramic subset")
        if not subset:
            return
        for s, e in subset:
            self._split(s)
            self._split(e)
        updated = []
        for seg in self.segments:
            if any(s <= seg.start and seg.end <= e for s, e in subset):
                if kind == DETERMINISTIC:
                    seg = replace(seg, det=True)
                    self.det_measure += seg.length
                elif kind == SEMI:
                    if large:
                        seg = replace(seg, k=seg.k + 1, kl=seg.kl if seg.small else seg.kl + 1)
                    else:
                        seg = replace(seg, k=seg.k + 1, small=True)
                else:
                    raise ValueError(f"unknown kind {kind!r}")
            updated.append(seg)
        self.segments = updated
        self._merge()
        self.y_star = self._skip_det(z)

    def _skip_det(self, y: int) -> int:
        # a pointer sitting in front of a deterministic run is equivalent to
        # one just past it; canonicalize so the level structure reads linearly
        if self.det_measure >= self.budget:
            return y
        while True:
            seg = self.segment_at(y)
            if not seg.det or seg.start != y:
                return y
            y = seg.end % self.budget

    def k_min(self):
        ks = [s.k for s in self.segments if not s.det]
        return min(ks) if ks else None

    def k_property_holds(self) -> bool:
        kmin = self.k_min()
        if kmin is None:
            return True
        for seg in self.segments:
            if seg.det:
                continue
            if seg.k == kmin:
                if seg.start < self.y_star:
                    return False
            elif seg.k == kmin + 1:
                if seg.end > self.y_star:
                    return False
            else:
                return False
        return True

    def dump(self) -> str:
        rows: list[list] = []
        for s in self.segments:
            label = "DET" if s.det else str(s.k)
            if rows and rows[-1][2] == label:
                rows[-1][1] = s.end
            else:
                rows.append([s.start, s.end, label])
        lines = [f"{a}..{b} k={c}" for a, b, c in rows]
        lines.append(f"y*={self.y_star}")
        return "\n".join(lines)


def next_subset(state: AdvertiserPanorama, b: int) -> Subset:
    return state.next_subset(b)


def commit(state: AdvertiserPanorama, subset: Sequence[Interval], kind: str, **kw) -> AdvertiserPanorama:
    state.commit(subset, kind, **kw)
    return state
