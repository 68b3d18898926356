"""Axis-aligned set algebra in canonical manifold coordinates.

Regions are finite unions of boxes and balls.  Each axis is either linear
or periodic (period p); a periodic axis interval is stored as (lo, width)
with 0 <= lo < p and 0 < width <= p, so regions live on the quotient and
stay chart-consistent for free.  Boxes support exact union, intersection,
difference, closure, shrink and expand; balls support everything except
intersection and difference (never needed by the smoothing engine, which
carves boxes only).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "Interval",
    "Box",
    "Ball",
    "PrimSet",
    "box",
    "ball",
    "interval_box",
    "EMPTY",
]


def _wrap(x, period):
    """Reduce to [0, period); exact for values already in range."""
    y = np.mod(x, period)
    # np.mod can return period itself for tiny negatives; fold it back
    return np.where(y >= period, y - period, y)


@dataclass(frozen=True)
class Interval:
    """One axis of a box: [lo, lo+width] with endpoint openness flags.

    On a periodic axis `lo` is canonical (in [0, p)) and width <= p;
    width == p with both ends closed means the full circle.
    """

    lo: float
    width: float
    lo_open: bool = False
    hi_open: bool = False

    @property
    def hi(self):
        return self.lo + self.width

    def is_empty(self):
        if self.width < 0.0:
            return True
        return self.width == 0.0 and (self.lo_open or self.hi_open)

    def is_full(self, period):
        # an open interval of exactly one period is the complement of a
        # point, not the full circle
        return (period is not None and self.width >= period
                and not (self.lo_open or self.hi_open))

    def contains(self, x, period=None):
        """Vectorized membership. `x` in canonical coords for periodic axes."""
        if self.is_empty():
            return np.zeros(np.shape(x), dtype=bool)
        if period is not None:
            if self.is_full(period):
                return np.ones(np.shape(x), dtype=bool)
            t = _wrap(np.asarray(x, dtype=float) - self.lo, period)
            w = min(self.width, period)
            lo_ok = (t > 0.0) if self.lo_open else (t >= 0.0)
            hi_ok = (t < w) if self.hi_open else (t <= w)
            return lo_ok & hi_ok
        x = np.asarray(x, dtype=float)
        lo_ok = (x > self.lo) if self.lo_open else (x >= self.lo)
        hi_ok = (x < self.hi) if self.hi_open else (x <= self.hi)
        return lo_ok & hi_ok

    def shrink(self, m):
        return Interval(self.lo + m, self.width - 2.0 * m, self.lo_open, self.hi_open)

    def expand(self, m, period=None):
        w = self.width + 2.0 * m
        lo = self.lo - m
        if period is not None:
            if w >= period:
                return Interval(0.0, period)
            lo = float(_wrap(lo, period))
        return Interval(lo, w, self.lo_open, self.hi_open)

    def closure(self):
        return Interval(self.lo, self.width, False, False)


def _lift_shifts(a: Interval, b: Interval, period):
    """Real-line copies of `b` overlapping `a`'s frame [a.lo, a.hi]."""
    if period is None:
        return [b]
    out = []
    base = a.lo + ((b.lo - a.lo) % period)
    for s in (base - period, base, base + period):
        if s + b.width >= a.lo and s <= a.hi:
            out.append(Interval(s, b.width, b.lo_open, b.hi_open))
    return out


def _ivl_intersect_line(a: Interval, b: Interval):
    """Intersection of two real-line intervals (no wrap)."""
    lo, lo_open = (a.lo, a.lo_open)
    if b.lo > lo or (b.lo == lo and b.lo_open):
        lo, lo_open = b.lo, b.lo_open
    hi, hi_open = (a.hi, a.hi_open)
    if b.hi < hi or (b.hi == hi and b.hi_open):
        hi, hi_open = b.hi, b.hi_open
    r = Interval(lo, hi - lo, lo_open, hi_open)
    return None if r.is_empty() else r


def _ivl_diff_line(a: Interval, b: Interval):
    """a minus b on the real line -> list of pieces of a."""
    mid = _ivl_intersect_line(a, b)
    if mid is None:
        return [a]
    out = []
    left = Interval(a.lo, mid.lo - a.lo, a.lo_open, not mid.lo_open)
    if not left.is_empty():
        out.append(left)
    right = Interval(mid.hi, a.hi - mid.hi, not mid.hi_open, a.hi_open)
    if not right.is_empty():
        out.append(right)
    return out


def _canon_interval(iv: Interval, period):
    if period is None:
        return iv
    if iv.width >= period and not (iv.lo_open or iv.hi_open):
        return Interval(0.0, period)
    lo = iv.lo % period
    if lo >= period:
        lo -= period
    return Interval(lo, min(iv.width, period), iv.lo_open, iv.hi_open)


def ivl_intersect(a: Interval, b: Interval, period):
    """Intersection on a possibly periodic axis -> list of Intervals."""
    if a.is_empty() or b.is_empty():
        return []
    if period is not None and a.is_full(period):
        return [_canon_interval(b, period)]
    if period is not None and b.is_full(period):
        return [_canon_interval(a, period)]
    pieces = []
    for bl in _lift_shifts(a, b, period):
        r = _ivl_intersect_line(Interval(a.lo, a.width, a.lo_open, a.hi_open), bl)
        if r is not None:
            pieces.append(_canon_interval(r, period))
    return pieces


def ivl_difference(a: Interval, b: Interval, period):
    """a minus b on a possibly periodic axis -> list of Intervals."""
    if a.is_empty():
        return []
    if b.is_empty():
        return [a]
    if period is not None and b.is_full(period):
        return []
    parts = [Interval(a.lo, a.width, a.lo_open, a.hi_open)]
    if period is not None and a.is_full(period):
        # complement of b, then nothing more to subtract
        c = Interval(b.hi, period - b.width, not b.hi_open, not b.lo_open)
        return [] if c.is_empty() else [_canon_interval(c, period)]
    for bl in _lift_shifts(a, b, period):
        nxt = []
        for p in parts:
            nxt.extend(_ivl_diff_line(p, bl))
        parts = nxt
    return [_canon_interval(p, period) for p in parts]


@dataclass(frozen=True)
class Box:
    axes: tuple  # tuple[Interval]

    @property
    def dim(self):
        return len(self.axes)

    def is_empty(self):
        return any(iv.is_empty() for iv in self.axes)

    def contains(self, pts, periods):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = np.ones(pts.shape[0], dtype=bool)
        for k, iv in enumerate(self.axes):
            ok &= iv.contains(pts[:, k], periods[k])
        return ok

    def shrink(self, m):
        return Box(tuple(iv.shrink(m) for iv in self.axes))

    def expand(self, m, periods):
        return Box(tuple(iv.expand(m, periods[k]) for k, iv in enumerate(self.axes)))

    def closure(self):
        return Box(tuple(iv.closure() for iv in self.axes))

    def center(self):
        return np.array([iv.lo + 0.5 * iv.width for iv in self.axes])


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float
    open_flag: bool = True

    @property
    def dim(self):
        return len(self.center)

    def is_empty(self):
        return self.radius < 0.0 or (self.radius == 0.0 and self.open_flag)

    def contains(self, pts, periods):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d2 = np.zeros(pts.shape[0])
        for k, c in enumerate(self.center):
            dx = pts[:, k] - c
            if periods[k] is not None:
                p = periods[k]
                dx = _wrap(dx + 0.5 * p, p) - 0.5 * p
            d2 += dx * dx
        r2 = self.radius * self.radius
        return (d2 < r2) if self.open_flag else (d2 <= r2)

    def shrink(self, m):
        return Ball(self.center, self.radius - m, self.open_flag)

    def expand(self, m, periods=None):
        return Ball(self.center, self.radius + m, self.open_flag)

    def closure(self):
        return Ball(self.center, self.radius, False)


def _boxes_disjoint(a: Box, b: Box, periods):
    """Cheap conservative disjointness test (False means maybe-overlap)."""
    for k, per in enumerate(periods):
        ia, ib = a.axes[k], b.axes[k]
        if per is None:
            if ia.lo > ib.lo + ib.width or ib.lo > ia.lo + ia.width:
                return True
        else:
            if ia.width >= per or ib.width >= per:
                continue
            if ((ib.lo - ia.lo) % per) > ia.width and \
               ((ia.lo - ib.lo) % per) > ib.width:
                return True
    return False


def box_intersect(a: Box, b: Box, periods):
    """Exact box intersection -> list of boxes (wrap can split an axis)."""
    per_axis = []
    for k in range(a.dim):
        pieces = ivl_intersect(a.axes[k], b.axes[k], periods[k])
        if not pieces:
            return []
        per_axis.append(pieces)
    out = [Box(())]
    for pieces in per_axis:
        out = [Box(bx.axes + (iv,)) for bx in out for iv in pieces]
    return out


def box_difference(a: Box, b: Box, periods):
    """Exact a minus b -> list of boxes (classic axis carve)."""
    inter = box_intersect(a, b, periods)
    if not inter:
        return [a]
    out = [a]
    for piece in inter:
        nxt = []
        for bx in out:
            nxt.extend(_box_diff_single(bx, piece, periods))
        out = nxt
    return out


def _box_diff_single(a: Box, b: Box, periods):
    # b is assumed to be a sub-box of a on every axis modulo wrap
    out = []
    rest = a
    for k in range(a.dim):
        for side in ivl_difference(rest.axes[k], b.axes[k], periods[k]):
            out.append(Box(rest.axes[:k] + (side,) + rest.axes[k + 1:]))
        mids = ivl_intersect(rest.axes[k], b.axes[k], periods[k])
        if not mids:
            return out
        if len(mids) > 1:
            # wrap split: recurse on each middle piece
            for mid in mids[1:]:
                out.extend(_box_diff_single(
                    Box(rest.axes[:k] + (mid,) + rest.axes[k + 1:]), b, periods))
        rest = Box(rest.axes[:k] + (mids[0],) + rest.axes[k + 1:])
    return out


@dataclass(frozen=True)
class PrimSet:
    """Finite union of boxes and balls on a fixed axis structure."""

    periods: tuple  # per-axis: None or float period
    prims: tuple = field(default_factory=tuple)

    @property
    def dim(self):
        return len(self.periods)

    def is_empty(self):
        return all(p.is_empty() for p in self.prims)

    def boxes_only(self):
        return all(isinstance(p, Box) for p in self.prims)

    def contains(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = np.zeros(pts.shape[0], dtype=bool)
        for p in self.prims:
            if not p.is_empty():
                ok |= p.contains(pts, self.periods)
        return ok

    def union(self, other: "PrimSet"):
        return PrimSet(self.periods, self.prims + other.prims)

    def _require_boxes(self, op):
        if not (self.boxes_only()):
            raise InvalidArgument(
                f"region {op} is only supported for box regions (balls present)")

    def intersect(self, other: "PrimSet"):
        self._require_boxes("intersection")
        other._require_boxes("intersection")
        out = []
        for a in self.prims:
            for b in other.prims:
                out.extend(box_intersect(a, b, self.periods))
        return PrimSet(self.periods, tuple(bx for bx in out if not bx.is_empty()))

    def difference(self, other: "PrimSet"):
        self._require_boxes("difference")
        other._require_boxes("difference")
        parts = [p for p in self.prims if not p.is_empty()]
        for b in other.prims:
            if b.is_empty():
                continue
            nxt = []
            for a in parts:
                if _boxes_disjoint(a, b, self.periods):
                    nxt.append(a)
                else:
                    nxt.extend(box_difference(a, b, self.periods))
            parts = nxt
        return PrimSet(self.periods, tuple(p for p in parts if not p.is_empty()))

    def closure(self):
        return PrimSet(self.periods, tuple(p.closure() for p in self.prims))

    def shrink(self, m):
        """Contract every primitive by m; emptied primitives are dropped
        and the result carries shrink_emptied=True on the returned set."""
        prims = tuple(p.shrink(m) for p in self.prims)
        kept = tuple(p for p in prims if not p.is_empty())
        out = PrimSet(self.periods, kept)
        object.__setattr__(out, "shrink_emptied", len(kept) < len(prims))
        return out

    def expand(self, m):
        return PrimSet(self.periods, tuple(
            p.expand(m, self.periods) for p in self.prims))

    def contains_set(self, other: "PrimSet"):
        """Exact subset test other <= self (box regions only)."""
        return other.difference(self).is_empty()

    def bounding_box(self):
        """Enclosing box of all primitives, in lifted (non-wrapped) coords."""
        los, his = [], []
        for k in range(self.dim):
            axis_lo, axis_hi = [], []
            for p in self.prims:
                if p.is_empty():
                    continue
                if isinstance(p, Box):
                    axis_lo.append(p.axes[k].lo)
                    axis_hi.append(p.axes[k].hi)
                else:
                    axis_lo.append(p.center[k] - p.radius)
                    axis_hi.append(p.center[k] + p.radius)
            if not axis_lo:
                return None
            los.append(min(axis_lo))
            his.append(max(axis_hi))
        return np.array(los), np.array(his)


def interval_box(lo, hi, lo_open=False, hi_open=False):
    """1-D interval as a Box axis tuple helper."""
    return Interval(float(lo), float(hi) - float(lo), lo_open, hi_open)


def box(periods, los, his, open_flag=False):
    """Box PrimSet from corner arrays; open_flag opens every face."""
    axes = tuple(
        Interval(float(lo), float(hi) - float(lo), open_flag, open_flag)
        for lo, hi in zip(los, his))
    return PrimSet(tuple(periods), (Box(axes),))


def ball(periods, center, radius, open_flag=True):
    return PrimSet(tuple(periods), (Ball(tuple(float(c) for c in center),
                                         float(radius), open_flag),))


def EMPTY(periods):
    return PrimSet(tuple(periods), ())
