"""Manifolds with corners as finite atlases of rectangular charts.

Charts are boxes in canonical coordinates; periodic axes make circles,
tori and cylinders out of the same machinery.  Chart coordinates are the
canonical coordinates lifted into the chart window (so transitions are
exact shifts by multiples of the period), and a face of the window is
either true manifold boundary (a corner face) or interior overlap with
another chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfOverlap
from .regions import Ball, Box, Interval, PrimSet

__all__ = ["Chart", "Atlas", "Region", "builtin_manifold", "transition_point",
           "region_ops", "sample_grid", "MANIFOLD_CATALOG", "full_region",
           "empty_region", "box_region", "ball_region",
           "region_from_chart_prims", "product_with_interval", "chart_grid"]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Chart:
    """Rectangular chart window in lifted canonical coordinates."""

    id: int
    lo: tuple            # window corner (lifted coords)
    hi: tuple
    corner_lo: tuple     # per axis: is the lo face manifold boundary
    corner_hi: tuple

    @property
    def dim(self):
        return len(self.lo)

    def window_box(self, periods, pad=0.0):
        axes = []
        for k in range(self.dim):
            lo = self.lo[k] - (pad if not self.corner_lo[k] else 0.0)
            hi = self.hi[k] + (pad if not self.corner_hi[k] else 0.0)
            axes.append(Interval(lo, hi - lo))
        return Box(tuple(axes))

    @property
    def corner_faces(self):
        faces = []
        for k in range(self.dim):
            if self.corner_lo[k]:
                faces.append((k, "lo"))
            if self.corner_hi[k]:
                faces.append((k, "hi"))
        return faces


@dataclass(frozen=True)
class Atlas:
    id: str
    dim: int
    periods: tuple            # per axis: None or period
    charts: tuple

    def canonical(self, pts):
        """Chart (lifted) coords -> canonical coords."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
        for k, p in enumerate(self.periods):
            if p is not None:
                y = np.mod(pts[:, k], p)
                pts[:, k] = np.where(y >= p, y - p, y)
        return pts

    def lift(self, chart_id, cpts):
        """Canonical coords -> chart coords (lift into the chart window)."""
        c = self.charts[chart_id]
        cpts = np.atleast_2d(np.asarray(cpts, dtype=float)).copy()
        for k, p in enumerate(self.periods):
            if p is not None:
                t = np.mod(cpts[:, k] - c.lo[k], p)
                t = np.where(t >= p, t - p, t)
                cpts[:, k] = c.lo[k] + t
        return cpts

    def chart_contains(self, chart_id, cpts, pad=0.0):
        """Membership of canonical points in the (closed) chart window."""
        c = self.charts[chart_id]
        x = self.lift(chart_id, cpts)
        ok = np.ones(x.shape[0], dtype=bool)
        for k in range(self.dim):
            lo = c.lo[k] - (pad if not c.corner_lo[k] else 0.0)
            hi = c.hi[k] + (pad if not c.corner_hi[k] else 0.0)
            if self.periods[k] is not None:
                # the lift lands in [lo_k, lo_k + p); window must catch it
                ok &= x[:, k] <= hi
            else:
                ok &= (x[:, k] >= lo) & (x[:, k] <= hi)
        return ok

    def owner_chart(self, cpts):
        """Lowest chart id containing each canonical point (-1 if none)."""
        cpts = np.atleast_2d(np.asarray(cpts, dtype=float))
        owner = np.full(cpts.shape[0], -1, dtype=int)
        for c in self.charts:
            mask = (owner < 0) & self.chart_contains(c.id, cpts)
            owner[mask] = c.id
        return owner

    def overlap_charts(self, chart_id, cpts):
        """For chart points, which other charts contain them."""
        cc = self.canonical(cpts)
        return {c.id: self.chart_contains(c.id, cc)
                for c in self.charts if c.id != chart_id}


@dataclass(frozen=True)
class Region:
    """Atlas-level region: one canonical PrimSet, viewed per chart."""

    atlas: Atlas
    prims: PrimSet

    def contains_canonical(self, cpts):
        return self.prims.contains(cpts)

    def contains_chart(self, chart_id, xpts):
        return self.prims.contains(self.atlas.canonical(xpts))

    def is_empty(self):
        return self.prims.is_empty()

    def chart_view(self, chart_id, pad=0.5):
        """Primitives lifted into chart coordinates (unclipped; every
        periodic copy that touches the padded window is emitted)."""
        chart = self.atlas.charts[chart_id]
        out = []
        for p in self.prims.prims:
            if p.is_empty():
                continue
            out.extend(_lift_prim(p, chart, self.atlas.periods, pad))
        return PrimSet(tuple(None for _ in self.atlas.periods), tuple(out))

    def _wrap(self, prims):
        return Region(self.atlas, prims)

    def union(self, other):
        return self._wrap(self.prims.union(other.prims))

    def intersect(self, other):
        return self._wrap(self.prims.intersect(other.prims))

    def difference(self, other):
        return self._wrap(self.prims.difference(other.prims))

    def closure(self):
        return self._wrap(self.prims.closure())

    def shrink(self, m):
        out = self._wrap(self.prims.shrink(m))
        object.__setattr__(out, "shrink_emptied",
                           getattr(out.prims, "shrink_emptied", False))
        return out

    def expand(self, m):
        return self._wrap(self.prims.expand(m))

    def contains_region(self, other):
        return self.prims.contains_set(other.prims)


def _lift_prim(p, chart, periods, pad):
    """All lifted copies of a canonical primitive touching the chart window."""
    dim = len(periods)
    win_lo = [chart.lo[k] - pad for k in range(dim)]
    win_hi = [chart.hi[k] + pad for k in range(dim)]
    shift_sets = []
    for k, per in enumerate(periods):
        if per is None:
            shift_sets.append([0.0])
            continue
        if isinstance(p, Box):
            lo, w = p.axes[k].lo, p.axes[k].width
        else:
            lo, w = p.center[k] - p.radius, 2.0 * p.radius
        shifts = []
        n0 = int(np.floor((win_lo[k] - (lo + w)) / per)) - 1
        n1 = int(np.ceil((win_hi[k] - lo) / per)) + 1
        for n in range(n0, n1 + 1):
            if lo + n * per <= win_hi[k] and lo + w + n * per >= win_lo[k]:
                shifts.append(n * per)
        shift_sets.append(shifts)
    combos = [()]
    for shifts in shift_sets:
        combos = [c + (s,) for c in combos for s in shifts]
    out = []
    for combo in combos:
        if isinstance(p, Box):
            axes = tuple(
                Interval(p.axes[k].lo + combo[k], p.axes[k].width,
                         p.axes[k].lo_open, p.axes[k].hi_open)
                for k in range(dim))
            out.append(Box(axes))
        else:
            out.append(Ball(tuple(p.center[k] + combo[k] for k in range(dim)),
                            p.radius, p.open_flag))
    return out


# ---------------------------------------------------------------------------
# catalog

_CIRCLE_OVERLAP = 0.4  # chart windows overlap by this much on each seam


def _interval_atlas():
    chart = Chart(0, (0.0,), (1.0,), (True,), (True,))
    return Atlas("interval", 1, (None,), (chart,))


def _square_atlas():
    chart = Chart(0, (0.0, 0.0), (1.0, 1.0), (True, True), (True, True))
    return Atlas("square", 2, (None, None), (chart,))


def _circle_charts(axis_offset=0):
    d = _CIRCLE_OVERLAP
    return [((0.0,), (np.pi + d,)), ((np.pi,), (TWO_PI + d,))]


def _circle_atlas():
    wins = _circle_charts()
    charts = tuple(Chart(i, lo, hi, (False,), (False,))
                   for i, (lo, hi) in enumerate(wins))
    return Atlas("circle", 1, (TWO_PI,), charts)


def _torus_atlas():
    wins = _circle_charts()
    charts = []
    for a, (alo, ahi) in enumerate(wins):
        for b, (blo, bhi) in enumerate(wins):
            charts.append(Chart(2 * a + b, (alo[0], blo[0]), (ahi[0], bhi[0]),
                                (False, False), (False, False)))
    return Atlas("torus", 2, (TWO_PI, TWO_PI), tuple(charts))


def _cylinder_atlas():
    wins = _circle_charts()
    charts = tuple(
        Chart(i, (0.0, lo[0]), (1.0, hi[0]), (True, False), (True, False))
        for i, (lo, hi) in enumerate(wins))
    return Atlas("cylinder", 2, (None, TWO_PI), charts)


MANIFOLD_CATALOG = {
    "interval": (_interval_atlas, "unit interval [0,1]; one chart, two corner faces"),
    "square": (_square_atlas, "unit square [0,1]^2; one chart, boundary edges"),
    "circle": (_circle_atlas, "circle of circumference 2*pi; two angle charts"),
    "torus": (_torus_atlas, "2-torus; four angle charts"),
    "cylinder": (_cylinder_atlas, "[0,1] x circle; two charts with corner faces"),
}


def builtin_manifold(name, params=None):
    """Catalog atlas by name; params must be empty (geometry is pinned)."""
    if name not in MANIFOLD_CATALOG:
        raise InvalidArgument(f"unknown manifold id {name!r}; "
                              f"choices: {sorted(MANIFOLD_CATALOG)}")
    if params:
        raise InvalidArgument(f"manifold {name!r} takes no parameters")
    return MANIFOLD_CATALOG[name][0]()


def product_with_interval(atlas: Atlas, new_id=None):
    """[0,1] x M atlas (time axis prepended, with corner faces)."""
    charts = tuple(
        Chart(c.id, (0.0,) + c.lo, (1.0,) + c.hi,
              (True,) + c.corner_lo, (True,) + c.corner_hi)
        for c in atlas.charts)
    return Atlas(new_id or f"interval_x_{atlas.id}", atlas.dim + 1,
                 (None,) + atlas.periods, charts)


# ---------------------------------------------------------------------------
# operations

def transition_point(atlas: Atlas, from_chart, to_chart, x):
    """Coordinate change between overlapping charts; exact shift maps."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if from_chart == to_chart:
        raise InvalidArgument("transition requires two distinct charts")
    cpts = atlas.canonical(x)
    if not atlas.chart_contains(from_chart, cpts).all():
        raise OutOfOverlap(f"point not in chart {from_chart}")
    if not atlas.chart_contains(to_chart, cpts).all():
        raise OutOfOverlap(
            f"point not in overlap of charts {from_chart} and {to_chart}")
    return atlas.lift(to_chart, cpts)


def region_ops(a: Region, b: Region, op, margin=None):
    """Set algebra on regions of one atlas."""
    if op in ("union", "intersection", "difference") and (
            b is None or a.atlas is not b.atlas):
        raise InvalidArgument("region operands must share an atlas")
    if op == "union":
        return a.union(b)
    if op == "intersection":
        return a.intersect(b)
    if op == "difference":
        return a.difference(b)
    if op == "closure":
        return a.closure()
    if op == "shrink":
        if margin is None:
            raise InvalidArgument("shrink needs a margin")
        return a.shrink(margin)
    raise InvalidArgument(f"unknown region op {op!r}")


def full_region(atlas: Atlas):
    """The whole manifold as a region (union of closed chart windows)."""
    prims = []
    for c in atlas.charts:
        axes = tuple(Interval(c.lo[k], c.hi[k] - c.lo[k])
                     for k in range(atlas.dim))
        prims.append(Box(axes))
    return Region(atlas, PrimSet(atlas.periods, tuple(prims)))


def empty_region(atlas: Atlas):
    return Region(atlas, PrimSet(atlas.periods, ()))


def box_region(atlas: Atlas, lo, hi, open_flag=False):
    """Region from one box in canonical coordinates (mayexceed the chart
    windows; periodic axes wrap)."""
    axes = []
    for k in range(atlas.dim):
        w = float(hi[k]) - float(lo[k])
        p = atlas.periods[k]
        l = float(lo[k])
        if p is not None:
            if w > p or (w == p and not open_flag):
                axes.append(Interval(0.0, p))
                continue
            # w == p with open ends is the circle minus one point
            l = float(np.mod(l, p))
            w = min(w, p)
        axes.append(Interval(l, w, open_flag, open_flag))
    return Region(atlas, PrimSet(atlas.periods, (Box(tuple(axes)),)))


def ball_region(atlas: Atlas, center, radius, open_flag=True):
    return Region(atlas, PrimSet(
        atlas.periods,
        (Ball(tuple(float(c) for c in center), float(radius), open_flag),)))


def region_from_chart_prims(atlas: Atlas, prims: PrimSet):
    """Canonicalize chart-local box primitives into an atlas Region.

    Chart coordinates are lifted canonical coordinates, so a chart-local
    box maps to the canonical box with the same extents (wrapped)."""
    out = []
    for p in prims.prims:
        if p.is_empty():
            continue
        if not isinstance(p, Box):
            raise InvalidArgument("only box primitives can be canonicalized")
        axes = []
        for k, per in enumerate(atlas.periods):
            iv = p.axes[k]
            if per is not None and iv.width < per:
                axes.append(Interval(float(np.mod(iv.lo, per)), iv.width,
                                     iv.lo_open, iv.hi_open))
            elif per is not None:
                axes.append(Interval(0.0, per))
            else:
                axes.append(iv)
        out.append(Box(tuple(axes)))
    return Region(atlas, PrimSet(atlas.periods, tuple(out)))


def chart_grid(atlas: Atlas, chart_id, res):
    """Uniform closed grid over one chart window, in chart coords."""
    c = atlas.charts[chart_id]
    axes = [np.linspace(c.lo[k], c.hi[k], res[k]) for k in range(atlas.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_grid(atlas: Atlas, res):
    """Deterministic uniform grid per chart, deduplicated by lowest owner.

    Returns a list of (chart_id, points) with points in chart coordinates.
    """
    if np.isscalar(res):
        res = (int(res),) * atlas.dim
    res = tuple(int(r) for r in res)
    if any(r < 2 for r in res):
        raise InvalidArgument("grid resolution must be >= 2 per axis")
    out = []
    for c in atlas.charts:
        pts = chart_grid(atlas, c.id, res)
        owner = atlas.owner_chart(atlas.canonical(pts))
        keep = owner == c.id
        out.append((c.id, pts[keep]))
    return out
