"""Locally trivial smooth bundles: trivializing covers, fibre charts onto
convex sets, sections with per-trivialization representatives, and
graph-tube neighbourhoods.

Fibre values are stored raw (angles unwrapped for circle fibres); the
fibre metric and fibre-chart lifts are wrap-aware, so representatives stay
continuous within each chart and compatible across trivializations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, SeamMismatch
from .fields import ChartField, _full_set
from .manifold import (Atlas, Region, builtin_manifold, chart_grid,
                       full_region, product_with_interval, sample_grid)
from .regions import Box, Interval, PrimSet

__all__ = ["FibreChart", "Trivialization", "Bundle", "Section",
           "FormulaSection", "GluedSection", "Tube", "section_to_fibre_field",
           "fibre_field_to_section", "tube_contains", "builtin_bundle",
           "BUNDLE_CATALOG"]

TWO_PI = 2.0 * np.pi


def _wrap_pm_pi(x):
    """Angle difference folded to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    y = x - TWO_PI * np.floor(x / TWO_PI + 0.5)
    return np.where(y <= -np.pi, y + TWO_PI, y)


@dataclass(frozen=True)
class FibreChart:
    """Chart from an open fibre subset onto a convex set (box or interval
    of angles); `kind` is "euclidean" (identity) or "angle" (lift)."""

    id: int
    kind: str
    center: tuple = (0.0,)
    halfwidth: float = np.inf

    def lift(self, vals):
        """Fibre values -> convex chart coordinates (continuous near center)."""
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
        if self.kind == "euclidean":
            return vals
        c = self.center[0]
        return c + _wrap_pm_pi(vals[:, 0] - c)[:, None]

    def unlift(self, zvals):
        """Chart coordinates -> fibre values (identity; angles stay raw)."""
        return np.atleast_2d(np.asarray(zvals, dtype=float))

    def fits(self, vals, margin=0.0):
        """Do fibre values lie in this chart's subset with the margin?"""
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
        if self.kind == "euclidean":
            return np.full(vals.shape[0], self.halfwidth == np.inf) | np.all(
                np.abs(vals - np.asarray(self.center)) < self.halfwidth - margin,
                axis=1)
        d = np.abs(_wrap_pm_pi(vals[:, 0] - self.center[0]))
        return d < self.halfwidth - margin

    def boundary_slack(self, zvals):
        """Distance from chart coordinates to the convex set boundary."""
        if self.halfwidth == np.inf:
            return np.full(np.atleast_2d(zvals).shape[0], np.inf)
        z = np.atleast_2d(np.asarray(zvals, dtype=float))
        return self.halfwidth - np.max(np.abs(z - np.asarray(self.center)), axis=1)

    def convex_box(self):
        axes = tuple(Interval(c - self.halfwidth, 2 * self.halfwidth)
                     for c in self.center)
        return Box(axes)


@dataclass(frozen=True)
class Trivialization:
    index: int
    chart_ids: tuple


@dataclass(frozen=True)
class Bundle:
    id: str
    base: Atlas
    fibre_dim: int
    fibre_kind: str          # "linear" or "circle"
    trivs: tuple
    fibre_charts: tuple
    transition_name: str     # "identity" or "mobius"
    angle_axis: int = 0      # base axis carrying the gluing angle

    def fibre_transition(self, i, j, cpts, vals):
        """Fibre coordinate change between trivializations at base points
        (canonical coordinates)."""
        vals = np.atleast_2d(np.asarray(vals, dtype=float))
        if i == j or self.transition_name == "identity":
            return vals
        if self.transition_name == "mobius":
            # overlap components of the two circle charts: near angle pi the
            # gluing is +1, near angle 0 it is -1
            cpts = np.atleast_2d(np.asarray(cpts, dtype=float))
            flip = np.abs(_wrap_pm_pi(cpts[:, self.angle_axis])) < 0.5 * np.pi
            return np.where(flip[:, None], -vals, vals)
        raise InvalidArgument(f"unknown transition {self.transition_name!r}")

    def fibre_distance(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if self.fibre_kind == "circle":
            return np.abs(_wrap_pm_pi(a[:, 0] - b[:, 0]))
        return np.linalg.norm(a - b, axis=1)

    def triv_for_chart(self, chart_id):
        for t in self.trivs:
            if chart_id in t.chart_ids:
                return t.index
        raise InvalidArgument(f"no trivialization covers chart {chart_id}")

    def base_region(self, triv_index) -> Region:
        t = self.trivs[triv_index]
        prims = []
        for cid in t.chart_ids:
            c = self.base.charts[cid]
            axes = tuple(Interval(c.lo[k], c.hi[k] - c.lo[k])
                         for k in range(self.base.dim))
            prims.append(Box(axes))
        from .manifold import region_from_chart_prims
        return region_from_chart_prims(
            self.base, PrimSet(self.base.periods, tuple(prims)))


# ---------------------------------------------------------------------------
# sections

class Section:
    """Section of a bundle, represented per (trivialization, chart)."""

    def __init__(self, bundle: Bundle, smooth_region: Region):
        self.bundle = bundle
        self.smooth_region = smooth_region
        self._reps = {}

    def rep(self, triv_index, chart_id) -> ChartField:
        key = (triv_index, chart_id)
        if key not in self._reps:
            self._reps[key] = self._build_rep(triv_index, chart_id)
        return self._reps[key]

    def _build_rep(self, triv_index, chart_id):
        raise NotImplementedError

    def values(self, triv_index, chart_id, xpts):
        return self.rep(triv_index, chart_id)(xpts)

    def compatibility_worst(self, res=33):
        """Worst fibre mismatch across trivialization overlaps on a grid."""
        b = self.bundle
        worst = 0.0
        for cid, pts in sample_grid(b.base, res):
            cpts = b.base.canonical(pts)
            trivs = [t.index for t in b.trivs if cid in t.chart_ids]
            for i in trivs:
                vi = self.values(i, cid, pts)
                for j in trivs:
                    if j <= i:
                        continue
                    vj = self.values(j, cid, pts)
                    moved = b.fibre_transition(i, j, cpts, vi)
                    worst = max(worst, float(np.max(b.fibre_distance(moved, vj)))
                                if pts.shape[0] else 0.0)
            # cross-chart agreement within one trivialization
            for ocid, mask in b.base.overlap_charts(cid, pts).items():
                if not np.any(mask):
                    continue
                opts = b.base.lift(ocid, cpts[mask])
                for i in trivs:
                    if ocid not in b.trivs[i].chart_ids:
                        continue
                    va = self.values(i, cid, pts[mask])
                    vb = self.values(i, ocid, opts)
                    worst = max(worst, float(np.max(b.fibre_distance(va, vb))))
        return worst


class FormulaSection(Section):
    """Section given by one closed-form map on lifted chart coordinates.

    The formula is evaluated directly at chart coordinates (which are
    canonical coordinates lifted into the chart window), so twisted
    bundles are handled by formulas with the matching deck symmetry."""

    def __init__(self, bundle, fn, smooth_region, deriv_fn=None,
                 deriv_order=0):
        super().__init__(bundle, smooth_region)
        self.fn = fn
        self.deriv_fn = deriv_fn
        self.deriv_order = deriv_order

    def _build_rep(self, triv_index, chart_id):
        c = self.bundle.base.charts[chart_id]
        dom = Box(tuple(Interval(c.lo[k], c.hi[k] - c.lo[k])
                        for k in range(self.bundle.base.dim)))

        def fn(pts):
            out = np.asarray(self.fn(pts), dtype=float)
            return out[:, None] if out.ndim == 1 else out

        smooth = self.smooth_region.chart_view(chart_id, pad=1.0)
        return ChartField(dom, fn, m=self.bundle.fibre_dim, smooth=smooth,
                          deriv_order=self.deriv_order, deriv_fn=self.deriv_fn)


class GluedSection(Section):
    """Equal to a patch field over a gluing region, to a fallback outside."""

    def __init__(self, bundle, fallback: Section, triv_index, chart_id,
                 patch: ChartField, glue_region: Region, smooth_region: Region):
        super().__init__(bundle, smooth_region)
        self.fallback = fallback
        self.patch_triv = triv_index
        self.patch_chart = chart_id
        self.patch = patch
        self.glue_region = glue_region

    def _build_rep(self, triv_index, chart_id):
        b = self.bundle
        base = self.fallback.rep(triv_index, chart_id)

        def fn(pts):
            out = np.array(base(pts), copy=True)
            cpts = b.base.canonical(pts)
            mask = self.glue_region.contains_canonical(cpts)
            if np.any(mask):
                apts = b.base.lift(self.patch_chart, cpts[mask])
                vals = self.patch(apts)
                if triv_index != self.patch_triv:
                    vals = b.fibre_transition(self.patch_triv, triv_index,
                                              cpts[mask], vals)
                if b.fibre_kind == "circle":
                    # keep the representative on the fallback's angle branch
                    # (bit-exact where the patch agrees with the fallback)
                    vals = out[mask] + _wrap_pm_pi(vals - out[mask])
                out[mask] = vals
            return out

        return ChartField(base.domain, fn, m=b.fibre_dim,
                          smooth=self.smooth_region.chart_view(chart_id, pad=1.0),
                          eval_lo=base.eval_lo, eval_hi=base.eval_hi,
                          cache=True)


# ---------------------------------------------------------------------------
# tubes

@dataclass
class Tube:
    """Graph neighbourhood of a section: fibre-chart distance below the
    width field over every base point."""

    section: Section
    width_fn: object        # canonical base coords (n,d) -> (n,) widths

    def width(self, cpts):
        w = np.asarray(self.width_fn(np.atleast_2d(cpts)), dtype=float)
        return w.reshape(-1)


def section_to_fibre_field(bundle, section, triv_index, chart_id=None):
    """Local representative of a section in one trivialization/chart."""
    if chart_id is None:
        chart_id = bundle.trivs[triv_index].chart_ids[0]
    return section.rep(triv_index, chart_id)


def fibre_field_to_section(bundle, field, triv_index, chart_id, glue_region,
                           fallback, grid_res=65, seam_band=0.02,
                           smooth_region=None, seam_tol=1e-9):
    """Glue a fibre field over a region into a fallback section.

    The field must agree with the fallback's representative on a band
    inside the gluing-region boundary (checked on the grid)."""
    if glue_region.is_empty():
        return fallback
    base_rep = fallback.rep(triv_index, chart_id)
    if field is base_rep:
        return fallback
    pts = chart_grid(bundle.base, chart_id, (grid_res,) * bundle.base.dim)
    cpts = bundle.base.canonical(pts)
    inner = glue_region.shrink(seam_band)
    band = glue_region.contains_canonical(cpts) & ~inner.contains_canonical(cpts)
    if np.any(band):
        dv = bundle.fibre_distance(field(pts[band]), base_rep(pts[band]))
        worst = float(np.max(dv))
        if worst > seam_tol:
            raise SeamMismatch(
                f"gluing seam mismatch {worst:.3e} exceeds {seam_tol:g}")
    if smooth_region is None:
        smooth_region = fallback.smooth_region
    return GluedSection(bundle, fallback, triv_index, chart_id, field,
                        glue_region, smooth_region)


def tube_contains(tube: Tube, candidate, grid_res, time_grid=None):
    """Max over the grid of fibre distance(candidate, tube section)/width.

    `candidate` is a Section, or a homotopy when `time_grid` is given.
    Returns a report dict with the max ratio and its location."""
    b = tube.section.bundle
    slices = [(None, candidate)] if time_grid is None else [
        (float(t), candidate.slice(float(t))) for t in time_grid]
    worst = -1.0
    arg = None
    for tval, sec in slices:
        for cid, pts in sample_grid(b.base, grid_res):
            if pts.shape[0] == 0:
                continue
            cpts = b.base.canonical(pts)
            triv = b.triv_for_chart(cid)
            sv = tube.section.values(triv, cid, pts)
            cv = sec.values(triv, cid, pts)
            ratio = b.fibre_distance(cv, sv) / tube.width(cpts)
            i = int(np.argmax(ratio))
            if ratio[i] > worst:
                worst = float(ratio[i])
                arg = {"chart": cid, "point": pts[i].tolist(),
                       **({"t": tval} if tval is not None else {})}
    return {"max_ratio": worst, "argmax": arg, "contained": worst < 1.0}


# ---------------------------------------------------------------------------
# catalog

def _trivial_bundle(manifold_id, fibre_kind="linear"):
    base = builtin_manifold(manifold_id)
    triv = Trivialization(0, tuple(c.id for c in base.charts))
    if fibre_kind == "circle":
        charts = tuple(FibreChart(i, "angle", (c,), 0.75 * np.pi)
                       for i, c in enumerate(
                           (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)))
    else:
        charts = (FibreChart(0, "euclidean"),)
    return Bundle(f"{'trivial_line' if fibre_kind == 'linear' else 'circle_circle'}"
                  f"/{manifold_id}" if fibre_kind == "linear" else "circle_circle",
                  base, 1, fibre_kind, (triv,), charts, "identity")


def _mobius_bundle():
    base = builtin_manifold("circle")
    trivs = (Trivialization(0, (0,)), Trivialization(1, (1,)))
    charts = (FibreChart(0, "euclidean"),)
    return Bundle("mobius_line", base, 1, "linear", trivs, charts, "mobius")


BUNDLE_CATALOG = {
    "trivial_line": ("trivial line bundle M x R over the chosen manifold",
                     lambda mid: _trivial_bundle(mid, "linear")),
    "mobius_line": ("Moebius line bundle over the circle (sign-flip gluing)",
                    lambda mid: _mobius_bundle()),
    "circle_circle": ("trivial circle bundle S1 x S1 over the circle "
                      "(angle-interval fibre charts)",
                      lambda mid: _trivial_bundle("circle", "circle")),
}


def builtin_bundle(bundle_id, manifold_id=None):
    if bundle_id not in BUNDLE_CATALOG:
        raise InvalidArgument(f"unknown bundle id {bundle_id!r}; "
                              f"choices: {sorted(BUNDLE_CATALOG)}")
    if bundle_id == "mobius_line" and manifold_id not in (None, "circle"):
        raise InvalidArgument("mobius_line is a bundle over the circle")
    if bundle_id == "circle_circle" and manifold_id not in (None, "circle"):
        raise InvalidArgument("circle_circle is a bundle over the circle")
    return BUNDLE_CATALOG[bundle_id][1](manifold_id or "circle")


def pullback_over_time(bundle: Bundle) -> Bundle:
    """Pull back along the projection [0,1] x M -> M (time axis prepended)."""
    base = product_with_interval(bundle.base)
    trivs = tuple(Trivialization(t.index, t.chart_ids) for t in bundle.trivs)
    return Bundle(f"pullback/{bundle.id}", base, bundle.fibre_dim,
                  bundle.fibre_kind, trivs, bundle.fibre_charts,
                  bundle.transition_name, angle_axis=bundle.angle_axis + 1)
