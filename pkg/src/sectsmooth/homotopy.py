"""Homotopies between sections: per-step convex interpolations, uniform
concatenation, flat-end time reparametrization, base-point flattening, and
smoothing of homotopies through the pull-back bundle over [0,1] x M.

Time slices are Sections; slices at t = 0 and t = 1 are the endpoint
section objects themselves, so endpoint equalities are bit-exact by
construction.
"""

from __future__ import annotations

import numpy as np

from .bundle import (Bundle, GluedSection, Section, Tube, pullback_over_time)
from .errors import (ChartOverflow, ConcatMismatch, InvalidArgument,
                     NotSmoothEndpoints, SeamMismatch)
from .fields import ChartField, _gl, bump, smoothstep
from .manifold import Region, box_region, full_region, region_from_chart_prims
from .regions import Box, Interval, PrimSet

__all__ = ["Homotopy", "ConstantHomotopy", "StepHomotopy", "ConcatHomotopy",
           "ReparamHomotopy", "FormulaHomotopy", "step_homotopy",
           "concat_homotopies", "reparametrize_flat", "basepoint_flatten",
           "smooth_homotopy", "homotopy_to_cylinder_section",
           "cylinder_section_to_homotopy"]


class Homotopy:
    """Time-parametrized family of sections on [0,1] x M.

    `moved_region` is where slices may depend on t; its complement is the
    declared fixed region (kept as a union so concatenation stays cheap)."""

    def __init__(self, bundle: Bundle, moved_region: Region = None):
        self.bundle = bundle
        if moved_region is None:
            moved_region = Region(bundle.base, PrimSet(bundle.base.periods, ()))
        self.moved_region = moved_region
        self._slices = {}

    @property
    def fixed_region(self):
        return full_region(self.bundle.base).difference(self.moved_region)

    def slice(self, t) -> Section:
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise InvalidArgument("homotopy time must lie in [0,1]")
        if t not in self._slices:
            self._slices[t] = self._build_slice(t)
        return self._slices[t]

    def _build_slice(self, t):
        raise NotImplementedError


class ConstantHomotopy(Homotopy):
    def __init__(self, section: Section):
        super().__init__(section.bundle)
        self.section = section

    def _build_slice(self, t):
        return self.section


class StepHomotopy(Homotopy):
    """Convex interpolation between two fibre-chart fields over one patch,
    constant (the fallback section) outside it."""

    def __init__(self, bundle, g: ChartField, h: ChartField, triv, chart,
                 region: Region, fallback: Section, final: Section):
        super().__init__(bundle, region.closure())
        self.g, self.h = g, h
        self.triv, self.chart = triv, chart
        self.region = region
        self.fallback = fallback
        self.final = final

    def _build_slice(self, t):
        if t == 0.0:
            return self.fallback
        if t == 1.0:
            return self.final
        g, h = self.g, self.h

        def fn(pts, _t=t):
            return (1.0 - _t) * g(pts) + _t * h(pts)

        combo = ChartField(g.domain, fn, m=g.m, smooth=g.smooth,
                           eval_lo=g.eval_lo, eval_hi=g.eval_hi, cache=True)
        return GluedSection(self.bundle, self.fallback, self.triv, self.chart,
                            combo, self.region.closure(),
                            self.fallback.smooth_region)


class ConcatHomotopy(Homotopy):
    """Uniform time schedule over finitely many steps."""

    def __init__(self, steps):
        if not steps:
            raise InvalidArgument("need at least one homotopy to concatenate")
        moved = steps[0].moved_region
        for s in steps[1:]:
            moved = moved.union(s.moved_region)
        super().__init__(steps[0].bundle, moved)
        self.steps = list(steps)

    def _build_slice(self, t):
        k = len(self.steps)
        if t >= 1.0:
            return self.steps[-1].slice(1.0)
        u = t * k
        a = min(int(np.floor(u)), k - 1)
        return self.steps[a].slice(u - a)


class ReparamHomotopy(Homotopy):
    def __init__(self, inner: Homotopy, gamma):
        super().__init__(inner.bundle, inner.moved_region)
        self.inner = inner
        self.gamma = gamma

    def _build_slice(self, t):
        return self.inner.slice(self.gamma(t))


class FormulaHomotopy(Homotopy):
    """Homotopy from a closed-form map (t, lifted chart coords) -> fibre."""

    def __init__(self, bundle, fn, smooth_slices=True):
        super().__init__(bundle, full_region(bundle.base))
        self.fn = fn
        self.smooth_slices = smooth_slices

    def _build_slice(self, t):
        from .bundle import FormulaSection
        smooth = (full_region(self.bundle.base) if self.smooth_slices
                  else Region(self.bundle.base,
                              PrimSet(self.bundle.base.periods, ())))
        return FormulaSection(self.bundle,
                              lambda pts, _t=t: self.fn(_t, pts), smooth)


# ---------------------------------------------------------------------------
# operations

def step_homotopy(g, h, triv, chart, region: Region, fallback: Section,
                  final: Section, grid_res=65, seam_tol=1e-9):
    """Homotopy (1-t)g + t*h over the patch, fallback elsewhere."""
    b = fallback.bundle
    from .manifold import chart_grid
    pts = chart_grid(b.base, chart, (grid_res,) * b.base.dim)
    cpts = b.base.canonical(pts)
    outside = ~region.contains_canonical(cpts)
    inside_chart = b.base.chart_contains(chart, cpts)
    check = outside & inside_chart
    if np.any(check):
        dv = np.linalg.norm(g(pts[check]) - h(pts[check]), axis=1)
        worst = float(np.max(dv))
        if worst > seam_tol:
            raise SeamMismatch(
                f"interpolants differ by {worst:.3e} outside the patch")
    return StepHomotopy(b, g, h, triv, chart, region, fallback, final)


def concat_homotopies(steps, grid_res=33):
    """Concatenate step homotopies on uniform time subintervals."""
    steps = list(steps)
    for i, (a, b) in enumerate(zip(steps, steps[1:])):
        end = a.slice(1.0)
        start = b.slice(0.0)
        if end is start:
            continue
        from .verify import compare_sections
        cert = compare_sections(end, start, full_region(a.bundle.base),
                                mode="bitexact", grid_res=grid_res)
        if not cert.passed:
            raise ConcatMismatch(
                f"homotopy junction {i + 1} mismatch of {cert.worst_value:.3e}",
                junction=i + 1)
    return ConcatHomotopy(steps)


class FlatStep:
    """Pinned smooth monotone step: the normalized integral of a bump
    supported on [eps, 1-eps]; exactly 0 / 1/2 / 1 at t = eps, 1/2, 1-eps."""

    def __init__(self, eps):
        if not 0.0 < eps < 0.5:
            raise InvalidArgument("flat-end width must lie in (0, 1/2)")
        self.eps = float(eps)
        self.kernel = bump(0.5, 0.5 - self.eps)
        self.half_mass = self._integral(self.eps, 0.5)

    def _integral(self, a, b):
        x, w = _gl(32)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        pts = (mid + half * x).reshape(-1, 1)
        return float(half * np.dot(w, self.kernel(pts)[:, 0]))

    def __call__(self, t):
        t = float(t)
        if t <= self.eps:
            return 0.0
        if t >= 1.0 - self.eps:
            return 1.0
        if t == 0.5:
            return 0.5
        return self._integral(self.eps, t) / (2.0 * self.half_mass)


def reparametrize_flat(F: Homotopy, eps) -> Homotopy:
    """Precompose with the pinned flat step: constant slices on [0,eps]
    and [1-eps,1] (bit-exact, they are the endpoint slices)."""
    return ReparamHomotopy(F, FlatStep(eps))


def _fit_fibre_chart(bundle, vals, margin=0.0):
    for z in bundle.fibre_charts:
        if np.all(z.fits(vals, margin=margin)):
            return z
    raise ChartOverflow(
        "section image does not fit any single fibre chart on this patch")


def basepoint_flatten(sigma: Section, x0, lam: ChartField, grid_res=65):
    """Homotope a section to one constant near a base point.

    `x0` is (chart_id, coords); `lam` is a smooth weight in that chart,
    identically 1 near x0 and supported in a patch whose section image
    fits one fibre chart.  Returns (flattened section, homotopy G) with
    G(t, x0) = sigma(x0) bit-exactly for every t."""
    b = sigma.bundle
    chart_id, coords = x0
    triv = b.triv_for_chart(chart_id)
    support = getattr(lam, "support", None)
    if support is None:
        raise InvalidArgument("lam must carry a support region")
    u0_region = region_from_chart_prims(b.base, support.closure())
    from .manifold import chart_grid
    pts = chart_grid(b.base, chart_id, (grid_res,) * b.base.dim)
    mask = u0_region.contains_canonical(b.base.canonical(pts))
    rep = sigma.rep(triv, chart_id)
    z = _fit_fibre_chart(b, rep(pts[mask]) if mask.any() else rep(pts))
    x0_arr = np.asarray(coords, dtype=float).reshape(1, -1)
    z0 = z.lift(rep(x0_arr))[0]

    class _Flatten(Homotopy):
        def _build_slice(self, t):
            if t == 0.0:
                return sigma

            def fn(xpts, _t=t):
                f = z.lift(rep(xpts))
                w = _t * lam(xpts)[:, 0][:, None]
                out = f + w * (z0[None, :] - f)
                exact = (w == 0.0)[:, 0]
                if np.any(exact):
                    out[exact] = f[exact]
                return out

            patch = ChartField(rep.domain, fn, m=b.fibre_dim,
                               eval_lo=rep.eval_lo, eval_hi=rep.eval_hi,
                               cache=True)
            return GluedSection(b, sigma, triv, chart_id, patch,
                                u0_region.closure(), sigma.smooth_region)

    G = _Flatten(b, u0_region.closure())
    return G.slice(1.0), G


# ---------------------------------------------------------------------------
# homotopies as sections of the pull-back bundle, and back

class CylinderSection(Section):
    """A homotopy viewed as a section of the pull-back bundle over
    [0,1] x M (the time coordinate is axis 0 of the base)."""

    def __init__(self, pb_bundle, homotopy, smooth_region):
        super().__init__(pb_bundle, smooth_region)
        self.homotopy = homotopy

    def _build_rep(self, triv_index, chart_id):
        pb = self.bundle
        c = pb.base.charts[chart_id]
        dom = Box(tuple(Interval(c.lo[k], c.hi[k] - c.lo[k])
                        for k in range(pb.base.dim)))

        def fn(pts):
            out = np.empty((pts.shape[0], pb.fibre_dim))
            ts = np.clip(pts[:, 0], 0.0, 1.0)
            for t in np.unique(ts):
                m = ts == t
                sec = self.homotopy.slice(t)
                out[m] = sec.values(triv_index, chart_id, pts[m, 1:])
            return out

        return ChartField(dom, fn, m=pb.fibre_dim,
                          smooth=self.smooth_region.chart_view(chart_id, pad=1.0),
                          cache=True)


def homotopy_to_cylinder_section(F: Homotopy, pb_bundle, smooth_region):
    return CylinderSection(pb_bundle, F, smooth_region)


class _SliceOfCylinder(Section):
    def __init__(self, bundle, cyl_section, t):
        self.cyl = cyl_section
        self.t = float(t)
        sm = _drop_time_axis(bundle, cyl_section.smooth_region, self.t)
        super().__init__(bundle, sm)

    def _build_rep(self, triv_index, chart_id):
        b = self.bundle
        c = b.base.charts[chart_id]
        dom = Box(tuple(Interval(c.lo[k], c.hi[k] - c.lo[k])
                        for k in range(b.base.dim)))
        rep = self.cyl.rep(triv_index, chart_id)

        def fn(xpts, _t=self.t):
            pts = np.concatenate(
                [np.full((xpts.shape[0], 1), _t), xpts], axis=1)
            return rep(pts)

        return ChartField(dom, fn, m=b.fibre_dim,
                          smooth=self.smooth_region.chart_view(chart_id, pad=1.0),
                          cache=True)


def _drop_time_axis(bundle, region: Region, t):
    prims = []
    for p in region.prims.prims:
        if isinstance(p, Box) and p.axes[0].contains(t) and not p.is_empty():
            prims.append(Box(p.axes[1:]))
    return Region(bundle.base, PrimSet(bundle.base.periods, tuple(prims)))


class cylinder_section_to_homotopy(Homotopy):
    """Wrap a section of the pull-back bundle as a homotopy over M."""

    def __init__(self, bundle, cyl_section, moved_region=None):
        super().__init__(bundle, moved_region if moved_region is not None
                         else full_region(bundle.base))
        self.cyl = cyl_section

    def _build_slice(self, t):
        return _SliceOfCylinder(self.bundle, self.cyl, t)


# ---------------------------------------------------------------------------
# the homotopy smoothing pipeline

def smooth_homotopy(sigma: Section, tau: Section, f_cont: Homotopy,
                    tube: Tube, basepoint=None, *, eps=0.25,
                    cert_steps=(1e-2, 5e-3, 2.5e-3), cert_floor=1e-7,
                    cert_res=33, problem_overrides=None):
    """Replace a continuous homotopy between smooth sections by a smooth
    one with bit-exact endpoint slices, via smoothing of the associated
    section of the pull-back bundle over [0,1] x M.

    With `basepoint` = (chart_id, coords, lam_field), the output is also
    constant along [0,1] x {x0}."""
    from .smoothing import SmoothingProblem, steenrod_smooth
    from .verify import compare_sections, smoothness_certificate

    b = sigma.bundle
    for which, sec in (("start", sigma), ("end", tau)):
        t = 0.0 if which == "start" else 1.0
        cert = compare_sections(f_cont.slice(t), sec, full_region(b.base),
                                mode="tolerance", grid_res=cert_res)
        if cert.worst_value > 1e-12:
            raise InvalidArgument(
                f"homotopy {which} slice differs from the section by "
                f"{cert.worst_value:.3e}")
        sc = smoothness_certificate(sec, full_region(b.base),
                                    steps=cert_steps, grid_res=cert_res,
                                    floor=cert_floor)
        if not sc.passed:
            raise NotSmoothEndpoints(
                f"{which} section fails its smoothness certificate "
                f"(margin {sc.worst_value:.3e})")

    flat = reparametrize_flat(f_cont, eps)
    pb = pullback_over_time(b)
    band = 0.9 * eps
    smooth_region = (box_region(pb.base, [-1.0] + [-1e9] * b.base.dim,
                                [band] + [1e9] * b.base.dim, open_flag=True)
                     .union(box_region(pb.base, [1.0 - band] + [-1e9] * b.base.dim,
                                       [2.0] + [1e9] * b.base.dim,
                                       open_flag=True)))
    sigma_cyl = CylinderSection(pb, flat, smooth_region)

    u_cyl = box_region(pb.base, [0.0] + [-1e9] * b.base.dim,
                       [1.0] + [1e9] * b.base.dim, open_flag=True)
    a_cyl = smooth_region
    if basepoint is not None:
        sigma_cyl, keep_region, smooth_extra = _flatten_cylinder_basepoint(
            pb, b, sigma_cyl, flat, sigma, basepoint, eps)
        u_cyl = u_cyl.difference(keep_region)
        a_cyl = a_cyl.union(smooth_extra)
        sigma_cyl.smooth_region = sigma_cyl.smooth_region.union(smooth_extra)

    tube_cyl = Tube(sigma_cyl, lambda cpts: tube.width(cpts[:, 1:]))
    overrides = dict(problem_overrides or {})
    problem = SmoothingProblem(
        bundle=pb, sigma=sigma_cyl, L=full_region(pb.base), U=u_cyl,
        A=a_cyl, tube=tube_cyl, **overrides)
    tau_cyl, _, report = steenrod_smooth(problem)
    out = cylinder_section_to_homotopy(b, tau_cyl)
    return out, report


def _flatten_cylinder_basepoint(pb, b, sigma_cyl, flat, sigma, basepoint, eps):
    """Deform the cylinder section to be constant along the base-point
    line for interior times, preserving the t in {0,1} slices bit-exactly
    (the flattening weight is tapered off inside the flat time bands)."""
    chart_id, coords, lam = basepoint
    support = getattr(lam, "support", None)
    if support is None:
        raise InvalidArgument("basepoint weight must carry a support region")
    triv = b.triv_for_chart(chart_id)
    rep0 = sigma.rep(triv, chart_id)
    x0_arr = np.asarray(coords, dtype=float).reshape(1, -1)
    z = _fit_fibre_chart(b, rep0(x0_arr))
    z0 = z.lift(rep0(x0_arr))[0]

    # time taper: 1 on [0.9 eps, 1 - 0.9 eps], 0 outside (ramps sit inside
    # the flat bands, where the inner homotopy is constant in t)
    t_lo, t_hi = 0.5 * eps, 0.9 * eps

    def mu(ts):
        up = smoothstep((ts - t_lo) / (t_hi - t_lo))
        down = smoothstep((1.0 - ts - t_lo) / (t_hi - t_lo))
        return up * down

    lam_support = region_from_chart_prims(b.base, support.closure())
    glue = box_region(pb.base, [-1.0] + [-1e9] * b.base.dim,
                      [2.0] + [1e9] * b.base.dim).intersect(
        _prepend_time(pb, lam_support, -1.0, 2.0))

    class _Flat(Section):
        def _build_rep(self, triv_index, cid):
            base_rep = sigma_cyl.rep(triv_index, cid)

            def fn(pts):
                out = np.array(base_rep(pts), copy=True)
                cpts = pb.base.canonical(pts)
                mask = glue.contains_canonical(cpts)
                if not np.any(mask):
                    return out
                sub = pts[mask]
                xa = b.base.lift(chart_id, cpts[mask][:, 1:])
                w = (mu(sub[:, 0]) * lam(xa)[:, 0])[:, None]
                vals = out[mask]
                if triv_index != triv:
                    vals = b.fibre_transition(triv_index, triv,
                                              cpts[mask][:, 1:], vals)
                zf = z.lift(vals)
                moved = zf + w * (z0[None, :] - zf)
                exact = (w == 0.0)[:, 0]
                moved[exact] = zf[exact]
                if triv_index != triv:
                    moved = b.fibre_transition(triv, triv_index,
                                               cpts[mask][:, 1:], moved)
                out[mask] = moved
                return out

            return ChartField(base_rep.domain, fn, m=pb.fibre_dim,
                              smooth=self.smooth_region.chart_view(cid, pad=1.0),
                              eval_lo=base_rep.eval_lo,
                              eval_hi=base_rep.eval_hi, cache=True)

    # region where lam == 1 (plateau interior): constant there for mid
    # times, hence smooth around the base-point line
    one_region = region_from_chart_prims(
        b.base, getattr(lam, "one_region", support.shrink(1e-9)))
    keep = _prepend_time(pb, one_region.shrink(
        0.25 * _min_extent(one_region)), -1.0, 2.0)
    smooth_extra = _prepend_time(pb, one_region, -1.0, 2.0)
    out = _Flat(pb, sigma_cyl.smooth_region)
    return out, keep, smooth_extra


def _prepend_time(pb, region: Region, lo, hi):
    prims = []
    for p in region.prims.prims:
        if isinstance(p, Box):
            prims.append(Box((Interval(lo, hi - lo, True, True),) + p.axes))
        else:
            raise InvalidArgument("basepoint regions must be boxes")
    return Region(pb.base, PrimSet(pb.base.periods, tuple(prims)))


def _min_extent(region: Region):
    w = np.inf
    for p in region.prims.prims:
        if isinstance(p, Box) and not p.is_empty():
            w = min(w, min(iv.width for iv in p.axes))
    return w if np.isfinite(w) else 0.1
