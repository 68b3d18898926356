"""The smoothing engine: locally finite cover construction by recursive
bisection, the per-patch inductive smoothing step, and the full fold that
produces the smooth section together with its homotopy.

Every step keeps the section bit-exactly equal to the input outside the
requested open set, stays inside the graph tube, and enlarges the region
certified smooth; the fold terminates because the cover is finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .bundle import Bundle, Section, Tube, fibre_field_to_section
from .errors import (CoverConstructionFailed, CoverGap, InvalidArgument,
                     NeighborhoodViolation, SmootherError)
from .fields import ChartField, lipschitz_estimate, smooth_on_region
from .homotopy import ConstantHomotopy, concat_homotopies, step_homotopy
from .manifold import (Region, chart_grid, full_region,
                       region_from_chart_prims, sample_grid)
from .regions import Box, Interval, PrimSet

__all__ = ["Cover", "CoverEntry", "SmoothingProblem", "build_cover",
           "inductive_step", "steenrod_smooth"]


@dataclass
class CoverEntry:
    index: int               # 1-based position in the processing order
    triv: int
    chart: int
    path: str                # bisection path within the chart candidate
    v_box: Box               # chart-local open patch
    vp_box: Box              # shrunk patch
    v_region: Region
    vp_region: Region
    fibre_chart: int
    w_center: np.ndarray
    w_radius: float
    l_region: Region = None
    u_region: Region = None
    core: Region = None

    def summary(self):
        return {
            "index": self.index, "triv": self.triv, "chart": self.chart,
            "path": self.path or "-",
            "v": [[iv.lo, iv.hi] for iv in self.v_box.axes],
            "fibre_chart": self.fibre_chart,
            "w_center": [float(c) for c in self.w_center],
            "w_radius": float(self.w_radius),
            "active": bool(self.core is not None and not self.core.is_empty()),
        }


@dataclass
class Cover:
    entries: list

    @property
    def K(self):
        return len(self.entries)

    def summary(self):
        return {"K": self.K, "entries": [e.summary() for e in self.entries]}


@dataclass
class SmoothingProblem:
    bundle: Bundle
    sigma: Section
    L: Region
    U: Region
    A: Region
    tube: Tube
    grid_res: object = None          # int or per-axis tuple
    time_res: int = 9
    h0: float = None
    max_halvings: int = 20
    quadrature_points: int = None
    margin: float = 0.05             # patch shrink V' inside V
    pad: float = 0.08                # patch padding past manifold boundary
    bisect_depth: int = 12
    cert_steps: tuple = (1e-2, 5e-3, 2.5e-3)
    cert_floor: float = 1e-7
    cert_res: int = None

    def __post_init__(self):
        d = self.bundle.base.dim
        if self.grid_res is None:
            self.grid_res = 257 if d == 1 else 65
        if np.isscalar(self.grid_res):
            self.grid_res = (int(self.grid_res),) * d
        if self.cert_res is None:
            self.cert_res = min(65, max(self.grid_res))
        self.A_shrunk = self.A.shrink(self.margin / 2.0)

    def chart_axes(self, chart_id):
        c = self.bundle.base.charts[chart_id]
        return tuple(np.linspace(c.lo[k], c.hi[k], self.grid_res[k])
                     for k in range(self.bundle.base.dim))

    def chart_points(self, chart_id):
        return chart_grid(self.bundle.base, chart_id, self.grid_res)

    def validate(self):
        b = self.bundle
        lu = self.L.difference(self.U)
        for cid, pts in sample_grid(b.base, self.grid_res):
            cpts = b.base.canonical(pts)
            need = lu.contains_canonical(cpts)
            have = self.A_shrunk.contains_canonical(cpts)
            bad = need & ~have
            if np.any(bad):
                i = int(np.argmax(bad))
                raise InvalidArgument(
                    "the section is not declared smooth near L \\ U at "
                    f"chart {cid} point {pts[i].tolist()}")
        if not self.sigma.smooth_region.contains_region(self.A):
            raise InvalidArgument(
                "sigma's declared smooth region does not contain A")


# ---------------------------------------------------------------------------
# cover construction

def _candidate_box(problem, chart):
    axes = []
    for k in range(problem.bundle.base.dim):
        lo = chart.lo[k] - (problem.pad if chart.corner_lo[k] else 0.0)
        hi = chart.hi[k] + (problem.pad if chart.corner_hi[k] else 0.0)
        axes.append(Interval(lo, hi - lo, True, True))
    return Box(tuple(axes))


def _sample_in_box(problem, chart_id, bx):
    """Chart grid points inside the patch, densified with a local lattice
    (small patches can fall between global grid points)."""
    pts = problem.chart_points(chart_id)
    closed = bx.closure()
    keep = closed.contains(pts, (None,) * pts.shape[1])
    d = pts.shape[1]
    local_n = 9 if d == 1 else 7
    local = np.array(np.meshgrid(
        *[np.linspace(iv.lo, iv.hi, local_n) for iv in bx.axes],
        indexing="ij")).reshape(d, -1).T
    return np.unique(np.concatenate([pts[keep], local]), axis=0)


def _try_fit(problem, triv, chart_id, bx):
    """Find a fibre chart and a ball W with sigma(patch) inside W and the
    tube over the patch inside both W's chart and the tube bound."""
    b = problem.bundle
    pts = _sample_in_box(problem, chart_id, bx)
    cpts = b.base.canonical(pts)
    vals = problem.sigma.values(triv, chart_id, pts)
    eps = problem.tube.width(cpts)
    for z in b.fibre_charts:
        if not np.all(z.fits(vals)):
            continue
        zv = z.lift(vals)
        if np.any(z.boundary_slack(zv) <= eps):
            continue  # tube slice leaves the fibre chart
        center = 0.5 * (zv.min(axis=0) + zv.max(axis=0))
        dist = np.linalg.norm(zv - center, axis=1)
        r_img = float(np.max(dist))
        cap = float(np.min(eps - dist))
        # demand real slack between the image ball and the tube bound, so
        # later steps keep a workable smoothing budget on this patch
        if cap <= max(1.2 * r_img, 1e-9):
            continue
        w_r = 0.25 * r_img + 0.75 * cap
        if np.any(z.boundary_slack(center.reshape(1, -1)) <= w_r):
            continue
        return z.id, center, w_r
    return None


def _bisect(bx: Box, breakpoints=None, overlap_frac=0.3):
    """Split the longest axis.  When a declared non-smooth coordinate lies
    in the middle half of the axis, the seam snaps onto it: both children
    then hold the kink at overlap depth, so the patch that eventually
    smooths it keeps healthy margins around it."""
    widths = [iv.width for iv in bx.axes]
    k = int(np.argmax(widths))
    iv = bx.axes[k]
    mid = iv.lo + 0.5 * iv.width
    if breakpoints:
        lo_q = iv.lo + 0.25 * iv.width
        hi_q = iv.lo + 0.75 * iv.width
        brk = [b for b in breakpoints[k] if lo_q <= b <= hi_q]
        if brk:
            mid = min(brk, key=lambda v: (abs(v - mid), v))
    ovl = overlap_frac * 0.5 * iv.width
    left = Interval(iv.lo, mid + ovl - iv.lo, iv.lo_open, True)
    right = Interval(mid - ovl, iv.hi - (mid - ovl), True, iv.hi_open)
    return (Box(bx.axes[:k] + (left,) + bx.axes[k + 1:]),
            Box(bx.axes[:k] + (right,) + bx.axes[k + 1:]))


def _holds_kink(bx: Box, brks, depth_frac=0.15):
    """Does the patch contain a declared non-smooth coordinate at depth?"""
    for k in range(bx.dim):
        iv = bx.axes[k]
        pad = depth_frac * iv.width
        for v in brks[k]:
            if iv.lo + pad <= v <= iv.hi - pad:
                return True
    return False


def build_cover(problem: SmoothingProblem) -> Cover:
    """Patches by recursive bisection, then the induction's set algebra."""
    from .fields import _axis_breakpoints
    b = problem.bundle
    atlas = b.base
    entries = []
    chart_brks = {}
    for triv in b.trivs:
        for chart_id in triv.chart_ids:
            if chart_id not in chart_brks:
                chart_brks[chart_id] = _axis_breakpoints(
                    problem.sigma.smooth_region.chart_view(chart_id, pad=1.0),
                    atlas.dim)
            brks = chart_brks[chart_id]
            stack = [(_candidate_box(problem, atlas.charts[chart_id]), "")]
            while stack:
                bx, path = stack.pop(0)
                if len(path) > problem.bisect_depth:
                    raise CoverConstructionFailed(
                        "bisection depth exceeded over chart "
                        f"{chart_id} at patch {[(iv.lo, iv.hi) for iv in bx.axes]}",
                        region=bx)
                fit = _try_fit(problem, triv.index, chart_id, bx)
                if fit is None:
                    a, c = _bisect(bx, brks)
                    stack.append((a, path + "0"))
                    stack.append((c, path + "1"))
                    continue
                zid, center, w_r = fit
                entries.append((triv.index, chart_id, path, bx, zid, center, w_r))
    # patches holding a declared kink deep inside go first: the kink piece
    # then spans a whole patch and keeps margins on both sides of the kink
    entries.sort(key=lambda e: (0 if _holds_kink(e[3], chart_brks[e[1]]) else 1,
                                e[0], e[1], e[2]))

    cover_entries = []
    for i, (tix, cid, path, bx, zid, center, w_r) in enumerate(entries):
        # nesting margin scales with the patch so bisected siblings (which
        # overlap by 20% of the parent) still cover after shrinking
        m_e = min(problem.margin, 0.10 * min(iv.width for iv in bx.axes))
        vp = bx.shrink(m_e)
        if vp.is_empty():
            raise CoverConstructionFailed(
                f"patch over chart {cid} too small for the shrink margin",
                region=bx)
        v_region = region_from_chart_prims(
            atlas, PrimSet((None,) * atlas.dim, (bx,)))
        vp_region = region_from_chart_prims(
            atlas, PrimSet((None,) * atlas.dim, (vp,)))
        cover_entries.append(CoverEntry(
            index=i + 1, triv=tix, chart=cid, path=path, v_box=bx, vp_box=vp,
            v_region=v_region, vp_region=vp_region, fibre_chart=zid,
            w_center=center, w_radius=w_r))

    # coverage of the shrunk patches
    for cid, pts in sample_grid(atlas, problem.grid_res):
        if pts.shape[0] == 0:
            continue
        cpts = atlas.canonical(pts)
        covered = np.zeros(pts.shape[0], dtype=bool)
        for e in cover_entries:
            covered |= e.vp_region.contains_canonical(cpts)
        if not covered.all():
            i = int(np.argmax(~covered))
            raise CoverGap(
                f"shrunk patches miss chart {cid} point {pts[i].tolist()}",
                point=pts[i].tolist())

    # the induction's closed pieces and the open sets they are fixed in
    used = Region(atlas, PrimSet(atlas.periods, ()))
    for e in cover_entries:
        li = problem.L.intersect(e.vp_region.closure()).difference(used)
        used = used.union(e.vp_region)
        e.l_region = li
        e.core = li.difference(problem.A_shrunk)
        if e.core.is_empty():
            e.u_region = Region(atlas, PrimSet(atlas.periods, ()))
            continue
        e.u_region = _build_u(problem, e)
    _verify_cover(problem, cover_entries)
    return Cover(cover_entries)


def _build_u(problem, e: CoverEntry):
    """Open U_i with core <= U_i <= closure(U_i) <= V_i and U, by margins."""
    target = e.v_region.intersect(problem.U)
    m = problem.margin
    for _ in range(14):
        ui = e.core.expand(m).intersect(target.shrink(0.5 * m))
        if (ui.contains_region(e.core)
                and target.contains_region(ui.closure())):
            return ui
        m *= 0.5
    raise CoverConstructionFailed(
        f"no open set fits between piece {e.index} of L and V * U; "
        "the patch margin cannot separate them")


def _verify_cover(problem, entries):
    b = problem.bundle
    for e in entries:
        pts = _sample_in_box(problem, e.chart, e.v_box)
        if pts.shape[0] == 0:
            continue
        cpts = b.base.canonical(pts)
        vals = problem.sigma.values(e.triv, e.chart, pts)
        z = b.fibre_charts[e.fibre_chart]
        zv = z.lift(vals)
        dist = np.linalg.norm(zv - e.w_center, axis=1)
        if not np.all(dist < e.w_radius):
            raise CoverConstructionFailed(
                f"sigma leaves its fibre ball on patch {e.index}")
        eps = problem.tube.width(cpts)
        if not np.all(dist + e.w_radius <= eps):
            raise CoverConstructionFailed(
                f"fibre ball of patch {e.index} exits the tube")


# ---------------------------------------------------------------------------
# the inductive step

def _lifted_rep(problem, tau, e: CoverEntry):
    """Representative of tau over the patch in fibre-chart coordinates."""
    b = problem.bundle
    rep = tau.rep(e.triv, e.chart)
    z = b.fibre_charts[e.fibre_chart]
    if z.kind == "euclidean":
        lifted = rep
    else:
        def fn(pts):
            return z.lift(rep(pts))

        lifted = ChartField(rep.domain, fn, m=b.fibre_dim, smooth=rep.smooth,
                            eval_lo=rep.eval_lo, eval_hi=rep.eval_hi,
                            cache=True)
    return lifted, z


def _patch_mesh(problem, e: CoverEntry):
    axes = []
    for k, ax in enumerate(problem.chart_axes(e.chart)):
        iv = e.v_box.axes[k]
        sub = ax[(ax >= iv.lo) & (ax <= iv.hi)]
        merged = np.unique(np.concatenate(
            [sub, np.linspace(iv.lo, iv.hi, 9)]))
        axes.append(merged)
    return tuple(axes)


def _tolerance_on_mesh(problem, cover, e, tau, gz, mesh, z):
    """Pointwise budget for |h - g| on the patch: remaining tube slack and
    remaining room in every fibre ball whose patch closure meets this one."""
    b = problem.bundle
    grids = np.meshgrid(*mesh, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    cpts = b.base.canonical(pts)
    svals = problem.sigma.values(e.triv, e.chart, pts)
    tvals = tau.values(e.triv, e.chart, pts)
    tol = problem.tube.width(cpts) - b.fibre_distance(tvals, svals)
    u_closed = e.u_region.closure()
    in_u = u_closed.contains_canonical(cpts)
    for other in cover.entries:
        mask = in_u & other.v_region.closure().contains_canonical(cpts)
        if not np.any(mask):
            continue
        zo = b.fibre_charts[other.fibre_chart]
        od = np.linalg.norm(zo.lift(tvals[mask]) - other.w_center, axis=1)
        slack = other.w_radius - od
        if np.any(slack <= 0.0):
            raise NeighborhoodViolation(
                f"section leaves fibre ball {other.index} before step "
                f"{e.index}", index=other.index)
        tol[mask] = np.minimum(tol[mask], slack)
    if np.any(tol <= 0.0):
        i = int(np.argmax(tol <= 0.0))
        raise NeighborhoodViolation(
            f"no tube slack left at {pts[i].tolist()} before step {e.index}",
            index=e.index)
    return pts, tol


def inductive_step(tau_prev: Section, cover: Cover, a: int,
                   problem: SmoothingProblem):
    """One patch of the induction: smooth the representative over U_a and
    glue it back; returns (tau_a, step homotopy, step report)."""
    e = cover.entries[a - 1]
    info = {"index": e.index, "skipped": True, "radius": None,
            "sup_deviation": 0.0}
    if e.core is None or e.core.is_empty():
        return tau_prev, ConstantHomotopy(tau_prev), info

    b = problem.bundle
    atlas = b.base
    gz, z = _lifted_rep(problem, tau_prev, e)
    none_p = (None,) * atlas.dim

    lp = problem.L.intersect(e.vp_region.closure()).union(
        problem.A_shrunk.closure().intersect(e.v_region))
    lp_loc = lp.chart_view(e.chart).intersect(
        PrimSet(none_p, (e.v_box.closure(),)))
    u_loc = e.u_region.chart_view(e.chart)
    a_eff = tau_prev.smooth_region.chart_view(e.chart)

    mesh = _patch_mesh(problem, e)
    pts, tol = _tolerance_on_mesh(problem, cover, e, tau_prev, gz, mesh, z)
    h_cap = 0.45 * min(iv.width for iv in e.v_box.axes)

    patch_field = ChartField(e.v_box.closure(), gz.fn, m=gz.m,
                             smooth=gz.smooth, eval_lo=gz.eval_lo,
                             eval_hi=gz.eval_hi, cache=True)
    # the schedule starts from the raw tube width (not the tighter pooled
    # budget): larger radii smooth more, the halvings handle the rest
    h0 = problem.h0
    if h0 is None:
        lip = lipschitz_estimate(patch_field, mesh)
        eps_min = float(np.min(problem.tube.width(
            problem.bundle.base.canonical(pts))))
        h0 = eps_min / (2.0 * max(lip, 1e-9))
    hz, sinfo = smooth_on_region(
        patch_field, lp_loc, u_loc, a_eff, None, tol, mesh,
        quadrature_points=problem.quadrature_points, h0=h0,
        max_halvings=problem.max_halvings, h_cap=h_cap)
    info.update(skipped=not sinfo["changed"], radius=sinfo.get("radius"),
                sup_deviation=sinfo.get("sup_deviation", 0.0))
    if not sinfo["changed"]:
        return tau_prev, ConstantHomotopy(tau_prev), info

    lam1 = sinfo["lam1"]
    supp_region = region_from_chart_prims(
        atlas, _clip_prims(lam1.support, e.v_box, none_p))
    patch_smooth = region_from_chart_prims(
        atlas, _clip_prims(hz.smooth, e.v_box, none_p)).intersect(e.u_region)
    new_smooth = tau_prev.smooth_region.difference(
        supp_region).union(patch_smooth)

    tau_a = fibre_field_to_section(
        b, hz, e.triv, e.chart, e.u_region.closure(), tau_prev,
        grid_res=max(problem.grid_res), smooth_region=new_smooth,
        seam_band=0.25 * sinfo["v_margin"])
    f_step = step_homotopy(gz, hz, e.triv, e.chart, e.u_region.closure(),
                           tau_prev, tau_a, grid_res=max(problem.grid_res))
    _verify_step(problem, cover, e, tau_a)
    return tau_a, f_step, info


def _clip_prims(prims: PrimSet, bx: Box, none_p):
    from .regions import box_intersect
    out = []
    for p in prims.prims:
        if isinstance(p, Box) and not p.is_empty():
            out.extend(box_intersect(p, bx.closure(), none_p))
    return PrimSet(none_p, tuple(out))


def _verify_step(problem, cover, e, tau_a):
    """Grid re-check of the step postconditions (tube and fibre balls)."""
    b = problem.bundle
    pts = _sample_in_box(problem, e.chart, e.v_box)
    cpts = b.base.canonical(pts)
    svals = problem.sigma.values(e.triv, e.chart, pts)
    tvals = tau_a.values(e.triv, e.chart, pts)
    ratio = b.fibre_distance(tvals, svals) / problem.tube.width(cpts)
    if np.any(ratio >= 1.0):
        raise NeighborhoodViolation(
            f"step {e.index} exits the tube (ratio {float(np.max(ratio)):.3f})",
            index=e.index)
    mask_u = e.u_region.closure().contains_canonical(cpts)
    for other in cover.entries:
        m = mask_u & other.v_region.closure().contains_canonical(cpts)
        if not np.any(m):
            continue
        zo = b.fibre_charts[other.fibre_chart]
        od = np.linalg.norm(zo.lift(tvals[m]) - other.w_center, axis=1)
        if np.any(od >= other.w_radius):
            raise NeighborhoodViolation(
                f"step {e.index} leaves fibre ball {other.index}",
                index=other.index)


# ---------------------------------------------------------------------------
# the full fold

def steenrod_smooth(problem: SmoothingProblem):
    """Run the cover construction and the inductive fold; returns
    (tau, homotopy, report)."""
    from .verify import (compare_sections, smoothness_certificate,
                         tube_certificate)

    problem.validate()
    cover = build_cover(problem)
    tau = problem.sigma
    steps = []
    homotopies = []
    for a in range(1, cover.K + 1):
        try:
            tau, f_step, info = inductive_step(tau, cover, a, problem)
        except SmootherError as err:
            err.step = a
            raise
        steps.append(info)
        homotopies.append(f_step)
    homotopy = concat_homotopies(homotopies, grid_res=min(problem.grid_res))

    atlas = problem.bundle.base
    off_u = full_region(atlas).difference(problem.U)
    time_grid = np.linspace(0.0, 1.0, problem.time_res)
    near_l = problem.L.expand(0.5 * problem.margin)
    certs = [
        compare_sections(tau, problem.sigma, off_u, mode="bitexact",
                         grid_res=problem.cert_res),
        tube_certificate(problem.tube, tau, problem.grid_res),
        tube_certificate(problem.tube, homotopy, problem.cert_res,
                         time_grid=time_grid),
        smoothness_certificate(tau, near_l, steps=problem.cert_steps,
                               grid_res=problem.cert_res,
                               floor=problem.cert_floor),
        _fixed_region_certificate(problem, homotopy, time_grid),
        _compat_certificate(tau),
    ]
    report = {
        "cover": cover.summary(),
        "steps": steps,
        "certificates": [c.to_dict() for c in certs],
        "passed": all(c.passed for c in certs),
    }
    return tau, homotopy, report


def _fixed_region_certificate(problem, homotopy, time_grid):
    from .verify import Certificate, compare_sections
    atlas = problem.bundle.base
    off_u = full_region(atlas).difference(problem.U)
    worst = 0.0
    loc = None
    ok = True
    for t in time_grid:
        cert = compare_sections(homotopy.slice(float(t)), problem.sigma,
                                off_u, mode="bitexact",
                                grid_res=problem.cert_res)
        if not cert.passed:
            ok = False
        if cert.worst_value >= worst:
            worst = cert.worst_value
            loc = dict(cert.worst_location or {}, t=float(t))
    return Certificate("endpoint", ok, worst, loc,
                       {"time_samples": len(time_grid), "mode": "fixed-region"})


def _compat_certificate(tau):
    from .verify import Certificate
    worst = tau.compatibility_worst()
    return Certificate("compatibility", worst <= 1e-10, worst, None,
                       {"tolerance": 1e-10})
