"""Verification metrics and certificates: finite-difference smoothness,
bit-exact comparisons, tube ratios, compatibility, winding numbers.

Certificates are plain records, deterministic for fixed inputs, with the
worst value and where it was attained.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .bundle import Bundle, Section, Tube, tube_contains, _wrap_pm_pi
from .errors import CoarseGrid, InvalidArgument, InvalidRegion
from .manifold import Region, sample_grid

__all__ = ["Certificate", "smoothness_certificate", "winding_number",
           "compare_sections", "tube_certificate"]

TWO_PI = 2.0 * np.pi


@dataclass
class Certificate:
    kind: str
    passed: bool
    worst_value: float
    worst_location: dict | None
    parameters: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "passed": bool(self.passed),
                "worst_value": float(self.worst_value),
                "worst_location": self.worst_location,
                "parameters": self.parameters}


def _validate_steps(steps):
    steps = [float(s) for s in steps]
    if len(steps) < 3:
        raise InvalidArgument("need at least 3 finite-difference steps")
    for a, b in zip(steps, steps[1:]):
        if not np.isclose(b, 0.5 * a):
            raise InvalidArgument("each step must halve the previous one")
    return steps


def _second_differences(evaluate, pts, axis, steps, dim):
    """Central D2 estimates along one axis for each step size."""
    e = np.zeros(dim)
    e[axis] = 1.0
    center = evaluate(pts)
    out = []
    for h in steps:
        plus = evaluate(pts + h * e)
        minus = evaluate(pts - h * e)
        out.append((plus - 2.0 * center + minus) / (h * h))
    return out


def _delta_margins(d2s, floor):
    """Convergence margins of |D2_{h/2} - D2_h|; <= 0 everywhere passes."""
    deltas = [np.max(np.abs(b - a), axis=1) for a, b in zip(d2s, d2s[1:])]
    margins = np.full(deltas[0].shape, -np.inf)
    for a, b in zip(deltas, deltas[1:]):
        margins = np.maximum(margins, b - np.maximum(a, floor))
    return margins


def smoothness_certificate(target, region, axes=None, steps=(1e-2, 5e-3, 2.5e-3),
                           grid_res=65, floor=1e-7):
    """Certify second-order smoothness on a region by requiring the
    central second-difference estimates to converge under step halving.

    `target` is a Section (region: atlas Region) or a ChartField (region:
    chart-local PrimSet)."""
    steps = _validate_steps(steps)
    worst = -np.inf
    worst_loc = None
    checked = 0
    if isinstance(target, Section):
        b = target.bundle
        dim = b.base.dim
        use_axes = axes if axes is not None else tuple(range(dim))
        for cid, pts in sample_grid(b.base, grid_res):
            cpts = b.base.canonical(pts)
            mask = region.contains_canonical(cpts)
            if not np.any(mask):
                continue
            sub = pts[mask]
            checked += sub.shape[0]
            triv = b.triv_for_chart(cid)
            rep = target.rep(triv, cid)
            for ax in use_axes:
                d2s = _second_differences(rep, sub, ax, steps, dim)
                margins = _delta_margins(d2s, floor)
                i = int(np.argmax(margins))
                if margins[i] > worst:
                    worst = float(margins[i])
                    worst_loc = {"chart": cid, "point": sub[i].tolist(),
                                 "axis": ax}
    else:
        dim = target.dim
        use_axes = axes if axes is not None else tuple(range(dim))
        lo = np.array([iv.lo for iv in target.domain.axes])
        hi = np.array([iv.hi for iv in target.domain.axes])
        grid = [np.linspace(lo[k], hi[k], grid_res) for k in range(dim)]
        mesh = np.meshgrid(*grid, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        mask = region.contains(pts)
        if not np.any(mask):
            raise InvalidRegion("certificate region contains no grid points "
                                "of the field domain")
        sub = pts[mask]
        checked = sub.shape[0]
        for ax in use_axes:
            d2s = _second_differences(target, sub, ax, steps, dim)
            margins = _delta_margins(d2s, floor)
            i = int(np.argmax(margins))
            if margins[i] > worst:
                worst = float(margins[i])
                worst_loc = {"point": sub[i].tolist(), "axis": ax}
    if checked == 0:
        raise InvalidRegion("certificate region contains no grid points")
    return Certificate("smoothness", bool(worst <= 0.0), float(worst),
                       worst_loc,
                       {"steps": steps, "floor": floor, "grid_res": grid_res,
                        "points": checked, "order": 2})


def winding_number(section: Section, res=256):
    """Degree of a circle-fibre section over the circle: wrapped angle
    increments around the base, summed and divided by 2*pi."""
    b = section.bundle
    if b.fibre_kind != "circle" or b.base.id != "circle":
        raise InvalidArgument(
            "winding numbers need a circle-fibre bundle over the circle")
    if res < 16:
        raise InvalidArgument("winding resolution must be at least 16")
    thetas = np.linspace(0.0, TWO_PI, res + 1)[:, None]
    cpts = b.base.canonical(thetas)
    owners = b.base.owner_chart(cpts)
    vals = np.empty(res + 1)
    for cid in np.unique(owners):
        m = owners == cid
        triv = b.triv_for_chart(int(cid))
        vals[m] = section.values(triv, int(cid),
                                 b.base.lift(int(cid), cpts[m]))[:, 0]
    inc = _wrap_pm_pi(np.diff(vals))
    if np.any(np.abs(inc) > 0.5 * np.pi):
        i = int(np.argmax(np.abs(inc)))
        raise CoarseGrid(
            f"angle increment {inc[i]:+.3f} at base angle {thetas[i, 0]:.3f} "
            "exceeds pi/2; refine the winding grid")
    return int(np.rint(np.sum(inc) / TWO_PI))


def compare_sections(a: Section, b: Section, region: Region, mode="bitexact",
                     grid_res=65):
    """Compare two sections on a region: representation-level equality or
    sup fibre distance."""
    if a.bundle is not b.bundle and a.bundle.id != b.bundle.id:
        raise InvalidArgument("sections must live on a common bundle")
    bun = a.bundle
    worst = 0.0
    worst_loc = None
    checked = 0
    exact = True
    for cid, pts in sample_grid(bun.base, grid_res):
        cpts = bun.base.canonical(pts)
        mask = region.contains_canonical(cpts)
        if not np.any(mask):
            continue
        sub = pts[mask]
        checked += sub.shape[0]
        for triv in (t.index for t in bun.trivs if cid in t.chart_ids):
            va = a.values(triv, cid, sub)
            vb = b.values(triv, cid, sub)
            if mode == "bitexact":
                neq = ~np.all(va == vb, axis=1)
                if np.any(neq):
                    exact = False
                dist = bun.fibre_distance(va, vb)
                i = int(np.argmax(dist))
                if dist[i] >= worst:
                    worst = float(dist[i])
                    if neq.any():
                        j = int(np.argmax(neq * (dist + 1.0)))
                        worst_loc = {"chart": cid, "triv": triv,
                                     "point": sub[j].tolist()}
            else:
                dist = bun.fibre_distance(va, vb)
                i = int(np.argmax(dist))
                if dist[i] >= worst:
                    worst = float(dist[i])
                    worst_loc = {"chart": cid, "triv": triv,
                                 "point": sub[i].tolist()}
    passed = exact if mode == "bitexact" else True
    return Certificate("off_u_exact" if mode == "bitexact" else "compare",
                       bool(passed) if checked else True, worst, worst_loc,
                       {"mode": mode, "grid_res": grid_res, "points": checked})


def tube_certificate(tube: Tube, candidate, grid_res, time_grid=None):
    rep = tube_contains(tube, candidate, grid_res, time_grid=time_grid)
    return Certificate("tube", rep["contained"], rep["max_ratio"],
                       rep["argmax"],
                       {"grid_res": grid_res,
                        "time_samples": len(time_grid) if time_grid is not None else 0})
