"""Parabolic capacity of closed space-time sets and its threshold lemmas.

``cap(E)`` for the unit cube is the value at the space-time point
``(0, 1)`` of the caloric potential: the solution of the heat equation in
``Q_2(0,1)`` minus ``E`` intersected with the closed unit cube, with data
0 on the parabolic boundary of ``Q_2(0,1)`` and 1 on the set.  For a cube
``Q_r(x, t)`` the set is pulled back through the map ``(y, s) ->
(x + r^2 y, t + r s)`` exactly as defined, and the computation always
runs in the unit frame (which makes the translation/rescaling identity
hold by construction).  Note the map intentionally pairs ``r^2`` with
space and ``r`` with time; the laboratory reproduces this convention
verbatim rather than normalizing it, and reports carry the consequence.

Sets are rasterized to closed cell unions of the node lattice before
solving; the evaluation point lies on a lattice node by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HypothesisNotMet, ValidationError
from .geometry import DomainSpec, ParabolicCube
from .grid import SpaceTimeGrid, box_mask
from .solver import EllipticCoefficients, Field, SolveConfig, _march

UNIT_CUBE = ParabolicCube((0.0, 0.0, 0.0), 1.0)


# ---------------------------------------------------------------------------
# closed space-time sets
# ---------------------------------------------------------------------------

class EmptySet:
    """The empty obstacle."""

    def meets_boxes(self, b1lo, b1hi, b2lo, b2hi, tlo, thi):
        shape = np.broadcast_shapes(np.shape(b1lo), np.shape(b2lo),
                                    np.shape(tlo))
        return np.zeros(shape, dtype=bool)

    def min_feature(self):
        return math.inf

    def describe(self):
        return {"kind": "empty"}


@dataclass
class BoxUnion:
    """Union of closed axis-aligned space-time boxes."""

    boxes: list  # of ((a1, b1), (a2, b2), (c, d))

    def meets_boxes(self, b1lo, b1hi, b2lo, b2hi, tlo, thi):
        shape = np.broadcast_shapes(np.shape(b1lo), np.shape(b2lo),
                                    np.shape(tlo))
        out = np.zeros(shape, dtype=bool)
        eps = 1e-12

        def overlap(lo, hi, a, b):
            # positive-measure overlap; closed touch only when the set is
            # degenerate along this axis (keeps aligned boxes exact and
            # still rasterizes lower-dimensional slabs)
            if b - a > 2 * eps:
                return (lo < b - eps) & (hi > a + eps)
            return (lo <= b + eps) & (hi >= a - eps)

        for (a1, b1), (a2, b2), (c, d) in self.boxes:
            out |= (overlap(b1lo, b1hi, a1, b1)
                    & overlap(b2lo, b2hi, a2, b2)
                    & overlap(tlo, thi, c, d))
        return out

    def min_feature(self):
        feats = [min(b1 - a1, b2 - a2) for (a1, b1), (a2, b2), _ in self.boxes]
        tfeats = [d - c for *_, (c, d) in self.boxes]
        return min(feats + tfeats) if self.boxes else math.inf

    def describe(self):
        return {"kind": "boxes", "boxes": [[list(map(float, b)) for b in box]
                                           for box in self.boxes]}


@dataclass
class ComplementOfCylinder:
    """Closure of the complement of the unit cylinder of a domain.

    For graph domains this is the region on or below the graph, above the
    top face ``g + r``, or outside the lateral/time window; for slit
    domains the outside of the cube together with the slit itself.  Cell
    tests against the graph sample its footprint corners (first-order
    rasterization, consistent with the solver's boundary treatment).
    """

    domain: DomainSpec
    r: float = 1.0

    def meets_boxes(self, b1lo, b1hi, b2lo, b2hi, tlo, thi):
        r = self.r
        eps = 1e-12
        outside = ((b1lo < -r - eps) | (b1hi > r + eps)
                   | (tlo < -r * r - eps) | (thi > r * r + eps))
        if self.domain.kind == "graph":
            g = self.domain.graph
            corners = [g.eval(b1lo, tlo), g.eval(b1lo, thi),
                       g.eval(b1hi, tlo), g.eval(b1hi, thi)]
            gmax = np.maximum.reduce(np.broadcast_arrays(*corners))
            gmin = np.minimum.reduce(np.broadcast_arrays(*corners))
            below = b2lo < gmax - eps
            above = b2hi > gmin + r + eps
            return outside | below | above
        slit = self.domain.slit
        outside = outside | (b2lo < -r - eps) | (b2hi > r + eps)
        if not slit.is_empty():
            on_plane = (b2lo <= eps) & (b2hi >= -eps)
            # integral-image query over the slit cell lattice
            hit = _slit_box_overlap(slit, b1lo, b1hi, tlo, thi)
            outside = outside | (on_plane & hit)
        return outside

    def min_feature(self):
        return math.inf

    def describe(self):
        return {"kind": "cylinder-complement", "r": self.r,
                "domain": self.domain.kind}


def _slit_box_overlap(slit, b1lo, b1hi, tlo, thi):
    mask = slit.mask
    n, m = mask.shape
    csum = np.zeros((n + 1, m + 1), dtype=np.int64)
    csum[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)

    def clip_idx(q, lo, hi):
        return np.clip(q, lo, hi).astype(int)

    i0 = clip_idx(np.floor(np.asarray(b1lo) / slit.sh - slit.i_lo + 1e-9), 0, n)
    i1 = clip_idx(np.ceil(np.asarray(b1hi) / slit.sh - slit.i_lo - 1e-9), 0, n)
    k0 = clip_idx(np.floor(np.asarray(tlo) / slit.stau - slit.k_lo + 1e-9), 0, m)
    k1 = clip_idx(np.ceil(np.asarray(thi) / slit.stau - slit.k_lo - 1e-9), 0, m)
    count = (csum[i1, k1] - csum[i0, k1] - csum[i1, k0] + csum[i0, k0])
    return count > 0


# ---------------------------------------------------------------------------
# capacity proper
# ---------------------------------------------------------------------------

@dataclass
class CapacityQuery:
    E: object
    cube: ParabolicCube = UNIT_CUBE
    h: float = 1 / 8
    tau: float | None = None     # default 4 h^2
    linear_tol: float = 1e-10
    store: bool = True

    def __post_init__(self):
        if self.tau is None:
            self.tau = 4 * self.h * self.h


@dataclass
class CapacityResult:
    value: float
    phi: Field | None
    residual: float
    flags: dict = field(default_factory=dict)


def _capacity_grid(h: float, tau: float) -> SpaceTimeGrid:
    return SpaceTimeGrid.from_box((-2, 2), (-2, 2), (-3, 1), h, tau,
                                  offset=0.0)


def _rasterize(E, cube: ParabolicCube, grid: SpaceTimeGrid) -> np.ndarray:
    """Pin mask per node and slice: closure of the rasterized pulled-back
    set, intersected with the closed unit cube."""
    r = cube.r
    cx1, cx2, ct = cube.center
    h, tau = grid.h, grid.tau
    # extended cell lattice: one cell ring beyond the interior nodes
    e1 = (grid.i1_lo - 1 + np.arange(grid.n1 + 1)) * h
    e2 = (grid.i2_lo - 1 + np.arange(grid.n2 + 1)) * h
    ek = grid.ts[0] - tau + np.arange(grid.nk + 1) * tau
    B1lo = e1[:, None, None]
    B2lo = e2[None, :, None]
    Tlo = ek[None, None, :]
    sel = E.meets_boxes(cx1 + r * r * B1lo, cx1 + r * r * (B1lo + h),
                        cx2 + r * r * B2lo, cx2 + r * r * (B2lo + h),
                        ct + r * Tlo, ct + r * (Tlo + tau))
    sel = np.broadcast_to(sel, (grid.n1 + 1, grid.n2 + 1, grid.nk + 1))
    # node closure: a node is pinned if any incident cell is selected
    pin = np.zeros(grid.shape, dtype=bool)
    for di in (0, 1):
        for dj in (0, 1):
            for dk in (0, 1):
                pin |= sel[di:grid.n1 + di, dj:grid.n2 + dj,
                           dk:grid.nk + dk]
    # intersect with the closed unit cube
    eps = 1e-12
    in_q1 = ((np.abs(grid.x1s)[:, None, None] <= 1 + eps)
             & (np.abs(grid.x2s)[None, :, None] <= 1 + eps)
             & (grid.ts[None, None, :] >= -1 - eps)
             & (grid.ts[None, None, :] <= 0 + eps))
    return pin & in_q1


def parabolic_capacity(q: CapacityQuery) -> CapacityResult:
    """Caloric potential value at ``(0, 1)`` for the pulled-back set."""
    grid = _capacity_grid(q.h, q.tau)
    pins3 = _rasterize(q.E, q.cube, grid)
    flags = {}
    feat = q.E.min_feature()
    if feat < 2 * q.cube.r ** 2 * q.h:
        flags["underresolved"] = (
            f"smallest set feature {feat:g} spans fewer than two cells")
    if not pins3.any():
        return CapacityResult(0.0, None, 0.0, dict(flags, empty=True))

    mask = box_mask(grid, (-2, 2), (-2, 2), (-3, 1))
    cfg = SolveConfig(h=q.h, tau=q.tau, linear_tol=q.linear_tol,
                      store_every=1 if q.store else 0)

    def pins(k):
        if pins3[:, :, k].any():
            return pins3[:, :, k], 1.0
        return None

    phi = _march(mask, EllipticCoefficients.identity(), 0.0, cfg, pins=pins)
    i0 = -grid.i1_lo
    j0 = -grid.i2_lo
    value = float(phi.values[i0, j0, -1])
    tol = 10 * q.linear_tol
    if not -tol <= value <= 1 + tol:
        raise ValidationError(f"capacity {value} escapes [0, 1]")
    value = min(max(value, 0.0), 1.0)
    return CapacityResult(value, phi if q.store else None,
                          phi.meta["residual"], flags)


def capacity_monotone_check(E1, E2, cube: ParabolicCube = UNIT_CUBE,
                            h: float = 1 / 8, tau: float | None = None,
                            linear_tol: float = 1e-10) -> bool:
    """True iff cap(E1) <= cap(E2) + 10 tol for nested closed sets."""
    grid = _capacity_grid(h, tau if tau is not None else 4 * h * h)
    q1 = CapacityQuery(E1, cube, h, tau, linear_tol, store=False)
    q2 = CapacityQuery(E2, cube, h, tau, linear_tol, store=False)
    r1 = _rasterize(E1, cube, grid)
    r2 = _rasterize(E2, cube, grid)
    if not np.all(~r1 | r2):
        raise ValidationError("E1 is not contained in E2 on the lattice")
    c1 = parabolic_capacity(q1).value
    c2 = parabolic_capacity(q2).value
    return c1 <= c2 + 10 * linear_tol


# ---------------------------------------------------------------------------
# threshold lemmas
# ---------------------------------------------------------------------------

def q1_frame_grid(h: float, tau: float) -> SpaceTimeGrid:
    """Node grid over the unit backward cube ``Q_1``."""
    return SpaceTimeGrid.from_box((-1, 1), (-1, 1), (-1, 0), h, tau,
                                  offset=0.0)


def solve_on_q1(data, h: float, tau: float, pins3: np.ndarray | None = None,
                pin_value: float = 1.0, linear_tol: float = 1e-10) -> Field:
    """Heat-equation solve on the unit backward cube with optional pins."""
    grid = q1_frame_grid(h, tau)
    mask = box_mask(grid, (-1, 1), (-1, 1), (-1, 0))
    cfg = SolveConfig(h=h, tau=tau, linear_tol=linear_tol)
    pins = None
    if pins3 is not None:
        def pins(k):
            if pins3[:, :, k].any():
                return pins3[:, :, k], pin_value
            return None
    return _march(mask, EllipticCoefficients.identity(), data, cfg, pins=pins)


def solve_on_q2_frame(data, h: float, tau: float,
                      pins3: np.ndarray | None = None, pin_value: float = 0.0,
                      linear_tol: float = 1e-10) -> Field:
    """Heat-equation solve on the capacity frame ``Q_2(0, 1)``."""
    grid = _capacity_grid(h, tau)
    mask = box_mask(grid, (-2, 2), (-2, 2), (-3, 1))
    cfg = SolveConfig(h=h, tau=tau, linear_tol=linear_tol)
    pins = None
    if pins3 is not None:
        def pins(k):
            if pins3[:, :, k].any():
                return pins3[:, :, k], pin_value
            return None
    return _march(mask, EllipticCoefficients.identity(), data, cfg, pins=pins)


def _cube_node_sel(grid: SpaceTimeGrid, cube: ParabolicCube) -> np.ndarray:
    eps = 1e-12
    (a1, b1), (a2, b2), (c, d) = cube.x1_range, cube.x2_range, cube.t_range
    return ((grid.x1s[:, None, None] > a1 - eps)
            & (grid.x1s[:, None, None] < b1 + eps)
            & (grid.x2s[None, :, None] > a2 - eps)
            & (grid.x2s[None, :, None] < b2 + eps)
            & (grid.ts[None, None, :] > c + eps)
            & (grid.ts[None, None, :] <= d + eps))


@dataclass
class MeasureHarnackResult:
    ok: bool
    hypothesis_met: bool
    cap_value: float
    c0: float
    fraction_q1: float
    fraction_q2: float
    comparison_defect: float
    h_field: Field
    phi: Field | None
    flags: dict = field(default_factory=dict)


def small_cap_harnack_in_measure(
    v: Field,
    E,
    q1_cube: ParabolicCube,
    q2_cube: ParabolicCube,
    delta: float = 0.05,
    linear_tol: float = 1e-10,
) -> MeasureHarnackResult:
    """Harnack-in-measure for a caloric ``v >= 0`` off a small-capacity set.

    Checks the hypothesis (capacity below ``delta``; ``v >= 1`` on at
    least half of the first cube), builds the proof's auxiliary fields
    (``h``: potential of the superlevel set, ``phi``: capacity potential),
    verifies the comparison ``v >= h - phi`` cellwise, and tests whether
    ``v`` clears the calibrated level ``c0`` on half of the later cube.
    """
    grid = v.grid
    if grid.offset != 0.0:
        raise ValidationError("measure lemma expects the node-centered frame")
    for cube in (q1_cube, q2_cube):
        if abs(cube.r - 0.25) > 1e-12:
            raise ValidationError("the lemma uses cubes of size 1/4")
    lag = q2_cube.center[2] - q1_cube.center[2]
    if lag < 0.25 - 1e-12:
        raise ValidationError("cube time lag must be at least 1/4")

    h, tau = grid.h, grid.tau
    cap_res = parabolic_capacity(
        CapacityQuery(E, UNIT_CUBE, h, tau, linear_tol, store=True))
    flags = dict(cap_res.flags)
    hypothesis_met = cap_res.value <= delta
    if not hypothesis_met:
        flags["capacity_above_delta"] = cap_res.value

    sel1 = _cube_node_sel(grid, q1_cube)
    stored = np.zeros(grid.shape, dtype=bool)
    stored[:, :, v.stored_ks] = True
    sel1 &= stored
    vals3 = np.zeros(grid.shape)
    vals3[:, :, v.stored_ks] = v.values
    act3 = np.zeros(grid.shape, dtype=bool)
    act3[:, :, v.stored_ks] = v.active
    n_q1 = int((sel1 & act3).sum())
    k_set = sel1 & act3 & (vals3 >= 1.0)
    fraction_q1 = k_set.sum() / n_q1 if n_q1 else 0.0
    if fraction_q1 < 0.5:
        hypothesis_met = False
        flags["superlevel_fraction_below_half"] = float(fraction_q1)

    h_field = solve_on_q1(0.0, h, tau, pins3=k_set, pin_value=1.0,
                          linear_tol=linear_tol)

    # restrict phi to the Q_1 frame nodes for the cellwise comparison
    phi_on_q1 = _restrict_to_q1(cap_res.phi, h_field.grid)
    comparison_defect = 0.0
    hv = np.zeros(grid.shape)
    hv[:, :, h_field.stored_ks] = h_field.values
    defect = (hv - phi_on_q1) - vals3
    comparison_defect = float(defect[act3].max()) if act3.any() else 0.0

    sel2 = _cube_node_sel(grid, q2_cube) & act3
    h_on_q2 = hv[sel2]
    c0 = 0.5 * float(np.min(h_on_q2)) if h_on_q2.size else 0.0
    n_q2 = int(sel2.sum())
    fraction_q2 = float((vals3[sel2] >= c0).sum() / n_q2) if n_q2 else 0.0
    ok = hypothesis_met and fraction_q2 >= 0.5
    return MeasureHarnackResult(
        ok=ok, hypothesis_met=hypothesis_met, cap_value=cap_res.value,
        c0=c0, fraction_q1=float(fraction_q1), fraction_q2=fraction_q2,
        comparison_defect=comparison_defect, h_field=h_field,
        phi=cap_res.phi, flags=flags)


def _restrict_to_q1(phi: Field, q1_grid: SpaceTimeGrid) -> np.ndarray:
    """Values of the capacity potential on the Q_1 frame lattice."""
    g2 = phi.grid
    out = np.zeros(q1_grid.shape)
    di = q1_grid.i1_lo - g2.i1_lo
    dj = q1_grid.i2_lo - g2.i2_lo
    for p, k in enumerate(range(q1_grid.nk)):
        t = q1_grid.t(k)
        k2 = g2.k_of_time(t)
        out[:, :, p] = phi.slice_values(k2)[di:di + q1_grid.n1,
                                            dj:dj + q1_grid.n2]
    return out


@dataclass
class CapDecayResult:
    c: float
    hypothesis_met: bool
    cap_value: float
    sup_window: float
    sup_all: float
    comparison_defect: float
    flags: dict = field(default_factory=dict)


def positive_cap_decay(
    v: Field,
    E,
    delta: float = 0.05,
    window_sigma: float | None = None,
    linear_tol: float = 1e-10,
) -> CapDecayResult:
    """Decay factor for a subcaloric ``v >= 0`` vanishing on a fat set.

    ``c = 1 - sup v / ||v||`` over ``Q_{1/2}(0, 1)`` (or the window
    ``[-1/2, 1/2]^2 x [sigma, 1]``), with the comparison ``1 - v/||v||
    >= phi`` verified cellwise against the capacity potential.
    """
    grid = v.grid
    cap_res = parabolic_capacity(
        CapacityQuery(E, UNIT_CUBE, grid.h, grid.tau, linear_tol, store=True))
    flags = dict(cap_res.flags)
    hypothesis_met = cap_res.value >= delta
    if not hypothesis_met:
        flags["capacity_below_delta"] = cap_res.value

    vmax = v.max_abs()
    eps = 1e-12
    if window_sigma is None:
        win = ((np.abs(grid.x1s)[:, None, None] < 0.5 + eps)
               & (np.abs(grid.x2s)[None, :, None] < 0.5 + eps)
               & (grid.ts[None, None, :] > 0.75 + eps)
               & (grid.ts[None, None, :] <= 1 + eps))
    else:
        win = ((np.abs(grid.x1s)[:, None, None] <= 0.5 + eps)
               & (np.abs(grid.x2s)[None, :, None] <= 0.5 + eps)
               & (grid.ts[None, None, :] >= window_sigma - eps)
               & (grid.ts[None, None, :] <= 1 + eps))
    vals3 = np.zeros(grid.shape)
    vals3[:, :, v.stored_ks] = v.values
    act3 = np.zeros(grid.shape, dtype=bool)
    act3[:, :, v.stored_ks] = v.active
    sel = win & act3
    if vmax <= 0:
        return CapDecayResult(1.0, hypothesis_met, cap_res.value, 0.0, 0.0,
                              0.0, dict(flags, zero_field=True))
    sup_w = float(vals3[sel].max()) if sel.any() else 0.0
    c = 1.0 - sup_w / vmax

    phi3 = np.zeros(grid.shape)
    phi3[:, :, cap_res.phi.stored_ks] = cap_res.phi.values
    defect = phi3 - (1.0 - vals3 / vmax)
    comparison_defect = float(defect[act3].max())
    return CapDecayResult(c=c, hypothesis_met=hypothesis_met,
                          cap_value=cap_res.value, sup_window=sup_w,
                          sup_all=vmax, comparison_defect=comparison_defect,
                          flags=flags)


def decay_test_field(E, h: float, tau: float,
                     linear_tol: float = 1e-10) -> Field:
    """Caloric field with data 1 on the frame boundary and 0 on the set."""
    grid = _capacity_grid(h, tau)
    pins3 = _rasterize(E, UNIT_CUBE, grid)
    return solve_on_q2_frame(1.0, h, tau, pins3=pins3, pin_value=0.0,
                             linear_tol=linear_tol)
