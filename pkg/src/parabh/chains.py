"""Harnack chains: cube sequences along which interior Harnack compounds.

Backward chains climb from a point of the half-scale corridor into the
full corridor with cubes of a fixed size (``c1 * delta * r`` for
Lipschitz graphs, ``c0 * r^{beta/alpha}`` in the anisotropic rough-graph
regime); forward Carleson chains descend-in-distance toward the interior
reference point with cube sizes proportional to the distance to the
boundary (or its ``1/alpha`` power), giving the ``|log d0|`` and
``d0^{1 - 1/alpha}`` count laws.  The translated lattice walks cubes
along the vector ``T = (-rbar e_n, kappa rbar^2)`` and classifies them
against the corridor, the subgraph complement, and the capacity
threshold.

Containment certificates are exact for the stored piecewise-bilinear
graphs (box extrema of the graph are computed exactly), so every emitted
cube carries a verified clearance.  Chains are emitted even when a check
fails, with the violation recorded, unless ``strict`` is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalRejection, ValidationError
from .geometry import (DomainSpec, ParabolicCube, box_in_corridor_slack,
                       box_in_cylinder_slack, height_above_graph)
from .solver import Field

_SLACK_TOL = -1e-12


@dataclass
class ChainPlan:
    cubes: list
    direction: str          # 'backward' | 'forward'
    rule: str
    params: dict
    violations: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.cubes) - 1

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class ChainBound:
    start_value: float
    per_cube_factor: float
    m: int
    propagated: float
    head_value: float
    empirical_factors: np.ndarray
    sound: bool


def _emit(plan: ChainPlan, strict: bool) -> ChainPlan:
    if strict and plan.violations:
        raise NumericalRejection("; ".join(v["what"] for v in plan.violations))
    return plan


def _cube_slacks(domain, cube: ParabolicCube, r, height, center):
    dbl = cube.scaled(2.0)
    in_cyl = box_in_cylinder_slack(domain, dbl.x1_range, dbl.x2_range,
                                   dbl.t_range, r, center)
    in_corr = box_in_corridor_slack(domain, cube.x1_range, cube.x2_range,
                                    cube.t_range, r, height, center)
    return in_cyl, in_corr


def build_backward_chain(
    from_pt,
    domain: DomainSpec,
    r: float,
    delta: float,
    c1: float,
    center: tuple[float, float] = (0.0, 0.0),
    strict: bool = True,
) -> ChainPlan:
    """Backward-in-time chain of cubes of size ``c1 delta r`` from a point
    of the half-scale corridor to a cube inside the full corridor.

    Cube ``j`` is centered at ``(x0 + j rbar e_n, t0 - j rbar^2)``; the
    chain stops at the first cube contained in the corridor of height
    ``delta r``.  Every doubled cube must stay inside the backward
    cylinder; the first offending cube is named otherwise.
    """
    if domain.kind != "graph":
        raise ValidationError("backward chains are built over graph domains")
    rbar = c1 * delta * r
    x1, x2, t0 = from_pt
    plan = ChainPlan([], "backward", "lipschitz",
                     {"r": r, "delta": delta, "c1": c1, "rbar": rbar})
    hgt = height_above_graph(domain, from_pt)
    if not (delta * r / 2 - 1e-12 <= hgt < r / 2):
        plan.violations.append({
            "what": f"start height {hgt:.6g} outside the half-scale "
                    f"corridor [{delta * r / 2:.6g}, {r / 2:.6g})",
            "cube": 0})
    m_cap = math.ceil(1.0 / (c1 * delta)) + 8
    for j in range(m_cap + 1):
        cube = ParabolicCube((x1, x2 + j * rbar, t0 - j * rbar * rbar), rbar)
        in_cyl, in_corr = _cube_slacks(domain, cube, r, delta * r, center)
        plan.cubes.append(cube)
        if in_cyl < _SLACK_TOL:
            plan.violations.append({
                "what": f"doubled cube {j} exits the backward cylinder "
                        f"(clearance {in_cyl:.3g}); c1 too large for this "
                        "graph seminorm",
                "cube": j})
            break
        if in_corr > _SLACK_TOL:
            plan.meta["tail_corridor_clearance"] = in_corr
            break
    else:
        plan.violations.append({
            "what": f"no corridor entry within {m_cap} cubes", "cube": m_cap})
    plan.meta["m"] = plan.m
    return _emit(plan, strict)


def build_holder_chain(
    from_pt,
    domain: DomainSpec,
    r: float,
    beta: float,
    alpha: float,
    c0: float,
    center: tuple[float, float] = (0.0, 0.0),
    strict: bool = True,
) -> ChainPlan:
    """Anisotropic chain with cubes of size ``c0 r^{beta/alpha}`` climbing
    a height ``r^beta`` into the corridor; the enclosing slab is verified
    inside the backward cylinder."""
    if domain.mode != "holder":
        raise ValidationError("holder chains need a holder-mode domain")
    gamma = beta * (1 - 1 / alpha)
    rbar = c0 * r ** (beta / alpha)
    x1, x2, t0 = from_pt
    hgt = height_above_graph(domain, from_pt)
    plan = ChainPlan([], "backward", "holder",
                     {"r": r, "beta": beta, "alpha": alpha, "c0": c0,
                      "rbar": rbar, "gamma": gamma})
    if not ((r / 2) ** beta - 1e-12 <= hgt < r ** beta):
        plan.violations.append({
            "what": f"start height {hgt:.6g} not in the half-corridor band "
                    f"[{(r / 2) ** beta:.6g}, {r ** beta:.6g})", "cube": 0})
    m = max(1, math.ceil(r ** beta / rbar))
    for j in range(m + 1):
        cube = ParabolicCube((x1, x2 + j * rbar, t0 - j * rbar * rbar), rbar)
        plan.cubes.append(cube)
        in_cyl, _ = _cube_slacks(domain, cube, r, r ** beta, center)
        if in_cyl < _SLACK_TOL:
            plan.violations.append({
                "what": f"doubled cube {j} exits the cylinder "
                        f"(clearance {in_cyl:.3g})", "cube": j})
            break
    t_m = t0 - m * rbar * rbar
    slab = ((x1 - rbar, x1 + rbar),
            (x2 - rbar, x2 + m * rbar + rbar),
            (t_m - rbar * rbar, t0))
    slab_slack = box_in_cylinder_slack(domain, *slab, r, center)
    if slab_slack < _SLACK_TOL:
        plan.violations.append({
            "what": f"enclosing slab exits the domain (clearance "
                    f"{slab_slack:.3g}); c0 too large", "cube": m})
    tail_corr = box_in_corridor_slack(
        domain, *(plan.cubes[-1].x1_range, plan.cubes[-1].x2_range,
                  plan.cubes[-1].t_range), r, r ** beta, center)
    if tail_corr < _SLACK_TOL:
        plan.violations.append({
            "what": f"tail cube misses the corridor (clearance "
                    f"{tail_corr:.3g})", "cube": m})
    plan.meta.update({
        "m": plan.m,
        "predicted_m": r ** gamma / c0,
        "slab_clearance": slab_slack,
    })
    return _emit(plan, strict)


def build_carleson_chain(
    from_pt,
    to_pt,
    domain: DomainSpec,
    rule: str = "carleson-log",
    alpha: float | None = None,
    ratio: float = 0.25,
    strict: bool = True,
) -> ChainPlan:
    """Forward-in-time chain from an interior point up to the reference
    point, with cube size proportional to the boundary distance (log
    rule) or to its ``1/alpha`` power (rough-graph rule)."""
    if rule not in ("carleson-log", "carleson-holder"):
        raise ValidationError(f"unknown carleson rule {rule!r}")
    if rule == "carleson-holder" and alpha is None:
        raise ValidationError("carleson-holder rule needs alpha")
    R = 12 / 17 if rule == "carleson-log" else 2 / 3
    x1, x2, t = from_pt
    d0 = height_above_graph(domain, from_pt)
    tx1, tx2, tt = to_pt
    if d0 <= 0:
        raise ValidationError("chain start must lie above the boundary")
    t_extent = R * R if domain.mode == "parabolic" else R
    if abs(x1) > R or abs(t) > t_extent or d0 >= R:
        raise ValidationError(
            f"start point outside the admissible cylinder of size {R:.4g}")
    if tt < t - 1e-12:
        raise ValidationError("no forward-in-time route to the target")

    def size_of(d):
        if rule == "carleson-log":
            return ratio * d
        return ratio * d ** (1 / alpha)

    plan = ChainPlan([], "forward", rule,
                     {"ratio": ratio, "alpha": alpha, "d0": d0})
    if (abs(x1 - tx1) < 1e-12 and abs(x2 - tx2) < 1e-12
            and abs(t - tt) < 1e-12):
        plan.cubes.append(ParabolicCube(to_pt, size_of(d0)))
        plan.meta["m"] = 0
        return _emit(plan, strict)

    d_top = height_above_graph(domain, to_pt)
    cur = np.array([x1, x2, t], dtype=float)
    d = d0
    guard = 0
    # ascent: climb away from the boundary while moving forward in time
    while d < d_top / 2 and guard < 10_000:
        s = size_of(d)
        cube = ParabolicCube(tuple(cur), s)
        plan.cubes.append(cube)
        slack = box_in_cylinder_slack(
            domain, cube.x1_range, cube.x2_range,
            (cube.t_range[0], cube.t_range[1] + s * s), 1.0)
        if slack < _SLACK_TOL:
            plan.violations.append({
                "what": f"ascent cube {guard} exits the unit cylinder "
                        f"(clearance {slack:.3g})", "cube": guard})
        cur = cur + np.array([0.0, s / 2, s * s / 2])
        d = height_above_graph(domain, tuple(cur))
        guard += 1
    if guard >= 10_000:
        raise NumericalRejection("carleson ascent failed to terminate")
    plan.meta["ascent_cubes"] = guard

    # transit: slide to the target at the top scale, strictly forward
    s_top = size_of(max(d, d_top / 2))
    dist = np.array([tx1, tx2, tt]) - cur
    n_steps = max(
        1,
        math.ceil(abs(dist[0]) / (s_top / 2)),
        math.ceil(abs(dist[1]) / (s_top / 2)),
        math.ceil(max(dist[2], 0.0) / (s_top * s_top / 2)),
    )
    if dist[2] < -1e-12:
        plan.violations.append({
            "what": "target lies backward in time from the ascent end",
            "cube": len(plan.cubes)})
    for j in range(1, n_steps + 1):
        c = cur + dist * (j / n_steps)
        plan.cubes.append(ParabolicCube(tuple(c), s_top))
    plan.meta["m"] = plan.m
    plan.meta["predicted"] = (abs(math.log(d0)) if rule == "carleson-log"
                              else d0 ** (1 - 1 / alpha))
    return _emit(plan, strict)


# ---------------------------------------------------------------------------
# translated lattice (one-sided graphs)
# ---------------------------------------------------------------------------

def exact_one_sided_translation(domain: DomainSpec, T: tuple[float, float]) -> bool:
    """Exact subgraph-translation check for the piecewise-bilinear graph.

    ``T = (dx2, dt)`` maps ``{x2 <= g}`` into itself iff
    ``min_{x1, t} [g(x1, t + dt) - g(x1, t)] >= dx2``; for a bilinear
    surface the minimum is attained on lattice columns at lattice times or
    their ``-dt`` shifts, which is what's scanned here.
    """
    if domain.kind != "graph":
        raise ValidationError("translation check needs a graph domain")
    dx2, dt = T
    if dx2 >= 0 or dt < 0:
        raise ValidationError("need a downward, forward-in-time translation")
    g = domain.graph
    ts = g.t_nodes
    cand = np.unique(np.concatenate([ts, ts - dt]))
    cand = cand[(cand >= ts[0]) & (cand + dt <= ts[-1])]
    if cand.size == 0:
        raise ValidationError("graph lattice too short for the time shift")
    xs = g.x1_nodes
    drop = g.eval(xs[:, None], cand[None, :] + dt) - g.eval(xs[:, None],
                                                            cand[None, :])
    return bool(drop.min() >= dx2 - 1e-12)


def build_translated_lattice(
    origin,
    rbar: float,
    kappa: float,
    extent: int,
    domain: DomainSpec,
    r: float = 1.0,
    corridor_height: float | None = None,
    delta: float = 0.05,
    capacity_h: float = 1 / 8,
    capacity_indices: int = 2,
    strict: bool = True,
) -> ChainPlan:
    """Array of cubes stepped by the translation vector, classified.

    Index ``m`` increases *into* the domain: cube ``m`` sits at ``origin +
    m (rbar e_n, -kappa rbar^2)``, so large positive ``m`` land in the
    corridor and large negative ``m`` in the subgraph complement.  Around
    the classification crossover, capacities of the tripled cubes against
    the cylinder complement locate the threshold index ``m0`` with
    ``cap >= delta`` at ``m0`` and ``< delta`` at ``m0 + 1``.
    """
    from .capacity import CapacityQuery, ComplementOfCylinder, parabolic_capacity

    if kappa > 0.5:
        raise ValidationError("kappa must be at most 1/2")
    if corridor_height is None:
        corridor_height = 0.1 * r
    ok = exact_one_sided_translation(domain, (-rbar, kappa * rbar * rbar))
    plan = ChainPlan([], "backward", "translated-lattice",
                     {"rbar": rbar, "kappa": kappa, "extent": extent,
                      "delta": delta, "corridor_height": corridor_height})
    if not ok:
        plan.violations.append({
            "what": "translation does not map the subgraph complement "
                    "into itself (one-sided bound fails at this kappa)",
            "cube": 0})
        return _emit(plan, strict)

    x1, x2, t0 = origin
    ms = list(range(-extent, extent + 1))
    labels = []
    for m in ms:
        c = (x1, x2 + m * rbar, t0 - m * kappa * rbar * rbar)
        cube = ParabolicCube(c, rbar)
        plan.cubes.append(cube)
        tri = cube.scaled(3.0)
        corr = box_in_corridor_slack(domain, tri.x1_range, tri.x2_range,
                                     tri.t_range, r, corridor_height)
        if corr > 0:
            labels.append("corridor")
            continue
        gmin, _ = domain.graph.minmax_over_box(cube.x1_range, cube.t_range)
        if cube.x2_range[1] <= gmin:
            labels.append("complement")
        else:
            labels.append("intermediate")
    plan.meta["labels"] = labels

    order = {"complement": 0, "intermediate": 1, "corridor": 2}
    codes = [order[l] for l in labels]
    if codes != sorted(codes):
        plan.violations.append({
            "what": "classification is not monotone along the lattice",
            "cube": int(np.argmin(np.diff(codes)))})

    # capacity threshold around the intermediate band
    inter = [m for m, l in zip(ms, labels) if l != "corridor"]
    if inter:
        lo = max(ms[0], inter[-1] - capacity_indices)
        hi = min(ms[-1], inter[-1] + capacity_indices + 1)
        E = ComplementOfCylinder(domain, r=1.0)
        caps = {}
        for m in range(lo, hi + 1):
            cube = plan.cubes[ms.index(m)].scaled(3.0)
            res = parabolic_capacity(CapacityQuery(
                E, cube, h=capacity_h, store=False))
            caps[m] = res.value
        plan.meta["capacities"] = caps
        above = [m for m, v in caps.items() if v >= delta]
        plan.meta["m0"] = max(above) if above else None
    plan.meta["m"] = plan.m
    return _emit(plan, strict)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def field_extrema_over_cube(fld: Field, cube: ParabolicCube):
    """(min, max) of the field over stored active cells inside the cube."""
    g = fld.grid
    eps = 1e-12
    sel1 = ((g.x1s > cube.x1_range[0] - eps)
            & (g.x1s < cube.x1_range[1] + eps))
    sel2 = ((g.x2s > cube.x2_range[0] - eps)
            & (g.x2s < cube.x2_range[1] + eps))
    vals = []
    for p, k in enumerate(fld.stored_ks):
        t = g.t(k)
        if not (cube.t_range[0] - eps < t <= cube.t_range[1] + eps):
            continue
        block = fld.values[np.ix_(sel1, sel2, [p])]
        ab = fld.active[np.ix_(sel1, sel2, [p])]
        if ab.any():
            vals.append(block[ab])
    if not vals:
        raise ValidationError(
            f"cube at {cube.center} r={cube.r:.4g} contains no stored cells")
    allv = np.concatenate(vals)
    return float(allv.min()), float(allv.max())


def propagate_harnack(chain: ChainPlan, fld: Field,
                      per_cube_factor: float) -> ChainBound:
    """Multiplicative Harnack bound along a chain.

    The head lower bound is the field minimum over the tail cube times
    ``c^m``.  Also measures the empirical per-cube factors
    ``min(Q_j) / max(Q_{j+1})`` for calibrating ``c``; the bound is sound
    when it does not exceed the true head value.
    """
    if not 0 < per_cube_factor <= 1:
        raise ValidationError("per-cube factor must lie in (0, 1]")
    tol = 1e-12
    for j, cube in enumerate(chain.cubes):
        lo, _ = field_extrema_over_cube(fld, cube.scaled(2.0))
        if lo < -tol:
            raise NumericalRejection(
                f"field is negative inside doubled chain cube {j}")
    m = chain.m
    tail_min, _ = field_extrema_over_cube(fld, chain.cubes[-1])
    propagated = tail_min * per_cube_factor ** m
    factors = []
    for j in range(m):
        mn, _ = field_extrema_over_cube(fld, chain.cubes[j])
        _, mx = field_extrema_over_cube(fld, chain.cubes[j + 1])
        factors.append(mn / mx if mx > 0 else math.inf)
    from .solver import evaluate
    head_value = evaluate(fld, chain.cubes[0].center)
    return ChainBound(
        start_value=tail_min, per_cube_factor=per_cube_factor, m=m,
        propagated=propagated, head_value=head_value,
        empirical_factors=np.array(factors),
        sound=propagated <= head_value + 1e-9 * max(1.0, abs(head_value)))


def calibrate_harnack_factor(h: float = 1 / 16, tau: float | None = None) -> float:
    """Empirical per-cube Harnack factor for the heat operator.

    Solves the heat equation in the unit backward cube for a fixed family
    of positive boundary data and measures ``min Q_{1/2} / max
    Q_{1/2}(0, -1/2)``; returns half the worst ratio as a conservative
    reusable constant.
    """
    from .capacity import solve_on_q1

    if tau is None:
        tau = 4 * h * h
    datasets = [
        lambda x1, x2, t: np.ones(np.broadcast(x1, x2).shape),
        lambda x1, x2, t: 1.5 + np.asarray(x2),
        lambda x1, x2, t: np.exp(-2 * (np.asarray(x1) ** 2
                                       + np.asarray(x2) ** 2)),
        lambda x1, x2, t: 0.1 + (np.asarray(x1) + 1) ** 2,
    ]
    upper = ParabolicCube((0.0, 0.0, 0.0), 0.5)
    lower = ParabolicCube((0.0, 0.0, -0.5), 0.5)
    worst = math.inf
    for data in datasets:
        fld = solve_on_q1(data, h, tau)
        mn, _ = field_extrema_over_cube(fld, upper)
        _, mx = field_extrema_over_cube(fld, lower)
        if mx > 0:
            worst = min(worst, mn / mx)
    return 0.5 * worst
