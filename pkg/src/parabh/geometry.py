"""Space-time domains: rough graphs, slit sets, cylinders and corridors.

A graph domain is the region above ``{x2 = g(x1, t)}`` for a continuous
``g`` normalized by ``g(0, 0) = 0``; a slit domain is a cube minus a
closed subset of the hyperplane ``{x2 = 0}``.  Cylinders come in two
flavours: parabolically scaled (time extent ``r^2``) and the anisotropic
variant with time extent ``r`` used for rough Hoelder graphs, where
parabolic scaling no longer preserves the graph class.

Graphs are stored as values on their own canonical lattice and evaluated
by bilinear interpolation, so a graph is *exactly* a piecewise-bilinear
surface.  Min/max queries over axis-aligned boxes are exact (bilinear
extrema sit at subdivision corners), which is what makes the chain
containment certificates in :mod:`parabh.chains` rigorous for the stored
surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import CellMask, SNAP_FRACTION, SpaceTimeGrid, _aligned_index


# ---------------------------------------------------------------------------
# graph functions
# ---------------------------------------------------------------------------

@dataclass
class GraphFunction:
    """Piecewise-bilinear boundary graph with Hoelder metadata.

    ``values[i, k]`` is ``g`` at the lattice node ``(x1, t) =
    ((i_lo + i) gh, (k_lo + k) gtau)``.  ``K`` bounds the certified
    empirical seminorm (pairwise lattice scan); with ``one_sided_half``
    set it also bounds the one-sided backward-in-time square-root drop.
    """

    values: np.ndarray
    gh: float
    gtau: float
    i_lo: int
    k_lo: int
    alpha: float
    beta_t: float
    K: float
    one_sided_half: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValidationError("graph values must be a 2-d lattice")

    # -- lattice coordinates -------------------------------------------
    @property
    def x1_nodes(self) -> np.ndarray:
        return (self.i_lo + np.arange(self.values.shape[0])) * self.gh

    @property
    def t_nodes(self) -> np.ndarray:
        return (self.k_lo + np.arange(self.values.shape[1])) * self.gtau

    def _locate(self, q: np.ndarray, lo: int, step: float, n: int):
        s = q / step - lo
        i0 = np.clip(np.floor(s).astype(int), 0, n - 2)
        w = np.clip(s - i0, 0.0, 1.0)
        return i0, w

    def eval(self, x1, t):
        """Bilinear interpolation, clamped to the lattice hull."""
        x1 = np.asarray(x1, dtype=float)
        t = np.asarray(t, dtype=float)
        x1b, tb = np.broadcast_arrays(x1, t)
        m1, mt = self.values.shape
        i0, wx = self._locate(x1b, self.i_lo, self.gh, m1)
        k0, wt = self._locate(tb, self.k_lo, self.gtau, mt)
        v = self.values
        out = (v[i0, k0] * (1 - wx) * (1 - wt)
               + v[i0 + 1, k0] * wx * (1 - wt)
               + v[i0, k0 + 1] * (1 - wx) * wt
               + v[i0 + 1, k0 + 1] * wx * wt)
        return out if out.ndim else float(out)

    def minmax_over_box(self, x1_range, t_range) -> tuple[float, float]:
        """Exact min/max of the interpolant over a closed box."""
        a1, b1 = x1_range
        a2, b2 = t_range
        xs = self.x1_nodes
        ts = self.t_nodes
        a1 = max(a1, xs[0]); b1 = min(b1, xs[-1])
        a2 = max(a2, ts[0]); b2 = min(b2, ts[-1])
        if a1 > b1 or a2 > b2:
            raise ValidationError("box outside the graph lattice hull")
        cx = np.unique(np.concatenate([[a1, b1], xs[(xs > a1) & (xs < b1)]]))
        ct = np.unique(np.concatenate([[a2, b2], ts[(ts > a2) & (ts < b2)]]))
        vals = self.eval(cx[:, None], ct[None, :])
        return float(np.min(vals)), float(np.max(vals))

    # -- certification ---------------------------------------------------
    def certified_seminorm(self) -> float:
        """Exhaustive lattice-pair scan of |dg| / (|dx|^a + |dt|^b)."""
        v = self.values
        m1, mt = v.shape
        best = 0.0
        for di in range(m1):
            dx = (di * self.gh) ** self.alpha if di else 0.0
            for dk in range(-(mt - 1), mt):
                if di == 0 and dk <= 0:
                    continue
                dt = (abs(dk) * self.gtau) ** self.beta_t if dk else 0.0
                if dk >= 0:
                    diff = v[di:, dk:] - v[: m1 - di, : mt - dk]
                else:
                    diff = v[di:, : mt + dk] - v[: m1 - di, -dk:]
                m = float(np.max(np.abs(diff)))
                denom = dx + dt
                if m > best * denom:
                    best = m / denom
        return best

    def certified_one_sided(self) -> float:
        """Smallest K with g(x, t+s) - g(x, t) >= -K sqrt(s) on the lattice."""
        v = self.values
        mt = v.shape[1]
        best = 0.0
        for dk in range(1, mt):
            drop = float(np.min(v[:, dk:] - v[:, : mt - dk]))
            if drop < 0:
                best = max(best, -drop / math.sqrt(dk * self.gtau))
        return best

    def verify(self, tol: float = 1e-9) -> dict:
        """Check the stored bounds against the lattice scans."""
        s2 = self.certified_seminorm()
        report = {
            "seminorm": s2,
            "seminorm_ok": s2 <= self.K * (1 + tol) + tol,
            "origin_ok": abs(self.eval(0.0, 0.0)) <= tol,
        }
        if self.one_sided_half:
            s1 = self.certified_one_sided()
            report["one_sided"] = s1
            report["one_sided_ok"] = s1 <= self.K * (1 + tol) + tol
        return report

    def is_static(self) -> bool:
        return bool(np.all(self.values == self.values[:, :1]))


def flat_graph(extent: float = 1.25, resolution: int = 8) -> GraphFunction:
    """The zero graph (flat halfspace boundary)."""
    n = int(round(2 * extent * resolution))
    gh = 1.0 / resolution
    vals = np.zeros((n + 1, n + 1))
    return GraphFunction(vals, gh, gh, -n // 2, -n // 2,
                         alpha=1.0, beta_t=0.5, K=0.0)


_SAMPLE_CACHE: dict = {}


def sample_holder_graph(
    alpha: float,
    beta_t: float,
    K: float,
    seed: int,
    resolution: int = 32,
    extent: float = 1.25,
    one_sided: bool = False,
    k_max: int | None = None,
) -> GraphFunction:
    """Draw a lacunary-cosine graph with certified seminorm exactly ``K``.

    The raw surface is a finite sum of products ``a^{-alpha k}
    cos(a^k w x1 + phi) cos(a^{alpha k / beta_t} nu t + psi)`` with random
    signs and phases (base ``a = 2``), normalized to vanish at the origin
    and rescaled so the lattice-certified seminorm equals ``K``.  With
    ``one_sided`` the time dependence is replaced by a profile built from
    square-root drops, so the one-sided half-Hoelder bound is certified
    as well.  Deterministic for a fixed seed.
    """
    if not (0 < alpha <= 1 and 0 < beta_t <= 1):
        raise ValidationError("exponents must lie in (0, 1]")
    if K < 0:
        raise ValidationError("seminorm bound K must be nonnegative")
    if resolution < 8:
        raise ValidationError(
            "resolution too coarse to certify the seminorm "
            f"(need >= 8 cells per unit, got {resolution})")
    key = (alpha, beta_t, K, seed, resolution, extent, one_sided, k_max)
    if key in _SAMPLE_CACHE:
        return _SAMPLE_CACHE[key]

    n = int(round(2 * extent * resolution))
    gh = 1.0 / resolution
    i_lo = -(n // 2)
    xs = (i_lo + np.arange(n + 1)) * gh
    ts = xs.copy()
    if k_max is None:
        k_max = max(2, int(math.log2(resolution)) - 1)

    if K == 0.0:
        g = GraphFunction(np.zeros((n + 1, n + 1)), gh, gh, i_lo, i_lo,
                          alpha=alpha, beta_t=beta_t, K=0.0,
                          one_sided_half=one_sided)
        _SAMPLE_CACHE[key] = g
        return g

    rng = np.random.default_rng(seed)
    a = 2.0
    vals = np.zeros((n + 1, n + 1))
    X = xs[:, None]
    T = ts[None, :]
    for j in range(k_max + 1):
        amp = a ** (-alpha * j)
        fx = a ** j
        sx = rng.choice([-1.0, 1.0])
        phx = rng.uniform(0, 2 * math.pi)
        space = np.cos(fx * sx * X + phx)
        if one_sided:
            vals += amp * space
        else:
            ft = a ** (alpha * j / beta_t)
            st = rng.choice([-1.0, 1.0])
            pht = rng.uniform(0, 2 * math.pi)
            vals += amp * space * np.cos(ft * st * T + pht)
    if one_sided:
        # time profile: gentle linear rise plus square-root drops, which
        # certify the backward-in-time half-Hoelder bound by construction
        t_drop = rng.uniform(-0.5, 0.0)
        c_rise = rng.uniform(0.1, 0.3)
        profile = c_rise * T - np.sqrt(np.maximum(T - t_drop, 0.0))
        vals = vals + profile

    g = GraphFunction(vals, gh, gh, i_lo, i_lo, alpha=alpha, beta_t=beta_t,
                      K=1.0, one_sided_half=one_sided)
    g.values -= g.eval(0.0, 0.0)
    certs = [g.certified_seminorm()]
    if one_sided:
        certs.append(g.certified_one_sided())
    binding = max(certs)
    g.values *= K / binding
    g.K = K
    _SAMPLE_CACHE[key] = g
    return g


# ---------------------------------------------------------------------------
# slit sets
# ---------------------------------------------------------------------------

@dataclass
class SlitSet:
    """Closed subset of ``{x2 = 0}`` as a union of closed lattice cells.

    ``mask[i, k]`` marks the closed cell ``[i sh, (i+1) sh] x
    [k stau, (k+1) stau]`` in the ``(x1, t)`` plane.
    """

    mask: np.ndarray
    sh: float
    stau: float
    i_lo: int
    k_lo: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)

    @classmethod
    def from_boxes(cls, boxes, sh: float = 1 / 64, stau: float = 1 / 64,
                   extent: float = 1.0) -> "SlitSet":
        """Rasterize closed boxes ``{"x1": (a, b), "t": (c, d)}``."""
        n = int(round(2 * extent / sh))
        m = int(round(2 * extent / stau))
        i_lo, k_lo = -(n // 2), -(m // 2)
        mask = np.zeros((n, m), dtype=bool)
        e1 = (i_lo + np.arange(n)) * sh          # cell lower edges
        e2 = (k_lo + np.arange(m)) * stau
        for b in boxes:
            (a1, b1), (a2, b2) = b["x1"], b["t"]
            sel1 = (e1 + sh >= a1 - 1e-12) & (e1 <= b1 + 1e-12)
            sel2 = (e2 + stau >= a2 - 1e-12) & (e2 <= b2 + 1e-12)
            mask[np.ix_(sel1, sel2)] = True
        return cls(mask, sh, stau, i_lo, k_lo)

    def contains(self, x1, t) -> np.ndarray:
        """Closed-cell membership for points (vectorized)."""
        x1 = np.asarray(x1, dtype=float)
        t = np.asarray(t, dtype=float)
        x1b, tb = np.broadcast_arrays(x1, t)
        out = np.zeros(x1b.shape, dtype=bool)
        n, m = self.mask.shape
        q1 = x1b / self.sh - self.i_lo
        q2 = tb / self.stau - self.k_lo
        for d1 in (-1e-9, 1e-9):
            for d2 in (-1e-9, 1e-9):
                i = np.floor(q1 + d1).astype(int)
                k = np.floor(q2 + d2).astype(int)
                ok = (i >= 0) & (i < n) & (k >= 0) & (k < m)
                hit = np.zeros_like(out)
                hit[ok] = self.mask[i[ok], k[ok]]
                out |= hit
        return out if out.ndim else bool(out)

    def is_empty(self) -> bool:
        return not self.mask.any()


# ---------------------------------------------------------------------------
# domain spec and parabolic cubes
# ---------------------------------------------------------------------------

@dataclass
class DomainSpec:
    """Either a graph domain or a slit domain, plus the cylinder mode."""

    kind: str                      # 'graph' | 'slit'
    graph: GraphFunction | None = None
    slit: SlitSet | None = None
    mode: str = "parabolic"        # 'parabolic' | 'holder'

    def __post_init__(self):
        if self.kind not in ("graph", "slit"):
            raise ValidationError(f"unknown domain kind {self.kind!r}")
        if self.kind == "graph" and self.graph is None:
            raise ValidationError("graph kind requires a GraphFunction")
        if self.kind == "slit" and self.slit is None:
            raise ValidationError("slit kind requires a SlitSet")
        if self.mode not in ("parabolic", "holder"):
            raise ValidationError(f"unknown cylinder mode {self.mode!r}")
        if self.mode == "holder" and self.kind != "graph":
            raise ValidationError("holder mode is defined for graph domains only")


@dataclass(frozen=True)
class ParabolicCube:
    """Cube of size r: extent ``center + (-r, r)^2 x (-r^2, 0]``."""

    center: tuple[float, float, float]   # (x1, x2, t)
    r: float

    @property
    def x1_range(self):
        return (self.center[0] - self.r, self.center[0] + self.r)

    @property
    def x2_range(self):
        return (self.center[1] - self.r, self.center[1] + self.r)

    @property
    def t_range(self):
        return (self.center[2] - self.r ** 2, self.center[2])

    def scaled(self, factor: float) -> "ParabolicCube":
        """Concentric cube of size ``factor * r`` (same top time)."""
        return ParabolicCube(self.center, factor * self.r)

    def contains_point(self, x1: float, x2: float, t: float) -> bool:
        return (self.x1_range[0] < x1 < self.x1_range[1]
                and self.x2_range[0] < x2 < self.x2_range[1]
                and self.t_range[0] < t <= self.t_range[1])


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def _graph_surfaces(domain: DomainSpec, grid: SpaceTimeGrid, r: float,
                    center: tuple[float, float]):
    g = domain.graph
    x1c, tc = center
    gv = g.eval(grid.x1s[:, None], grid.ts[None, :])
    gv = np.atleast_2d(gv)
    bot = gv.copy()
    top = gv + r
    if domain.mode == "holder":
        x2c = float(g.eval(x1c, tc))
        bot = np.maximum(bot, x2c - r)
        top = np.minimum(top, x2c + r)
    return bot, top


def _validate_center(grid: SpaceTimeGrid, center: tuple[float, float]):
    x1c, tc = center
    _aligned_index(2 * x1c, grid.h, "center x1 (half-step lattice)")
    _aligned_index(tc, grid.tau, "center t")


def cylinder_mask(
    domain: DomainSpec,
    r: float,
    grid: SpaceTimeGrid,
    center: tuple[float, float] = (0.0, 0.0),
    backward: bool = False,
) -> CellMask:
    """Cells of the cylinder of size ``r`` on top of the boundary.

    Graph kind: ``{|x1 - x1c| < r, g < x2 < g + r}`` with time extent
    ``r^2`` (two-sided unless ``backward``) in parabolic mode, or the
    backward anisotropic window of length ``r`` in holder mode.  Slit
    kind: the cube ``(-r, r)^2`` minus the slit, centered at the origin.
    The earliest slice is included and carries the initial data.
    """
    if r <= 0:
        raise ValidationError("cylinder size r must be positive")
    _validate_center(grid, center)
    x1c, tc = center
    if domain.kind == "slit":
        if center != (0.0, 0.0):
            raise ValidationError("slit cylinders are centered at the origin")
        t0, t1 = (-r * r, 0.0) if backward else (-r * r, r * r)
        slit_at = None
        if not domain.slit.is_empty():
            slit_at = domain.slit.contains(grid.x1s[:, None],
                                           grid.ts[None, :])
        bot = np.full((grid.n1, grid.nk), -r)
        top = np.full((grid.n1, grid.nk), r)
        return CellMask(grid, (-r, r), bot, top, (t0, t1), slit_at=slit_at,
                        flags={"kind": "cylinder", "r": r,
                               "backward": backward, "mode": "parabolic"})

    if domain.mode == "holder":
        if not backward:
            raise ValidationError("holder-mode cylinders are backward only")
        t0, t1 = tc - r, tc
    else:
        t0, t1 = (tc - r * r, tc) if backward else (tc - r * r, tc + r * r)
    bot, top = _graph_surfaces(domain, grid, r, center)
    return CellMask(grid, (x1c - r, x1c + r), bot, top, (t0, t1),
                    flags={"kind": "cylinder", "r": r, "backward": backward,
                           "mode": domain.mode, "center": center})


def corridor_mask(
    domain: DomainSpec,
    r: float,
    height: float,
    grid: SpaceTimeGrid,
    center: tuple[float, float] = (0.0, 0.0),
) -> CellMask:
    """Cells of the backward cylinder at height >= ``height`` above the
    boundary (graph), or with ``|x2| >= height`` (slit)."""
    if height <= 0:
        raise ValidationError("corridor height must be positive")
    cyl = cylinder_mask(domain, r, grid, center=center, backward=True)
    flags = {"kind": "corridor", "r": r, "height": height}
    if height >= r:
        flags["empty_corridor"] = True
        cyl.active[:] = False
        cyl.flags.update(flags)
        return cyl
    x2 = grid.x2s[None, :, None]
    if domain.kind == "slit":
        keep = np.abs(x2) >= height * (1 - 1e-12)
    else:
        bot = cyl.bot[:, None, :]
        keep = (x2 - bot) >= height * (1 - 1e-12)
    cyl.active &= np.broadcast_to(keep, cyl.active.shape)
    cyl.flags.update(flags)
    return cyl


def height_above_graph(domain: DomainSpec, point) -> float:
    """Signed height ``x2 - g(x1, t)`` of a space-time point."""
    if domain.kind != "graph":
        raise ValidationError("height above the graph needs a graph domain")
    x1, x2, t = point
    return float(x2 - domain.graph.eval(x1, t))


def check_one_sided_translation(
    domain: DomainSpec,
    T: tuple[float, float],
    grid: SpaceTimeGrid,
) -> bool:
    """True iff the subgraph region ``{x2 <= g}`` maps into itself under
    the translation ``T = (-rbar * e_n, kappa * rbar^2)``.

    The lattice check: every below-graph cell whose ``T``-translate lands
    in the grid window must again be below the graph.
    """
    if domain.kind != "graph":
        raise ValidationError("translation check needs a graph domain")
    dx2, dt = T
    if dx2 >= 0:
        raise ValidationError("translation must shift downward in x2")
    if dt < 0:
        raise ValidationError("translation must shift forward in time")
    dj = _aligned_index(-dx2, grid.h, "translation x2 shift")
    dk = _aligned_index(dt, grid.tau, "translation t shift")
    gv = domain.graph.eval(grid.x1s[:, None], grid.ts[None, :])
    x2 = grid.x2s[None, :, None]
    comp = x2 <= gv[:, None, :] + SNAP_FRACTION * grid.h
    n2, nk = grid.n2, grid.nk
    if dj >= n2 or dk >= nk:
        return True
    src = comp[:, dj:, : nk - dk] if dk else comp[:, dj:, :]
    dst = comp[:, : n2 - dj, dk:] if dk else comp[:, : n2 - dj, :]
    return bool(np.all(~src | dst))


# ---------------------------------------------------------------------------
# containment certificates (used by the chain builders)
# ---------------------------------------------------------------------------

def box_in_cylinder_slack(
    domain: DomainSpec,
    x1_range, x2_range, t_range,
    r: float,
    center: tuple[float, float] = (0.0, 0.0),
) -> float:
    """Smallest clearance of a closed box inside the backward cylinder.

    Positive slack certifies containment of the continuum box (exact for
    the piecewise-bilinear graph).  Graph domains only.
    """
    if domain.kind == "graph":
        x1c, tc = center
        gmin, gmax = domain.graph.minmax_over_box(x1_range, t_range)
        t_lo = tc - (r if domain.mode == "holder" else r * r)
        slacks = [
            x1_range[0] - (x1c - r), (x1c + r) - x1_range[1],
            t_range[0] - t_lo, tc - t_range[1],
            x2_range[0] - gmax, (gmin + r) - x2_range[1],
        ]
        if domain.mode == "holder":
            x2c = float(domain.graph.eval(x1c, tc))
            slacks += [x2_range[0] - (x2c - r), (x2c + r) - x2_range[1]]
        return float(min(slacks))
    # slit: box inside Q_r^- avoiding the slit plane when S is present
    slacks = [
        x1_range[0] + r, r - x1_range[1],
        x2_range[0] + r, r - x2_range[1],
        t_range[0] + r * r, 0.0 - t_range[1],
    ]
    if not domain.slit.is_empty():
        if x2_range[0] < 0 < x2_range[1]:
            xs = np.linspace(x1_range[0], x1_range[1], 9)
            tt = np.linspace(t_range[0], t_range[1], 9)
            if domain.slit.contains(xs[:, None], tt[None, :]).any():
                slacks.append(-1.0)
    return float(min(slacks))


def box_in_corridor_slack(
    domain: DomainSpec,
    x1_range, x2_range, t_range,
    r: float,
    height: float,
    center: tuple[float, float] = (0.0, 0.0),
) -> float:
    """Clearance of a closed box inside the corridor of the given height."""
    base = box_in_cylinder_slack(domain, x1_range, x2_range, t_range, r,
                                 center)
    if domain.kind == "graph":
        _, gmax = domain.graph.minmax_over_box(x1_range, t_range)
        return float(min(base, x2_range[0] - (gmax + height)))
    lo = min(abs(x2_range[0]), abs(x2_range[1]))
    if x2_range[0] < 0 < x2_range[1]:
        lo = 0.0
    return float(min(base, lo - height))
