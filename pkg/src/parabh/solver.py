"""Backward-Euler finite differences on masked space-time grids.

The spatial operator is discretized per time slice with Shortley-Weller
one-sided differences at cut boundaries (arm fractions come from the
mask), a monotone 7-point stencil for non-divergence cross terms (valid
while ``|a12| <= min(a11, a22)``; anything beyond is rejected rather than
silently losing the comparison principle), and harmonic face averaging
for divergence-form diagonal coefficients.  Every implicit system is an
M-matrix, so the discrete maximum principle holds slice by slice.

Linear systems are solved by a cached deterministic sparse LU
factorization followed by iterative refinement until the max-norm
residual is at or below ``linear_tol``; a solve that cannot reach the
tolerance within ``max_sweeps`` refinement passes is rejected.  Identical
inputs produce bit-identical solutions on a given platform.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalRejection, ValidationError
from .grid import CellMask, SliceGeometry, SpaceTimeGrid

_PERM_SPEC = "MMD_AT_PLUS_A"  # symmetric-pattern ordering: small, fast fill


# ---------------------------------------------------------------------------
# coefficients and configuration
# ---------------------------------------------------------------------------

def _as_coef(c):
    if callable(c):
        return c
    return lambda x1, x2, v=float(c): np.full(np.broadcast(x1, x2).shape, v)


@dataclass
class EllipticCoefficients:
    """Uniformly elliptic symmetric coefficients ``lam I <= A <= Lam I``.

    Entries may be constants or callables of the cell centers.  For the
    heat equation use :meth:`identity`, where both forms coincide.
    """

    form: str                  # 'nondivergence' | 'divergence'
    a11: object = 1.0
    a12: object = 0.0
    a22: object = 1.0
    lam: float = 1.0
    Lam: float = 1.0

    def __post_init__(self):
        if self.form not in ("nondivergence", "divergence"):
            raise ValidationError(f"unknown operator form {self.form!r}")
        if not (0 < self.lam <= self.Lam):
            raise ValidationError("need 0 < lambda <= Lambda")

    @classmethod
    def identity(cls, form: str = "nondivergence") -> "EllipticCoefficients":
        return cls(form=form, a11=1.0, a12=0.0, a22=1.0, lam=1.0, Lam=1.0)

    def is_identity(self) -> bool:
        return (not callable(self.a11) and not callable(self.a12)
                and not callable(self.a22)
                and float(self.a11) == 1.0 and float(self.a12) == 0.0
                and float(self.a22) == 1.0)

    def fields(self, grid: SpaceTimeGrid):
        """Evaluate (A11, A12, A22) at cell centers; check the bounds."""
        X1 = grid.x1s[:, None]
        X2 = grid.x2s[None, :]
        A11 = np.broadcast_to(_as_coef(self.a11)(X1, X2), (grid.n1, grid.n2)).astype(float)
        A12 = np.broadcast_to(_as_coef(self.a12)(X1, X2), (grid.n1, grid.n2)).astype(float)
        A22 = np.broadcast_to(_as_coef(self.a22)(X1, X2), (grid.n1, grid.n2)).astype(float)
        tr = A11 + A22
        det = A11 * A22 - A12 * A12
        disc = np.sqrt(np.maximum((A11 - A22) ** 2 + 4 * A12 * A12, 0.0))
        emin = (tr - disc) / 2
        emax = (tr + disc) / 2
        tol = 1e-9 * max(1.0, self.Lam)
        if emin.min() < self.lam - tol or emax.max() > self.Lam + tol:
            raise ValidationError(
                "coefficient eigenvalues leave [lambda, Lambda]: "
                f"[{emin.min():.6g}, {emax.max():.6g}]")
        if self.form == "nondivergence":
            slack = np.minimum(A11, A22) - np.abs(A12)
            if slack.min() < -1e-12:
                i, j = np.unravel_index(np.argmin(slack), slack.shape)
                raise NumericalRejection(
                    "non-monotone stencil: |a12| > min(a11, a22) at cell "
                    f"(x1={grid.x1s[i]:.6g}, x2={grid.x2s[j]:.6g}); "
                    "the 7-point discretization would lose the maximum "
                    "principle")
        else:
            if np.abs(A12).max() > 1e-14:
                if callable(self.a11) or callable(self.a12) or callable(self.a22):
                    raise NumericalRejection(
                        "divergence form with variable cross terms is not "
                        "supported (no monotone flux stencil); use a "
                        "diagonal A or constant coefficients")
        return A11, A12, A22


@dataclass
class SolveConfig:
    """Resolution and linear-solve policy."""

    h: float
    tau: float
    linear_tol: float = 1e-10
    max_sweeps: int = 8
    store_every: int = 1    # 0: keep only the data and final slices

    def __post_init__(self):
        if self.h <= 0 or self.tau <= 0 or self.linear_tol <= 0:
            raise ValidationError("h, tau and linear_tol must be positive")


def as_data(data):
    """Normalize boundary data to a callable ``f(x1, x2, t) -> array``."""
    if callable(data):
        return data
    v = float(data)
    return lambda x1, x2, t: np.full(np.broadcast(x1, x2).shape, v)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class Field:
    """Scalar lattice function on (a stored subset of) a space-time grid."""

    def __init__(self, grid: SpaceTimeGrid, stored_ks: np.ndarray,
                 values: np.ndarray, active: np.ndarray, meta: dict | None = None):
        self.grid = grid
        self.stored_ks = np.asarray(stored_ks, dtype=int)
        self.values = values            # [n1, n2, len(stored_ks)]
        self.active = active            # bool, same shape
        self.meta = dict(meta or {})
        self._kpos = {int(k): p for p, k in enumerate(self.stored_ks)}

    def k_pos(self, k: int) -> int:
        try:
            return self._kpos[int(k)]
        except KeyError:
            raise ValidationError(f"slice {k} was not stored") from None

    def slice_values(self, k: int) -> np.ndarray:
        return self.values[:, :, self.k_pos(k)]

    def slice_active(self, k: int) -> np.ndarray:
        return self.active[:, :, self.k_pos(k)]

    def masked(self) -> np.ndarray:
        out = self.values.copy()
        out[~self.active] = np.nan
        return out

    def max_abs(self) -> float:
        if not self.active.any():
            return 0.0
        return float(np.abs(self.values[self.active]).max())

    def min_over(self, mask: CellMask) -> float:
        """Minimum over the stored slices that intersect a mask."""
        return self._reduce_over(mask, np.min)

    def max_over(self, mask: CellMask) -> float:
        return self._reduce_over(mask, np.max)

    def _reduce_over(self, mask: CellMask, red):
        if mask.grid != self.grid:
            raise ValidationError("field/mask grid mismatch")
        vals = []
        for p, k in enumerate(self.stored_ks):
            sel = mask.active[:, :, k] & self.active[:, :, p]
            if sel.any():
                vals.append(red(self.values[:, :, p][sel]))
        if not vals:
            raise ValidationError("mask does not meet the stored field")
        return float(red(np.array(vals)))


def evaluate(fld: Field, point) -> float:
    """Multilinear interpolation of a field at an interior point."""
    x1, x2, t = point
    g = fld.grid
    s = (t - g.t_origin) / g.tau - g.k_lo
    k0 = int(np.floor(s + 1e-12))
    wt = s - k0
    if abs(wt) < 1e-9:
        wt = 0.0
    if abs(wt - 1.0) < 1e-9:
        k0, wt = k0 + 1, 0.0
    parts = [(k0, 1 - wt)] if wt == 0.0 else [(k0, 1 - wt), (k0 + 1, wt)]

    def plane(kk: int) -> float:
        p = fld.k_pos(kk)
        q1 = x1 / g.h - g.i1_lo - g.offset
        q2 = x2 / g.h - g.i2_lo - g.offset
        out = 0.0
        for (i0, w1) in _axis_weights(q1, g.n1):
            for (j0, w2) in _axis_weights(q2, g.n2):
                if w1 == 0.0 or w2 == 0.0:
                    continue
                if not fld.active[i0, j0, p]:
                    raise ValidationError(
                        f"point {point} touches an inactive cell")
                out += w1 * w2 * fld.values[i0, j0, p]
        return out

    return float(sum(w * plane(kk) for kk, w in parts))


def _axis_weights(q: float, n: int):
    i0 = int(np.floor(q + 1e-12))
    w = q - i0
    if abs(w) < 1e-9:
        w = 0.0
    if abs(w - 1.0) < 1e-9:
        i0, w = i0 + 1, 0.0
    if w == 0.0:
        if not 0 <= i0 < n:
            raise ValidationError("point outside the grid window")
        return [(i0, 1.0)]
    if not 0 <= i0 < n - 1:
        raise ValidationError("point outside the grid window")
    return [(i0, 1.0 - w), (i0 + 1, w)]


# ---------------------------------------------------------------------------
# slice systems
# ---------------------------------------------------------------------------

class _LUCache:
    """Small LRU cache of sparse LU factorizations keyed by matrix bytes."""

    def __init__(self, maxsize: int = 8):
        self.maxsize = maxsize
        self._store: OrderedDict = OrderedDict()

    def get(self, A: sp.csc_matrix):
        key = hashlib.blake2b(
            A.data.tobytes() + A.indices.tobytes() + A.indptr.tobytes()
            + str(A.shape).encode(), digest_size=16).digest()
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        lu = spla.splu(A, permc_spec=_PERM_SPEC)
        self._store[key] = lu
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return lu


def _arm_coefficients(geom: SliceGeometry, A11, A12, A22, form: str, h: float):
    """Positive stencil weights per arm; returns axis + diagonal parts."""
    h2 = h * h
    if form == "nondivergence":
        ax1 = A11 - np.abs(A12)
        ax2 = A22 - np.abs(A12)
        tw, te, ts, tn = geom.theta_w, geom.theta_e, geom.theta_s, geom.theta_n
        c_w = 2 * ax1 / (h2 * tw * (tw + te))
        c_e = 2 * ax1 / (h2 * te * (tw + te))
        c_s = 2 * ax2 / (h2 * ts * (ts + tn))
        c_n = 2 * ax2 / (h2 * tn * (ts + tn))
        pos = np.maximum(A12, 0.0) / h2     # NE/SW pair
        neg = np.maximum(-A12, 0.0) / h2    # NW/SE pair
        return c_w, c_e, c_s, c_n, pos, neg

    # divergence form, diagonal A: harmonic face averages between active
    # cells, one-sided coefficient on cut arms
    act = geom.active

    def shifted(a, di, dj):
        out = a.copy()
        s1 = slice(max(0, -di), a.shape[0] - max(0, di))
        d1 = slice(max(0, di), a.shape[0] - max(0, -di))
        s2 = slice(max(0, -dj), a.shape[1] - max(0, dj))
        d2 = slice(max(0, dj), a.shape[1] - max(0, -dj))
        out[s1, s2] = a[d1, d2]
        return out

    def face_coef(a, theta, di, dj):
        nb_act = shifted(act.astype(float), di, dj) > 0.5
        nb_a = shifted(a, di, dj)
        harm = 2 * a * nb_a / (a + nb_a)
        return np.where(nb_act, harm, a / theta) / h2

    c_w = face_coef(A11, geom.theta_w, -1, 0)
    c_e = face_coef(A11, geom.theta_e, +1, 0)
    c_s = face_coef(A22, geom.theta_s, 0, -1)
    c_n = face_coef(A22, geom.theta_n, 0, +1)
    zero = np.zeros_like(A11)
    return c_w, c_e, c_s, c_n, zero, zero


def _assemble_slice(
    geom: SliceGeometry,
    pins: tuple[np.ndarray, np.ndarray] | None,
    coef_fields,
    form: str,
    grid: SpaceTimeGrid,
    tau: float,
    data,
    t_k: float,
    prev: np.ndarray,
):
    """Build ``(I - tau L) u = prev + tau * boundary`` for one slice."""
    n1, n2 = geom.active.shape
    h = grid.h
    A11, A12, A22 = coef_fields
    act = geom.active
    if pins is not None:
        pinned, pinvals = pins
        pinned = pinned & act
    else:
        pinned = np.zeros((n1, n2), dtype=bool)
        pinvals = None
    unknown = act & ~pinned
    N = int(unknown.sum())
    if N == 0:
        return None, None, unknown, pinned, pinvals

    idx = np.full((n1, n2), -1, dtype=np.int64)
    idx[unknown] = np.arange(N)

    c_w, c_e, c_s, c_n, c_pos, c_neg = _arm_coefficients(
        geom, A11, A12, A22, form, h)

    sever_n = geom.sever_n
    sever_s = None
    if sever_n is not None:
        sever_s = np.zeros_like(sever_n)
        sever_s[:, 1:] = sever_n[:, :-1]

    x1g = grid.x1s[:, None]
    x2g = grid.x2s[None, :]

    rows, cols, vals = [], [], []
    diag = np.zeros((n1, n2))
    rhs_b = np.zeros((n1, n2))

    def neighbor_state(di, dj):
        """unknown/pinned/pinval of the (di, dj)-shifted neighbor."""
        u = np.zeros((n1, n2), dtype=bool)
        p = np.zeros((n1, n2), dtype=bool)
        pv = np.zeros((n1, n2))
        s1 = slice(max(0, -di), n1 - max(0, di))
        d1 = slice(max(0, di), n1 - max(0, -di))
        s2 = slice(max(0, -dj), n2 - max(0, dj))
        d2 = slice(max(0, dj), n2 - max(0, -dj))
        u[s1, s2] = unknown[d1, d2]
        p[s1, s2] = pinned[d1, d2]
        if pinvals is not None:
            pv[s1, s2] = pinvals[d1, d2]
        return u, p, pv

    def add_axis(di, dj, c, cutx, cuty, severed):
        nb_u, nb_p, nb_pv = neighbor_state(di, dj)
        coef = tau * c
        diag[unknown] += coef[unknown]
        own = unknown.copy()
        if severed is not None:
            cut_sel = own & (~(nb_u | nb_p) | severed)
            link_u = own & nb_u & ~severed
            link_p = own & nb_p & ~severed
        else:
            cut_sel = own & ~(nb_u | nb_p)
            link_u = own & nb_u
            link_p = own & nb_p
        if link_u.any():
            r = idx[link_u]
            cgrid = np.full((n1, n2), -1, dtype=np.int64)
            s1 = slice(max(0, -di), n1 - max(0, di))
            d1 = slice(max(0, di), n1 - max(0, -di))
            s2 = slice(max(0, -dj), n2 - max(0, dj))
            d2 = slice(max(0, dj), n2 - max(0, -dj))
            cgrid[s1, s2] = idx[d1, d2]
            rows.append(r)
            cols.append(cgrid[link_u])
            vals.append(-coef[link_u])
        if link_p.any():
            rhs_b[link_p] += coef[link_p] * nb_pv[link_p]
        if cut_sel.any():
            bv = data(cutx[cut_sel], cuty[cut_sel], t_k)
            rhs_b[cut_sel] += coef[cut_sel] * np.asarray(bv, dtype=float)

    add_axis(-1, 0, c_w, geom.cut_w[0], geom.cut_w[1], None)
    add_axis(+1, 0, c_e, geom.cut_e[0], geom.cut_e[1], None)
    add_axis(0, -1, c_s, geom.cut_s[0], geom.cut_s[1], sever_s)
    add_axis(0, +1, c_n, geom.cut_n[0], geom.cut_n[1], sever_n)

    # diagonal arms of the monotone cross-term stencil
    for (di, dj, c) in ((+1, +1, c_pos), (-1, -1, c_pos),
                        (+1, -1, c_neg), (-1, +1, c_neg)):
        if not np.any(c > 0):
            continue
        thx = geom.theta_e if di > 0 else geom.theta_w
        thy = geom.theta_n if dj > 0 else geom.theta_s
        cutx = x1g + di * thx * h
        cuty = x2g + dj * thy * h
        add_axis(di, dj, c, np.broadcast_to(cutx, (n1, n2)),
                 np.broadcast_to(cuty, (n1, n2)), None)

    diag_full = 1.0 + diag
    rows.append(idx[unknown])
    cols.append(idx[unknown])
    vals.append(diag_full[unknown])

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N))
    b = prev[unknown] + rhs_b[unknown]
    return A, b, unknown, pinned, pinvals


# ---------------------------------------------------------------------------
# marching
# ---------------------------------------------------------------------------

def _march(
    mask: CellMask,
    coeff: EllipticCoefficients,
    data,
    cfg: SolveConfig,
    pins=None,
    lu_cache: _LUCache | None = None,
    state0: np.ndarray | None = None,
    k_start: int | None = None,
    k_stop: int | None = None,
) -> Field:
    grid = mask.grid
    if abs(cfg.h - grid.h) > 1e-12 or abs(cfg.tau - grid.tau) > 1e-12:
        raise ValidationError("SolveConfig resolution differs from the grid")
    data = as_data(data)
    coef_fields = coeff.fields(grid)
    form = coeff.form
    if form == "divergence" and np.abs(coef_fields[1]).max() > 1e-14:
        form = "nondivergence"  # constant full A: both forms coincide
    cache = lu_cache or _LUCache()

    k0 = mask.data_slice_index() if k_start is None else k_start
    k1 = grid.nk - 1 if k_stop is None else k_stop
    store_all = cfg.store_every >= 1
    if store_all:
        ks = [k for k in range(k0, k1 + 1)
              if (k - k0) % cfg.store_every == 0 or k == k1]
    else:
        ks = [k0, k1] if k1 > k0 else [k0]
    kpos = {k: p for p, k in enumerate(ks)}
    n1, n2 = grid.n1, grid.n2
    values = np.zeros((n1, n2, len(ks)))
    active_out = np.zeros((n1, n2, len(ks)), dtype=bool)

    X1 = grid.x1s[:, None]
    X2 = grid.x2s[None, :]
    B1 = np.broadcast_to(X1, (n1, n2))
    B2 = np.broadcast_to(X2, (n1, n2))

    def pins_at(k):
        if pins is None:
            return None
        return pins(k)

    # data slice
    cur_act = mask.active[:, :, k0].copy()
    cur = np.zeros((n1, n2))
    if state0 is not None:
        cur[cur_act] = state0[cur_act]
    elif cur_act.any():
        cur[cur_act] = np.asarray(
            data(B1[cur_act], B2[cur_act], grid.t(k0)), dtype=float)
    p0 = pins_at(k0)
    if p0 is not None:
        pn, pv = p0
        sel = pn & cur_act
        cur[sel] = pv[sel] if isinstance(pv, np.ndarray) else pv
    if k0 in kpos:
        values[:, :, kpos[k0]] = cur
        active_out[:, :, kpos[k0]] = cur_act

    residual = 0.0
    for k in range(k0 + 1, k1 + 1):
        geom = mask.slice_geometry(k)
        pk = pins_at(k)
        if pk is not None and not isinstance(pk[1], np.ndarray):
            pk = (pk[0], np.full((n1, n2), float(pk[1])))
        prev = cur.copy()
        newly = geom.active & ~cur_act
        if newly.any():
            prev[newly] = np.asarray(
                data(B1[newly], B2[newly], grid.t(k - 1)), dtype=float)
        A, b, unknown, pinned, pinvals = _assemble_slice(
            geom, pk, coef_fields, form, grid, cfg.tau, data, grid.t(k), prev)
        nxt = np.zeros((n1, n2))
        if A is not None:
            lu = cache.get(A)
            x = lu.solve(b)
            r = b - A @ x
            sweeps = 0
            while np.abs(r).max() > cfg.linear_tol:
                if sweeps >= cfg.max_sweeps:
                    raise NumericalRejection(
                        f"linear residual {np.abs(r).max():.3e} above "
                        f"tolerance {cfg.linear_tol:.1e} after "
                        f"{cfg.max_sweeps} refinement sweeps at t={grid.t(k)}")
                x = x + lu.solve(r)
                r = b - A @ x
                sweeps += 1
            residual = max(residual, float(np.abs(r).max()))
            nxt[unknown] = x
        if pinned.any():
            nxt[pinned] = pinvals[pinned]
        cur = nxt
        cur_act = geom.active
        if k in kpos:
            values[:, :, kpos[k]] = cur
            active_out[:, :, kpos[k]] = cur_act

    return Field(grid, np.array(ks), values, active_out,
                 meta={"residual": residual, "k0": k0, "k1": k1})


def solve(
    domain,
    coeff: EllipticCoefficients,
    mask: CellMask,
    data,
    cfg: SolveConfig,
    pins=None,
) -> Field:
    """Time-march the full space-time solution on a masked grid.

    ``data`` supplies Dirichlet values on the parabolic boundary (initial
    slice, lateral faces, boundary graph / slit); extra interior Dirichlet
    constraints may be injected via ``pins`` (per-slice mask and values),
    which is how capacity potentials pin their set to one.
    """
    del domain  # geometry is fully encoded in the mask
    return _march(mask, coeff, data, cfg, pins=pins)


def step_implicit(
    state: Field,
    coeff: EllipticCoefficients,
    mask: CellMask,
    data,
    cfg: SolveConfig,
) -> Field:
    """Advance one backward-Euler step from the last stored slice."""
    k_cur = int(state.stored_ks[-1])
    if k_cur + 1 >= mask.grid.nk:
        raise ValidationError("no further slice in the mask window")
    return _march(mask, coeff, data, cfg,
                  state0=state.values[:, :, -1], k_start=k_cur,
                  k_stop=k_cur + 1)
