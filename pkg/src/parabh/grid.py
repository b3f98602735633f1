"""Uniform space-time lattices and active-cell masks.

Space dimension is fixed at 2 (one tangential coordinate ``x1``, one
normal coordinate ``x2``) plus time, which keeps every lattice a dense
3-d array while still exercising all of the geometry.  Two lattice
conventions coexist:

* ``offset = 0.5`` (cell-centered): centers at ``(m + 1/2) h``, so integer
  multiples of ``h`` are cell faces.  Used for cylinder/corridor solves,
  where box faces and the hyperplane ``{x2 = 0}`` must fall on faces.
* ``offset = 0.0`` (node-centered): centers at ``m h``.  Used for the
  capacity frame, where the evaluation point must be a lattice point.

Times are always ``k * tau`` for integer ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ValidationError

#: relative snap tolerance: cells closer than this (in units of h) to a
#: boundary surface are treated as boundary cells, keeping thetas bounded
#: away from zero so the linear systems stay well conditioned.
SNAP_FRACTION = 1e-6


def _aligned_index(value: float, step: float, name: str) -> int:
    """Integer ``value / step``, rejecting off-lattice coordinates."""
    q = value / step
    r = round(q)
    if abs(q - r) > 1e-9 * max(1.0, abs(q)) + 1e-12:
        raise ValidationError(f"{name}={value!r} is not aligned to step {step!r}")
    return int(r)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Index window into the global lattice.

    Cell centers sit at ``(i_lo + offset) * h .. (i_hi - 1 + offset) * h``
    per axis; slice times at ``k * tau`` for ``k_lo <= k <= k_hi``.
    """

    h: float
    tau: float
    offset: float  # 0.5 cell-centered, 0.0 node-centered
    i1_lo: int
    n1: int
    i2_lo: int
    n2: int
    k_lo: int
    nk: int
    t_origin: float = 0.0  # slice times are t_origin + k * tau

    def __post_init__(self):
        if self.h <= 0 or self.tau <= 0:
            raise ValidationError("grid steps must be positive")
        if self.offset not in (0.0, 0.5):
            raise ValidationError("offset must be 0.0 or 0.5")
        if self.n1 < 1 or self.n2 < 1 or self.nk < 1:
            raise ValidationError("empty grid window")

    # -- coordinates ---------------------------------------------------
    @cached_property
    def x1s(self) -> np.ndarray:
        return (self.i1_lo + np.arange(self.n1) + self.offset) * self.h

    @cached_property
    def x2s(self) -> np.ndarray:
        return (self.i2_lo + np.arange(self.n2) + self.offset) * self.h

    @cached_property
    def ts(self) -> np.ndarray:
        return self.t_origin + (self.k_lo + np.arange(self.nk)) * self.tau

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.nk)

    def t(self, k: int) -> float:
        return self.t_origin + (self.k_lo + k) * self.tau

    def k_of_time(self, t: float) -> int:
        k = _aligned_index(t - self.t_origin, self.tau, "t") - self.k_lo
        if not 0 <= k < self.nk:
            raise ValidationError(f"time {t} outside grid window")
        return k

    # -- factories -----------------------------------------------------
    @classmethod
    def from_box(
        cls,
        x1_range: tuple[float, float],
        x2_range: tuple[float, float],
        t_range: tuple[float, float],
        h: float,
        tau: float,
        offset: float = 0.5,
        t_origin: float | None = None,
        snap_time: bool = False,
    ) -> "SpaceTimeGrid":
        """Smallest window whose centers lie inside the open spatial box.

        Spatial box faces must be lattice-aligned (faces for cell-centered
        grids, node positions for node-centered ones); the time endpoints
        must be multiples of ``tau``.  The initial time is included as the
        data slice.
        """
        x1a, x1b = x1_range
        x2a, x2b = x2_range
        t0, t1 = t_range
        if offset == 0.5:
            i1_lo = _aligned_index(x1a, h, "x1 lower face")
            i1_hi = _aligned_index(x1b, h, "x1 upper face")
            i2_lo = _aligned_index(x2a, h, "x2 lower face")
            i2_hi = _aligned_index(x2b, h, "x2 upper face")
        else:
            # interior nodes strictly between the box faces
            i1_lo = _aligned_index(x1a, h, "x1 lower face") + 1
            i1_hi = _aligned_index(x1b, h, "x1 upper face")
            i2_lo = _aligned_index(x2a, h, "x2 lower face") + 1
            i2_hi = _aligned_index(x2b, h, "x2 upper face")
        if t_origin is None:
            # keep the lattice anchored at zero when the window allows it
            q = t0 / tau
            t_origin = 0.0 if abs(q - round(q)) < 1e-9 * max(1, abs(q)) else t0
        k_lo = _aligned_index(t0 - t_origin, tau, "t start")
        if snap_time:
            k_hi = max(k_lo + 1, round((t1 - t_origin) / tau))
        else:
            k_hi = _aligned_index(t1 - t_origin, tau, "t end")
        n1 = i1_hi - i1_lo
        n2 = i2_hi - i2_lo
        nk = k_hi - k_lo + 1
        if n1 < 1 or n2 < 1 or nk < 1:
            raise ValidationError("box too small for the requested resolution")
        return cls(h=h, tau=tau, offset=offset, i1_lo=i1_lo, n1=n1,
                   i2_lo=i2_lo, n2=n2, k_lo=k_lo, nk=nk, t_origin=t_origin)


@dataclass
class SliceGeometry:
    """Dirichlet geometry of one time slice, consumed by the solver.

    ``theta_*`` hold the fractional arm length (in units of ``h``) toward
    each of the four neighbours; entries are 1 where the neighbour is a
    regular active cell.  ``cut_*`` hold the physical coordinates of the
    Dirichlet point on cut arms (undefined elsewhere).
    """

    active: np.ndarray            # bool [n1, n2]
    theta_w: np.ndarray
    theta_e: np.ndarray
    theta_s: np.ndarray
    theta_n: np.ndarray
    cut_w: tuple[np.ndarray, np.ndarray]
    cut_e: tuple[np.ndarray, np.ndarray]
    cut_s: tuple[np.ndarray, np.ndarray]
    cut_n: tuple[np.ndarray, np.ndarray]
    #: sever the coupling between (i, j) and (i, j+1) even if both active
    #: (slit on the face between the rows); thetas/cuts already reflect it.
    sever_n: np.ndarray | None = None


class CellMask:
    """Active cells of a space-time region plus its boundary surfaces.

    The boundary is described per column ``(i, k)`` by a bottom surface
    ``bot`` and top surface ``top`` in the ``x2`` direction, lateral box
    faces in ``x1``, and an optional slit on the face ``{x2 = 0}``.  A cut
    fraction below :data:`SNAP_FRACTION` snaps the cell onto the boundary.
    """

    def __init__(
        self,
        grid: SpaceTimeGrid,
        x1_faces: tuple[float, float],
        bot: np.ndarray,          # [n1, nk] bottom surface (use -inf for none)
        top: np.ndarray,          # [n1, nk] top surface (use +inf for none)
        t_window: tuple[float, float],
        slit_at: np.ndarray | None = None,   # bool [n1, nk]
        flags: dict | None = None,
    ):
        self.grid = grid
        self.x1_faces = x1_faces
        self.bot = np.asarray(bot, dtype=float)
        self.top = np.asarray(top, dtype=float)
        self.t_window = t_window
        self.slit_at = slit_at
        self.flags = dict(flags or {})
        self._build_active()

    def _build_active(self):
        g = self.grid
        eps = SNAP_FRACTION * g.h
        x1 = g.x1s[:, None]
        x2 = g.x2s[None, :]
        in_x1 = (x1 > self.x1_faces[0] + eps) & (x1 < self.x1_faces[1] - eps)
        ta, tb = self.t_window
        in_t = (g.ts >= ta - 1e-12) & (g.ts <= tb + 1e-12)
        act = np.zeros(g.shape, dtype=bool)
        for k in range(g.nk):
            if not in_t[k]:
                continue
            above = x2 - self.bot[:, k][:, None] > eps
            below = self.top[:, k][:, None] - x2 > eps
            act[:, :, k] = in_x1 & above & below
        self.active = act

    # -- queries ---------------------------------------------------------
    def cell_count(self) -> int:
        return int(self.active.sum())

    def is_subset_of(self, other: "CellMask") -> bool:
        if self.grid != other.grid:
            raise ValidationError("mask comparison requires a common grid")
        return bool(np.all(~self.active | other.active))

    def data_slice_index(self) -> int:
        """First slice with active cells; it carries the initial data."""
        counts = self.active.sum(axis=(0, 1))
        nz = np.flatnonzero(counts)
        if nz.size == 0:
            raise ValidationError("mask has no active cells")
        return int(nz[0])

    def slice_geometry(self, k: int) -> SliceGeometry:
        g = self.grid
        act = self.active[:, :, k]
        n1, n2 = act.shape
        x1 = g.x1s
        x2 = g.x2s
        h = g.h
        bot = self.bot[:, k]
        top = self.top[:, k]

        ones = np.ones((n1, n2))
        theta_w = ones.copy()
        theta_e = ones.copy()
        theta_s = ones.copy()
        theta_n = ones.copy()
        cw = (np.zeros((n1, n2)), np.zeros((n1, n2)))
        ce = (np.zeros((n1, n2)), np.zeros((n1, n2)))
        cs = (np.zeros((n1, n2)), np.zeros((n1, n2)))
        cn = (np.zeros((n1, n2)), np.zeros((n1, n2)))

        # clearance to the bottom/top surfaces at own column
        m_bot = x2[None, :] - bot[:, None]
        m_top = top[:, None] - x2[None, :]

        pad = np.zeros((n1 + 2, n2 + 2), dtype=bool)
        pad[1:-1, 1:-1] = act

        x1g = np.broadcast_to(x1[:, None], (n1, n2))
        x2g = np.broadcast_to(x2[None, :], (n1, n2))

        # south / north arms: cut by the bottom / top surfaces
        nb_s = pad[1:-1, :-2]
        sel = act & ~nb_s
        th = np.clip(m_bot / h, SNAP_FRACTION, 1.0)
        theta_s[sel] = th[sel]
        cs[0][sel] = x1g[sel]
        cs[1][sel] = x2g[sel] - th[sel] * h

        nb_n = pad[1:-1, 2:]
        sel = act & ~nb_n
        th = np.clip(m_top / h, SNAP_FRACTION, 1.0)
        theta_n[sel] = th[sel]
        cn[0][sel] = x1g[sel]
        cn[1][sel] = x2g[sel] + th[sel] * h

        # west / east arms: lateral box faces or sideways surface crossings
        for sgn, theta, cut, nb in (
            (-1, theta_w, cw, pad[:-2, 1:-1]),
            (+1, theta_e, ce, pad[2:, 1:-1]),
        ):
            sel = act & ~nb
            if not sel.any():
                continue
            face = self.x1_faces[0] if sgn < 0 else self.x1_faces[1]
            th_face = np.clip(sgn * (face - x1g) / h, SNAP_FRACTION, 1.0)
            th = th_face.copy()
            # sideways crossing of the bottom or top surface into column i+sgn
            ii = np.arange(n1)
            jj = np.clip(ii + sgn, 0, n1 - 1)
            for m_own, m_nbv in ((m_bot, x2[None, :] - bot[jj][:, None]),
                                 (m_top, top[jj][:, None] - x2[None, :])):
                crossing = sel & (m_nbv <= 0) & (m_own > 0)
                if crossing.any():
                    frac = m_own / (m_own - m_nbv)
                    th[crossing] = np.minimum(th[crossing],
                                              np.clip(frac[crossing],
                                                      SNAP_FRACTION, 1.0))
            theta[sel] = th[sel]
            cut[0][sel] = x1g[sel] + sgn * th[sel] * h
            cut[1][sel] = x2g[sel]

        sever_n = None
        if self.slit_at is not None and g.offset == 0.5:
            row = self.slit_at[:, k]
            j_below = -1 - g.i2_lo  # cell row with center at x2 = -h/2
            if row.any() and 0 <= j_below < n2 - 1:
                sever_n = np.zeros((n1, n2), dtype=bool)
                sever_n[row, j_below] = True
                below = row & act[:, j_below]
                above = row & act[:, j_below + 1]
                theta_n[below, j_below] = 0.5
                cn[0][below, j_below] = x1[below]
                cn[1][below, j_below] = 0.0
                theta_s[above, j_below + 1] = 0.5
                cs[0][above, j_below + 1] = x1[above]
                cs[1][above, j_below + 1] = 0.0
        return SliceGeometry(
            active=act,
            theta_w=theta_w, theta_e=theta_e, theta_s=theta_s, theta_n=theta_n,
            cut_w=cw, cut_e=ce, cut_s=cs, cut_n=cn,
            sever_n=sever_n,
        )


def box_mask(
    grid: SpaceTimeGrid,
    x1_range: tuple[float, float],
    x2_range: tuple[float, float],
    t_range: tuple[float, float],
    slit_at: np.ndarray | None = None,
    flags: dict | None = None,
) -> CellMask:
    """Mask of a plain space-time box (optionally slit on ``{x2 = 0}``)."""
    bot = np.full((grid.n1, grid.nk), x2_range[0])
    top = np.full((grid.n1, grid.nk), x2_range[1])
    return CellMask(grid, x1_range, bot, top, t_range, slit_at=slit_at,
                    flags=flags)
