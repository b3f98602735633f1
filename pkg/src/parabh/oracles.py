"""Closed-form caloric references and brute-force oracles.

Everything here is independent of the finite-difference path it is used
to check: kernels and caloric polynomials are evaluated from their
formulas, and the capacity oracle is the same definition re-run at a
finer resolution.  Oracle accumulations use extended precision where the
platform provides it so oracle error sits below solver error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def heat_kernel(x, t: float, n: int) -> np.ndarray | float:
    """Gauss-Weierstrass kernel ``(4 pi t)^{-n/2} exp(-|x|^2 / 4t)``.

    ``x`` is a point or array of points with the last axis of length
    ``n``; requires ``t > 0``.
    """
    if t <= 0:
        raise ValidationError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    if x.shape == () and n == 1:
        r2 = x * x
    else:
        if x.shape[-1] != n:
            raise ValidationError(f"points must have {n} components")
        r2 = np.sum(x * x, axis=-1)
    out = (4 * math.pi * t) ** (-n / 2) * np.exp(-r2 / (4 * t))
    return float(out) if np.ndim(out) == 0 else out


def kernel_data_2d(x1, x2, t):
    """The ``n = 2`` kernel as solver boundary data ``f(x1, x2, t)``."""
    return (4 * math.pi * t) ** (-1.0) * np.exp(-(np.asarray(x1) ** 2
                                                  + np.asarray(x2) ** 2) / (4 * t))


def kernel_mass(t: float, half_width: float, h: float) -> float:
    """Lattice integral of the 2-d kernel, compensated in long double."""
    xs = (np.arange(-half_width / h, half_width / h) + 0.5) * h
    vals = kernel_data_2d(xs[:, None], xs[None, :], t).astype(np.longdouble)
    return float(vals.sum() * np.longdouble(h) * np.longdouble(h))


@dataclass
class CaloricOracle:
    """A closed-form solution of the heat equation with provenance notes."""

    name: str
    eval: object                      # callable (x1, x2, t) -> value
    domain_of_validity: str = "all of space-time"
    positivity_region: str = ""

    def __call__(self, x1, x2, t):
        return self.eval(x1, x2, t)

    def stencil_residual(self, h: float = 1 / 32, tau: float = 1 / 1024,
                         box: float = 0.75, t0: float = -0.5) -> float:
        """Max of |du/dt - lap u| on a 5-point/2-level test lattice."""
        xs = np.arange(-box, box + h / 2, h)
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        f = self.eval
        u0 = np.asarray(f(X1, X2, t0), dtype=float)
        u1 = np.asarray(f(X1, X2, t0 + tau), dtype=float)
        lap = np.zeros_like(u1)
        lap[1:-1, 1:-1] = (
            u1[2:, 1:-1] + u1[:-2, 1:-1] + u1[1:-1, 2:] + u1[1:-1, :-2]
            - 4 * u1[1:-1, 1:-1]) / (h * h)
        ut = (u1 - u0) / tau
        return float(np.abs((ut - lap)[1:-1, 1:-1]).max())


_checked: set = set()


def _self_test(oracle: CaloricOracle, bound: float):
    if oracle.name in _checked:
        return
    res = oracle.stencil_residual()
    if res > bound:
        raise ValidationError(
            f"oracle {oracle.name!r} fails its stencil self-test: "
            f"residual {res:.3e} > {bound:.1e}")
    _checked.add(oracle.name)


def halfspace_pair(M: float = 8.0) -> tuple[CaloricOracle, CaloricOracle]:
    """The flat-boundary model pair ``u = x2`` and ``v = x2 (x2^2 + 6t + M)``.

    Both are caloric (``v_t = 6 x2 = lap v``), vanish on ``{x2 = 0}``, and
    are positive above it on the unit cylinder provided ``M > 6`` (so that
    ``x2^2 + 6t + M > 0`` down to ``t = -1``).
    """
    if M <= 6:
        raise ValidationError("halfspace pair needs M > 6 for positivity")

    u = CaloricOracle(
        name="halfspace-linear",
        eval=lambda x1, x2, t: x2 + 0.0 * np.asarray(x1),
        positivity_region="x2 > 0")
    v = CaloricOracle(
        name=f"halfspace-cubic-M{M:g}",
        eval=lambda x1, x2, t: np.asarray(x2) * (np.asarray(x2) ** 2
                                                 + 6.0 * np.asarray(t) + M),
        positivity_region="x2 > 0, t >= -1")
    # caloric polynomials: the discrete residual is pure round-off
    _self_test(u, 1e-9)
    _self_test(v, 1e-8)
    return u, v


def kernel_oracle() -> CaloricOracle:
    o = CaloricOracle(
        name="heat-kernel-2d",
        eval=kernel_data_2d,
        domain_of_validity="t > 0",
        positivity_region="everywhere (t > 0)")
    # smooth but not polynomial: residual is O(h^2 + tau)
    _self_test(o, 1e-2)
    return o


def brute_force_capacity(E, cube, fine_factor: int = 2,
                         base_h: float = 1 / 8, base_tau: float | None = None,
                         linear_tol: float = 1e-10) -> float:
    """Reference capacity: the same potential at a refined resolution."""
    if fine_factor < 2:
        raise ValidationError("fine_factor must be at least 2")
    from .capacity import CapacityQuery, parabolic_capacity

    h = base_h / fine_factor
    tau = 4 * h * h if base_tau is None else base_tau / (fine_factor ** 2)
    n_cells = int(round(4 / h)) * int(round(4 / tau))
    if n_cells > 40_000_000:
        raise ValidationError("refinement exceeds the memory budget")
    q = CapacityQuery(E=E, cube=cube, h=h, tau=tau, linear_tol=linear_tol,
                      store=False)
    return parabolic_capacity(q).value
