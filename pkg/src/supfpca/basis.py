"""B-spline bases on equally spaced knots.

Evaluation uses the Cox-de Boor recursion over the full knot vector, seeded
with a single active degree-0 span per point. Seeding the span explicitly
(instead of using interval indicators) gives the left-limit convention at the
right boundary and lets the same recursion extrapolate the boundary
polynomial pieces when asked to.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .errors import DomainError, InvalidArgumentError, NumericalError

OUTSIDE_MODES = ("raise", "clamp", "extrapolate")


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Clamped B-spline basis, optionally whitened by a square transform.

    With ``transform`` set to ``T`` the basis vector is ``T @ raw(t)``.
    """

    degree: int
    n_interior: int
    domain: Tuple[float, float]
    knots: np.ndarray
    transform: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.n_interior + self.degree + 1

    @property
    def orthonormal(self) -> bool:
        return self.transform is not None

    def _prepare(self, t, outside):
        if outside not in OUTSIDE_MODES:
            raise InvalidArgumentError(f"outside must be one of {OUTSIDE_MODES}, got {outside!r}")
        x = np.asarray(t, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x).ravel()
        lo, hi = self.domain
        bad = (x < lo) | (x > hi) | ~np.isfinite(x)
        if np.any(bad):
            if outside == "raise" or not np.all(np.isfinite(x)):
                idx = int(np.flatnonzero(bad)[0])
                raise DomainError(f"value {x[idx]!r} (index {idx}) outside domain [{lo}, {hi}]")
            if outside == "clamp":
                x = np.clip(x, lo, hi)
        return x, scalar

    def _finish(self, values, scalar):
        if self.transform is not None:
            values = values @ self.transform.T
        return values[0] if scalar else values

    def eval(self, t, outside: str = "raise") -> np.ndarray:
        """Basis values at ``t``; shape ``(size,)`` for a scalar, ``(len(t), size)`` otherwise."""
        x, scalar = self._prepare(t, outside)
        return self._finish(_cox_de_boor(self.knots, self.degree, x)[self.degree], scalar)

    def eval_deriv2(self, t, outside: str = "raise") -> np.ndarray:
        """Second derivatives of the basis functions at ``t``."""
        x, scalar = self._prepare(t, outside)
        return self._finish(_derivative(self.knots, self.degree, x, 2), scalar)

    def eval_deriv(self, t, order: int = 1, outside: str = "raise") -> np.ndarray:
        x, scalar = self._prepare(t, outside)
        return self._finish(_derivative(self.knots, self.degree, x, order), scalar)

    def quadrature(self, n_quad: Optional[int] = None):
        """Gauss-Legendre nodes and weights, ``n_quad`` per knot interval."""
        if n_quad is None:
            n_quad = self.degree + 2
        return panel_quadrature(np.unique(self.knots), n_quad)

    def gram(self, n_quad: Optional[int] = None) -> np.ndarray:
        x, w = self.quadrature(n_quad)
        vals = self.eval(x)
        return (vals * w[:, None]).T @ vals


def panel_quadrature(breaks, n_quad: int):
    """Composite Gauss-Legendre rule over consecutive break points."""
    if n_quad < 1:
        raise InvalidArgumentError("n_quad must be positive")
    g, gw = np.polynomial.legendre.leggauss(n_quad)
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b))[:, None] + half[:, None] * g[None, :]
    weights = half[:, None] * gw[None, :]
    return nodes.ravel(), weights.ravel()


def make_bspline(degree: int, n_interior_knots: int, domain) -> SplineBasis:
    """Clamped B-spline basis with equally spaced interior knots."""
    degree = int(degree)
    n_interior_knots = int(n_interior_knots)
    if degree < 1:
        raise InvalidArgumentError(f"degree must be >= 1, got {degree}")
    if n_interior_knots < 0:
        raise InvalidArgumentError(f"n_interior_knots must be >= 0, got {n_interior_knots}")
    lo, hi = (float(v) for v in domain)
    if not (np.isfinite(lo) and np.isfinite(hi)) or not hi > lo:
        raise InvalidArgumentError(f"domain must satisfy lo < hi, got [{lo}, {hi}]")
    inner = np.linspace(lo, hi, n_interior_knots + 2)
    knots = np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])
    return SplineBasis(degree, n_interior_knots, (lo, hi), knots)


def bspline_of_size(degree: int, size: int, domain) -> SplineBasis:
    """Basis with ``size`` functions, i.e. ``size - degree - 1`` interior knots."""
    if size < degree + 1:
        raise InvalidArgumentError(f"a degree-{degree} basis needs at least {degree + 1} functions")
    return make_bspline(degree, size - degree - 1, domain)


def orthonormalize(basis: SplineBasis, n_quad: Optional[int] = None) -> SplineBasis:
    """Whiten the basis so that its quadrature Gram matrix is the identity.

    The Gram matrix ``G`` of the current basis is factored as ``G = L L^T``
    and the returned basis uses ``L^{-1}`` composed with any existing
    transform.
    """
    G = basis.gram(n_quad)
    G = 0.5 * (G + G.T)
    try:
        L = cholesky(G, lower=True)
    except LinAlgError as exc:
        cond = float(np.linalg.cond(G))
        raise NumericalError(f"Gram matrix not positive definite (cond ~ {cond:.3g})", condition=cond) from exc
    Linv = solve_triangular(L, np.eye(basis.size), lower=True)
    T = Linv if basis.transform is None else Linv @ basis.transform
    return replace(basis, transform=T)


def tensor_row(a_basis: SplineBasis, u_basis: SplineBasis, t, z, outside: str = "raise") -> np.ndarray:
    """Kronecker product ``a(t) (x) u(z)``; entry ``i * p + j`` holds ``a_i(t) u_j(z)``."""
    return np.kron(a_basis.eval(t, outside), u_basis.eval(z, outside))


def tensor_rows(a_basis: SplineBasis, u_basis: SplineBasis, t, z, outside: str = "raise") -> np.ndarray:
    """Row-stacked ``tensor_row`` for paired arrays ``t`` and ``z``."""
    A = np.atleast_2d(a_basis.eval(np.atleast_1d(t), outside))
    U = np.atleast_2d(u_basis.eval(np.atleast_1d(z), outside))
    if U.shape[0] == 1 and A.shape[0] > 1:
        U = np.repeat(U, A.shape[0], axis=0)
    return (A[:, :, None] * U[:, None, :]).reshape(A.shape[0], -1)


def _spans(knots, degree, x):
    n = len(knots) - degree - 1
    idx = np.searchsorted(knots, x, side="right") - 1
    return np.clip(idx, degree, n - 1)


def _cox_de_boor(knots, degree, x):
    """Basis values for every degree ``0..degree``; entry ``d`` has shape ``(len(x), len(knots) - d - 1)``."""
    nk = len(knots)
    span = _spans(knots, degree, x)
    N = np.zeros((x.size, nk - 1))
    N[np.arange(x.size), span] = 1.0
    out = [N]
    for d in range(1, degree + 1):
        left_den = knots[d:nk - 1] - knots[: nk - 1 - d]
        right_den = knots[d + 1:] - knots[1: nk - d]
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = np.where(left_den > 0, 1.0 / left_den, 0.0)
            rw = np.where(right_den > 0, 1.0 / right_den, 0.0)
        prev = out[-1]
        left = (x[:, None] - knots[None, : nk - 1 - d]) * lw * prev[:, :-1]
        right = (knots[None, d + 1:] - x[:, None]) * rw * prev[:, 1:]
        out.append(left + right)
    return out


def _derivative(knots, degree, x, order):
    if order == 0:
        return _cox_de_boor(knots, degree, x)[degree]
    if order > degree:
        return np.zeros((x.size, len(knots) - degree - 1))
    levels = _cox_de_boor(knots, degree, x)
    # d/dx B_{i,d} = d * (B_{i,d-1} / (u_{i+d} - u_i) - B_{i+1,d-1} / (u_{i+d+1} - u_{i+1}))
    cur = levels[degree - order]
    for d in range(degree - order + 1, degree + 1):
        n_d = len(knots) - d - 1
        den_a = knots[d: d + n_d] - knots[:n_d]
        den_b = knots[d + 1: d + 1 + n_d] - knots[1: 1 + n_d]
        with np.errstate(divide="ignore", invalid="ignore"):
            wa = np.where(den_a > 0, d / den_a, 0.0)
            wb = np.where(den_b > 0, d / den_b, 0.0)
        cur = cur[:, :n_d] * wa - cur[:, 1: n_d + 1] * wb
    return cur
