"""Starting values: covariate binning, per-bin covariance smoothing, and a
least-squares fit of the covariance factor across bins."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .errors import InitError, InvalidArgumentError
from .model import Bases, ModelParams

log = logging.getLogger(__name__)


@dataclass(eq=False)
class BinSummary:
    bin_index: int
    z_center: float
    sample_ids: list
    members: np.ndarray                      # positions into the sample list
    sigma_hat: Optional[np.ndarray] = None   # (m, m)
    c_target: Optional[np.ndarray] = None    # (m, r)
    noise_var: Optional[float] = None


def default_n_bins(n_samples: int) -> int:
    return int(max(5, min(15, n_samples // 50)))


def bin_count_candidates(n_samples: int, k: int) -> List[int]:
    """``k`` distinct bin counts around the default: ``d, d+1, d-1, d+2, ...`` (never below 2)."""
    d = default_n_bins(n_samples)
    out, step = [d], 1
    while len(out) < k:
        for c in (d + step, d - step):
            if c >= 2 and c not in out and len(out) < k:
                out.append(c)
        step += 1
    return out


def bin_samples(samples, n_bins: int, min_count: int = 10) -> List[BinSummary]:
    """Equal-width bins over the observed covariate range; sparse bins are dropped."""
    if n_bins < 1:
        raise InvalidArgumentError("n_bins must be >= 1")
    z = np.array([s.covariate for s in samples])
    lo, hi = z.min(), z.max()
    if hi > lo:
        idx = np.minimum(((z - lo) / (hi - lo) * n_bins).astype(int), n_bins - 1)
    else:
        idx = np.zeros(z.size, dtype=int)
    bins = []
    for k in range(n_bins):
        members = np.flatnonzero(idx == k)
        if members.size < min_count:
            if members.size:
                log.warning("bin %d has %d curves (< %d); dropped", k, members.size, min_count)
            continue
        bins.append(BinSummary(len(bins), float(z[members].mean()),
                               [samples[i].id for i in members], members))
    if not bins:
        raise InitError(f"every one of {n_bins} bins has fewer than {min_count} curves; use fewer bins")
    return bins


def bin_covariance(bin: BinSummary, samples, b_basis, smooth: float = 1e-6,
                   ridge: float = 1e-8, trend: bool = True) -> BinSummary:
    """Covariance-free estimate of ``Sigma`` for one bin.

    The bin mean is a lightly ridged least-squares fit on the ``b`` basis.
    ``b(t)^T Sigma b(t')`` is then regressed on residual cross-products at
    distinct observation pairs of the same curve (the diagonal is excluded, so
    measurement noise does not leak in), and the solution is projected onto
    the PSD cone. A residual noise level is estimated from the diagonal.
    """
    m = b_basis.size
    members = [samples[i] for i in bin.members]
    Bs = [np.atleast_2d(b_basis.eval(s.times)) for s in members]

    # mean curve, optionally with a linear trend in z inside the bin
    zc = np.array([s.covariate for s in members])
    zc = zc - zc.mean()
    Xs = [np.hstack([B, B * dz]) if trend else B for B, dz in zip(Bs, zc)]
    k = Xs[0].shape[1]
    G = sum(X.T @ X for X in Xs)
    rhs = sum(X.T @ s.values for X, s in zip(Xs, members))
    scale = np.trace(G) / k
    coef = np.linalg.solve(G + smooth * scale * np.eye(k), rhs)

    # normal equations for vec(Sigma) from off-diagonal pairs
    XtX = np.zeros((m * m, m * m))
    Xty = np.zeros(m * m)
    resids = []
    for B, X, s in zip(Bs, Xs, members):
        e = s.values - X @ coef
        resids.append(e)
        BtB = B.T @ B
        XtX += np.kron(BtB, BtB)
        Be = B.T @ e
        Xty += np.outer(Be, Be).ravel()
    # remove the i == j pairs: rows vec(b_i b_i^T)
    B_all = np.vstack(Bs)
    e_all = np.concatenate(resids)
    O = (B_all[:, :, None] * B_all[:, None, :]).reshape(-1, m * m)
    XtX -= O.T @ O
    Xty -= O.T @ (e_all * e_all)
    scale = max(np.trace(XtX) / (m * m), 1e-300)
    sol = np.linalg.solve(XtX + ridge * scale * np.eye(m * m), Xty).reshape(m, m)
    sol = 0.5 * (sol + sol.T)
    vals, vecs = np.linalg.eigh(sol)
    sigma_hat = (vecs * np.clip(vals, 0.0, None)) @ vecs.T

    # noise: mean squared residual minus modelled variance
    num = den = 0.0
    for B, e in zip(Bs, resids):
        num += float(e @ e - np.einsum("ia,ab,ib->", B, sigma_hat, B))
        den += e.size
    return replace(bin, sigma_hat=sigma_hat, noise_var=num / den)


def rank_r_factor(sigma_hat, r: int) -> np.ndarray:
    """``V_r diag(sqrt(lambda_r))``: the rank-``r`` factor closest to ``sigma_hat`` in Frobenius norm."""
    vals, vecs = np.linalg.eigh(0.5 * (sigma_hat + sigma_hat.T))
    order = np.argsort(vals)[::-1][:r]
    return vecs[:, order] * np.sqrt(np.clip(vals[order], 0.0, None))


def _align(prev, cur):
    """Permute and sign-flip the columns of ``cur`` to agree with ``prev`` (greedy on |inner products|)."""
    r = cur.shape[1]
    P = prev.T @ cur
    out = np.empty_like(cur)
    free_prev, free_cur = list(range(r)), list(range(r))
    for _ in range(r):
        sub = np.abs(P[np.ix_(free_prev, free_cur)])
        a, b = np.unravel_index(np.argmax(sub), sub.shape)
        i, j = free_prev[a], free_cur[b]
        out[:, i] = cur[:, j] * (1.0 if P[i, j] >= 0 else -1.0)
        free_prev.remove(i)
        free_cur.remove(j)
    return out


def align_and_solve(bins: List[BinSummary], v_basis, r: int, ridge: float = 1e-8,
                    regularizer: str = "roughness") -> np.ndarray:
    """Least-squares ``Gamma`` with ``C(z_u; Gamma)`` matching each bin's aligned factor.

    With fewer bins than ``v`` functions (or a singular system) the fit is
    underdetermined and gets regularized. The default ``regularizer="roughness"`` adds ``ridge`` times the integrated
    squared second derivative in ``z``, whose null space is linear in ``z``,
    so coefficients beyond the outer bin centres extrapolate linearly.
    ``"ridge"`` uses the identity instead.
    """
    if regularizer not in ("roughness", "ridge"):
        raise InvalidArgumentError("regularizer must be 'roughness' or 'ridge'")
    bins = sorted(bins, key=lambda b: b.z_center)
    targets = []
    for b in bins:
        c = b.c_target
        if targets:
            c = _align(targets[-1], c)
        targets.append(c)
    T = np.array(targets)                           # (U, m, r)
    U, m, _ = T.shape
    q = v_basis.size
    z = np.array([b.z_center for b in bins])
    if U < 2:
        log.warning("only one bin; fitting covariate-constant coefficients")
        # v sums to one, so equal coefficients reproduce the target for every z
        return np.repeat(T[0][:, None, :], q, axis=1).reshape(m * q, r)
    V = np.atleast_2d(v_basis.eval(z, outside="clamp"))        # (U, q)
    A = V.T @ V
    if U < q or np.linalg.cond(A) > 1e10:
        if regularizer == "roughness":
            from .penalty import value_penalty
            P = value_penalty(v_basis)
            A += ridge * np.trace(A) / max(np.trace(P), 1e-300) * P + 1e-14 * np.trace(A) / q * np.eye(q)
        else:
            A += ridge * max(np.trace(A) / q, 1.0) * np.eye(q)
    coef = np.linalg.solve(A, V.T @ T.reshape(U, m * r))        # (q, m*r)
    return coef.reshape(q, m, r).transpose(1, 0, 2).reshape(m * q, r)


def initialize(samples, bases: Bases, r: int, n_bins: Optional[int] = None, min_count: int = 10,
               sigma2_floor: float = 1e-4):
    """Starting parameters: ``theta_mu = 0``, binned ``Gamma``, noise from the bin residuals."""
    samples = list(samples)
    if n_bins is None:
        n_bins = default_n_bins(len(samples))
    min_count = min(min_count, max(2, len(samples) // max(n_bins, 1)))
    bins = bin_samples(samples, n_bins, min_count)
    done = []
    for b in bins:
        b = bin_covariance(b, samples, bases.b)
        done.append(replace(b, c_target=rank_r_factor(b.sigma_hat, r)))
    gamma = align_and_solve(done, bases.v, r)
    noise = float(np.median([b.noise_var for b in done]))
    sigma2 = max(noise, sigma2_floor)
    params = ModelParams(np.zeros(bases.l * bases.p), gamma, np.log(sigma2))
    return params, done
