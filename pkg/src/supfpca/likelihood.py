"""Penalized Gaussian negative log-likelihood, fast and dense.

The fast path never forms an ``m_n x m_n`` matrix. Per curve it keeps the
sufficient statistics ``B^T B``, ``B^T y``, ``B^T H`` (plus pooled ``H^T H``,
``H^T y``, ``y^T y``) and works with ``r x r`` factorizations via the matrix
determinant lemma and the Woodbury identity.

Curves that carry per-observation noise standard deviations are pre-whitened
(rows divided by ``sd``), after which their noise variance is exactly 1; the
same formulas then serve both cases. The constant ``2 pi`` term is dropped
everywhere; ``m_n log sigma^2`` and ``sum log sd^2`` are kept.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np

from .basis import tensor_rows
from .errors import DomainError, InvalidArgumentError, NumericalError
from .model import Bases, DesignPair, FunctionalSample, ModelParams, c_matrices


@dataclass(eq=False)
class PreparedData:
    """Design matrices and sufficient statistics for a fixed set of curves."""

    samples: List[FunctionalSample]
    bases: Bases
    designs: List[DesignPair]
    V: np.ndarray          # (N, q) covariate basis rows
    counts: np.ndarray     # (N,) m_n
    white: np.ndarray      # (N,) bool, curve carries noise_sd
    BtB: np.ndarray        # (N, m, m), whitened
    Bty: np.ndarray        # (N, m)
    BtH: np.ndarray        # (N, m, lp)
    yty: np.ndarray        # (N,)
    Hty: np.ndarray        # (2, lp) pooled over scalar / whitened curves
    HtH: np.ndarray        # (2, lp, lp)
    yty_group: np.ndarray  # (2,)
    noise_logdet: float    # sum of log sd^2 over whitened curves

    @property
    def n_samples(self):
        return len(self.samples)

    @property
    def all_white(self):
        return bool(np.all(self.white))

    def noise_scale(self, params: ModelParams) -> np.ndarray:
        return np.where(self.white, 1.0, params.sigma2)


def prepare(samples, bases: Bases, outside="raise") -> PreparedData:
    samples = list(samples)
    if not samples:
        raise InvalidArgumentError("no samples")
    counts = np.array([s.n_obs for s in samples])
    t_all = np.concatenate([s.times for s in samples])
    z_all = np.repeat([s.covariate for s in samples], counts)
    try:
        B_all = bases.b.eval(t_all, outside)
        H_all = tensor_rows(bases.a, bases.u, t_all, z_all, outside)
        V = np.atleast_2d(bases.v.eval(np.array([s.covariate for s in samples]), outside))
    except DomainError as exc:
        offsets = np.cumsum(counts)
        lo_t, hi_t = bases.t_domain
        lo_z, hi_z = bases.z_domain
        for n, s in enumerate(samples):
            bad = np.flatnonzero((s.times < lo_t) | (s.times > hi_t))
            if bad.size or not lo_z <= s.covariate <= hi_z:
                where = f"observation {bad[0]}" if bad.size else "covariate"
                raise DomainError(f"sample {s.id}: {where} outside the basis domain") from exc
        raise
    splits = np.cumsum(counts)[:-1]
    Bs, Hs = np.split(B_all, splits), np.split(H_all, splits)

    N, m, lp = len(samples), bases.m, H_all.shape[1]
    white = np.array([s.noise_sd is not None for s in samples])
    BtB = np.empty((N, m, m))
    Bty = np.empty((N, m))
    BtH = np.empty((N, m, lp))
    yty = np.empty(N)
    Hty = np.zeros((2, lp))
    HtH = np.zeros((2, lp, lp))
    noise_logdet = 0.0
    designs = []
    for n, s in enumerate(samples):
        B, H, y = Bs[n], Hs[n], s.values
        designs.append(DesignPair(B, H))
        if s.noise_sd is not None:
            w = 1.0 / s.noise_sd
            B, H, y = B * w[:, None], H * w[:, None], y * w
            noise_logdet += float(np.sum(np.log(s.noise_sd ** 2)))
        g = int(white[n])
        BtB[n] = B.T @ B
        Bty[n] = B.T @ y
        BtH[n] = B.T @ H
        yty[n] = y @ y
        Hty[g] += H.T @ y
        HtH[g] += H.T @ H
    yty_group = np.array([yty[~white].sum(), yty[white].sum()])
    return PreparedData(samples, bases, designs, V, counts, white, BtB, Bty, BtH, yty,
                        Hty, HtH, yty_group, noise_logdet)


def _batched_cholesky(A, data: PreparedData, what):
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    out = np.empty_like(A)
    r = A.shape[-1]
    for n in range(A.shape[0]):
        try:
            out[n] = np.linalg.cholesky(A[n])
        except np.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(A[n]) / r
            try:
                out[n] = np.linalg.cholesky(A[n] + jitter * np.eye(r))
            except np.linalg.LinAlgError as exc:
                sid = data.samples[n].id
                raise NumericalError(f"Cholesky of {what} failed for sample {sid}", sample_id=sid) from exc
    return out


def _solve_vec(A, b):
    return np.linalg.solve(A, b[..., None])[..., 0]


class _Core(NamedTuple):
    s2: np.ndarray      # per-curve noise scale
    C: np.ndarray       # (N, m, r)
    BtBC: np.ndarray    # (N, m, r)
    W: np.ndarray       # (N, r, r)
    Btr: np.ndarray     # (N, m)
    g: np.ndarray       # (N, r)
    rr: np.ndarray      # (2,) pooled squared residual norms


def _core(data: PreparedData, params: ModelParams) -> _Core:
    if params.gamma.shape[0] != data.bases.m * data.bases.q:
        raise InvalidArgumentError("gamma rows do not match m * q")
    if params.theta_mu.shape != (data.BtH.shape[2],):
        raise InvalidArgumentError("theta_mu length does not match l * p")
    theta = params.theta_mu
    s2 = data.noise_scale(params)
    C = c_matrices(params.gamma, data.V)
    BtBC = data.BtB @ C
    W = np.einsum("nmr,nms->nrs", C, BtBC)
    Btr = data.Bty - data.BtH @ theta
    g = np.einsum("nmr,nm->nr", C, Btr)
    rr = data.yty_group - 2.0 * data.Hty @ theta + np.einsum("i,gij,j->g", theta, data.HtH, theta)
    return _Core(s2, C, BtBC, W, Btr, g, rr)


def _group_scale(data, params):
    return np.array([params.sigma2, 1.0])


def nll_fast(data: PreparedData, params: ModelParams) -> float:
    """``sum_n log det Sigma_n + r_n^T Sigma_n^{-1} r_n`` via ``r x r`` Cholesky factors.

    ``F_n F_n^T = I + W_n / sigma^2`` and ``h_n = F_n^{-1} g_n`` give
    ``2 log det F_n + m_n log sigma^2 + |r_n|^2 / sigma^2 - |h_n|^2 / sigma^4``.
    """
    k = _core(data, params)
    r = params.r
    s2 = k.s2
    F = _batched_cholesky(np.eye(r) + k.W / s2[:, None, None], data, "I + W/sigma^2")
    h = _solve_vec(F, k.g)
    logdet_F = np.log(np.diagonal(F, axis1=1, axis2=2)).sum()
    gs = _group_scale(data, params)
    value = (2.0 * logdet_F
             + float(np.sum(data.counts * np.log(s2)))
             + float(np.sum(k.rr / gs))
             - float(np.sum(np.einsum("nr,nr->n", h, h) / s2 ** 2))
             + data.noise_logdet)
    if not np.isfinite(value):
        raise NumericalError("non-finite negative log-likelihood")
    return float(value)


class LikelihoodGrads(NamedTuple):
    theta_mu: np.ndarray
    gamma: np.ndarray       # (m*q, r)
    log_sigma2: float       # derivative with respect to log sigma^2
    sigma2: float           # derivative with respect to sigma^2

    @property
    def beta(self):
        return self.gamma.reshape(-1, order="F")


def nll_and_grads(data: PreparedData, params: ModelParams):
    """Value and all three gradients in one pass over the curves."""
    k = _core(data, params)
    r = params.r
    s2 = k.s2
    eye = np.eye(r)
    # L_n L_n^T = sigma^2 I + W_n; F_n = L_n / sigma.
    L = _batched_cholesky(s2[:, None, None] * eye + k.W, data, "sigma^2 I + W")
    Linv_g = _solve_vec(L, k.g)
    logdet_M = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)   # log det(s2 I + W)
    gs = _group_scale(data, params)
    value = (float(np.sum(logdet_M - r * np.log(s2)))
             + float(np.sum(data.counts * np.log(s2)))
             + float(np.sum(k.rr / gs))
             - float(np.sum(np.einsum("nr,nr->n", Linv_g, Linv_g) / s2)))
    value += data.noise_logdet
    if not np.isfinite(value):
        raise NumericalError("non-finite negative log-likelihood")

    # s_n = (sigma^2 I + W_n)^{-1} g_n
    s = _solve_vec(np.swapaxes(L, 1, 2), Linv_g)
    theta = params.theta_mu

    # theta: -2/s2 (H^T y - H^T H theta) + 2/s2 H^T B E^T E B^T r, with E^T E B^T r = C s
    Cs = np.einsum("nmr,nr->nm", k.C, s)
    g_theta = -2.0 * np.sum((data.Hty - data.HtH @ theta) / gs[:, None], axis=0)
    g_theta += 2.0 * np.einsum("nmp,nm->p", data.BtH / s2[:, None, None], Cs)

    # dL/dC_n = 2 B^T B C M^{-1} - 2/s2 a s^T,  a = B^T r - B^T B C s
    Minv = np.linalg.solve(s2[:, None, None] * eye + k.W, np.broadcast_to(eye, k.W.shape))
    a = k.Btr - np.einsum("nmr,nr->nm", k.BtBC, s)
    dC = 2.0 * k.BtBC @ Minv - 2.0 * (a / s2[:, None])[:, :, None] * s[:, None, :]
    g_gamma = _gamma_from_dC(dC, data.V)

    # sigma^2 (scalar-noise curves only)
    scalar = ~data.white
    if np.any(scalar):
        sig2 = np.float64(params.sigma2)
        tr_MW = np.einsum("nij,nji->n", Minv, k.W)
        u = Cs  # C M^{-1} g
        quad = (np.einsum("nm,nm->n", u, np.einsum("nij,nj->ni", data.BtB, u))
                - 2.0 * np.einsum("nr,nr->n", k.g, s))
        g_s2 = float(np.sum((data.counts[scalar] - tr_MW[scalar]) / sig2)
                     - (k.rr[0] + np.sum(quad[scalar])) / sig2 ** 2)
    else:
        sig2, g_s2 = params.sigma2, 0.0
    return value, LikelihoodGrads(g_theta, g_gamma, g_s2 * sig2, g_s2)


def _gamma_from_dC(dC, V):
    """Accumulate ``dL/dC_n`` into ``Gamma``: block ``(i, j)`` receives ``dC[i, j] * v(z_n)``."""
    N, m, r = dC.shape
    q = V.shape[1]
    return np.einsum("nij,nk->ikj", dC, V).reshape(m * q, r)


def grad_theta_fast(data, params):
    return nll_and_grads(data, params)[1].theta_mu


def grad_sigma_fast(data, params, wrt="log"):
    """Derivative in ``log sigma^2`` (default) or ``sigma^2``; zero when every curve carries ``noise_sd``."""
    grads = nll_and_grads(data, params)[1]
    if wrt == "log":
        return grads.log_sigma2
    if wrt == "sigma2":
        return grads.sigma2
    raise InvalidArgumentError("wrt must be 'log' or 'sigma2'")


def grad_beta_fast(data, params):
    return nll_and_grads(data, params)[1].beta


def theta_curvature(data: PreparedData, params: ModelParams) -> np.ndarray:
    """``2 sum_n H_n^T Sigma_n^{-1} H_n`` (the exact Hessian of the likelihood in ``theta_mu``)."""
    k = _core(data, params)
    r = params.r
    L = _batched_cholesky(k.s2[:, None, None] * np.eye(r) + k.W, data, "sigma^2 I + W")
    X = np.einsum("nmr,nmp->nrp", k.C, data.BtH)
    Y = np.linalg.solve(L, X) / np.sqrt(k.s2)[:, None, None]
    gs = _group_scale(data, params)
    A = np.sum(data.HtH / gs[:, None, None], axis=0) - np.einsum("nrp,nrq->pq", Y, Y)
    return 2.0 * A


def _basis_precision(data, params, k):
    """``A_n = B_n^T Sigma_n^{-1} B_n`` and ``(sigma^2 I + W_n)^{-1}`` via Woodbury."""
    r = params.r
    Minv = np.linalg.inv(k.s2[:, None, None] * np.eye(r) + k.W)
    A = (data.BtB - k.BtBC @ Minv @ np.swapaxes(k.BtBC, 1, 2)) / k.s2[:, None, None]
    return 0.5 * (A + np.swapaxes(A, 1, 2)), Minv


def c_fisher(A, C):
    """Expected Hessian of ``log det Sigma + r^T Sigma^{-1} r`` in ``vec(C)`` (column-major), per curve.

    With ``dS = dC C^T + C dC^T`` the information is ``tr(A dS A dS)``, which
    gives ``2 (C^T A C kron A) + 2 T`` with ``T[(k,j),(l,i)] = (AC)_{ki} (AC)_{lj}``.
    """
    N, m, r = C.shape
    D = A @ C
    P = np.swapaxes(C, 1, 2) @ D
    kron = np.einsum("nji,nkl->njkil", P, A)       # [(k + m j), (l + m i)] before reshape
    T = np.einsum("nki,nlj->njkil", D, D)
    return 2.0 * (kron + T).reshape(N, m * r, m * r)


def c_hessian(A, C, u):
    """Observed Hessian of ``log det Sigma + r^T Sigma^{-1} r`` in ``vec(C)`` (column-major), per curve.

    ``A = B^T Sigma^{-1} B`` and ``u = B^T Sigma^{-1} r``. With ``dS = X C^T + C X^T``
    the second derivative is ``-tr(A dS A dS) + 2 u^T dS A dS u + 2 tr(A X X^T) - 2 u^T X X^T u``.
    """
    N, m, r = C.shape
    w = np.einsum("nmr,nm->nr", C, u)
    # J x = dS u = X w + C X^T u, with J[n, a, j*m + i] = w_j delta_ai + C_aj u_i
    J = np.einsum("nj,ai->naji", w, np.eye(m)) + np.einsum("naj,ni->naji", C, u)
    J = J.reshape(N, m, r * m)
    H = -c_fisher(A, C) + 2.0 * np.swapaxes(J, 1, 2) @ A @ J
    blk = A - np.einsum("ni,nj->nij", u, u)
    H += 2.0 * np.einsum("jk,nab->njakb", np.eye(r), blk).reshape(N, m * r, m * r)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def _to_gamma(Fc, V, m, r):
    """Map per-curve ``vec(C)`` matrices to ``Gamma`` coordinates (C-order over ``(m*q, r)``)."""
    N = Fc.shape[0]
    q = V.shape[1]
    F = Fc.reshape(N, r, m, r, m)
    VV = np.einsum("nk,nl->nkl", V, V).reshape(N, q * q)
    G = (VV.T @ F.reshape(N, -1)).reshape(q, q, r, m, r, m)
    return G.transpose(3, 0, 2, 5, 1, 4).reshape(m * q * r, m * q * r)


def gamma_hessian(data: PreparedData, params: ModelParams) -> np.ndarray:
    """Exact Hessian of the likelihood in ``Gamma`` (C-order flattening of ``(m*q, r)``)."""
    k = _core(data, params)
    A, Minv = _basis_precision(data, params, k)
    s = np.einsum("nij,nj->ni", Minv, k.g)
    u = (k.Btr - np.einsum("nmr,nr->nm", k.BtBC, s)) / k.s2[:, None]
    N, m, r = k.C.shape
    return _to_gamma(c_hessian(A, k.C, u), data.V, m, r)


def gamma_fisher(data: PreparedData, params: ModelParams) -> np.ndarray:
    """Fisher information of the likelihood in ``Gamma`` (C-order flattening of ``(m*q, r)``)."""
    k = _core(data, params)
    A, _ = _basis_precision(data, params, k)
    N, m, r = k.C.shape
    return _to_gamma(c_fisher(A, k.C), data.V, m, r)


def log_sigma2_fisher(data: PreparedData, params: ModelParams) -> float:
    """Fisher information in ``log sigma^2``: ``sum_n sigma^4 tr(Sigma_n^{-2})`` over scalar-noise curves."""
    scalar = ~data.white
    if not np.any(scalar):
        return 0.0
    k = _core(data, params)
    _, Minv = _basis_precision(data, params, k)
    MW = Minv @ k.W
    tr1 = np.einsum("nii->n", MW)
    tr2 = np.einsum("nij,nji->n", MW, MW)
    return float(np.sum((data.counts - 2.0 * tr1 + tr2)[scalar]))


# ---------------------------------------------------------------------------
# Per-curve workspace, literal lemma forms (used for checks, not for fitting)
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SampleWorkspace:
    W: np.ndarray
    g: np.ndarray
    h: np.ndarray
    F: np.ndarray
    L: np.ndarray
    E: np.ndarray
    K: np.ndarray


def _whitened(data: PreparedData, n, params):
    s = data.samples[n]
    d = data.designs[n]
    resid = s.values - d.H @ params.theta_mu
    B = d.B
    if s.noise_sd is not None:
        w = 1.0 / s.noise_sd
        return B * w[:, None], resid * w, 1.0
    return B, resid, params.sigma2


def sample_workspace(data: PreparedData, n: int, params: ModelParams) -> SampleWorkspace:
    B, resid, s2 = _whitened(data, n, params)
    C = c_matrices(params.gamma, data.V[n:n + 1])[0]
    BC = B @ C
    W = BC.T @ BC
    g = BC.T @ resid
    r = params.r
    F = np.linalg.cholesky(np.eye(r) + W / s2)
    L = np.linalg.cholesky(s2 * np.eye(r) + W)
    h = np.linalg.solve(F, g)
    E = np.linalg.solve(L, C.T)
    K = BC @ np.linalg.inv(s2 * np.eye(r) + W)
    return SampleWorkspace(W, g, h, F, L, E, K)


def lemma_grad_c(data: PreparedData, n: int, params: ModelParams) -> np.ndarray:
    """``dL/dC_n`` written exactly as the Woodbury-reduced expression with ``K_n``."""
    B, resid, s2 = _whitened(data, n, params)
    ws = sample_workspace(data, n, params)
    C = c_matrices(params.gamma, data.V[n:n + 1])[0]
    S = np.outer(resid, resid)
    BtK = B.T @ ws.K
    first = 2.0 / s2 * (B.T @ B @ C - BtK @ ws.W)
    second = 2.0 / s2 ** 2 * (B.T - BtK @ C.T @ B.T) @ S @ (B @ C - ws.K @ ws.W)
    return first - second


# ---------------------------------------------------------------------------
# Dense reference implementations
# ---------------------------------------------------------------------------

def _dense_parts(data: PreparedData, n, params):
    s = data.samples[n]
    d = data.designs[n]
    C = c_matrices(params.gamma, data.V[n:n + 1])[0]
    noise = s.noise_sd ** 2 if s.noise_sd is not None else np.full(s.n_obs, params.sigma2)
    BC = d.B @ C
    Sigma = BC @ BC.T + np.diag(noise)
    resid = s.values - d.H @ params.theta_mu
    return d, C, Sigma, resid


def nll_dense(data: PreparedData, params: ModelParams) -> float:
    """Direct ``O(m_n^3)`` evaluation; reference for the fast path."""
    total = 0.0
    for n in range(data.n_samples):
        _, _, Sigma, resid = _dense_parts(data, n, params)
        sign, logdet = np.linalg.slogdet(Sigma)
        if sign <= 0:
            raise NumericalError(f"Sigma_n not positive definite for sample {data.samples[n].id}",
                                 sample_id=data.samples[n].id)
        total += logdet + resid @ np.linalg.solve(Sigma, resid)
    return float(total)


def grad_theta_dense(data, params):
    out = np.zeros_like(params.theta_mu)
    for n in range(data.n_samples):
        d, _, Sigma, resid = _dense_parts(data, n, params)
        out += 2.0 * d.H.T @ np.linalg.solve(Sigma, -resid)
    return out


def grad_sigma_dense(data, params):
    """``sum tr(Sigma^{-1}) - r^T Sigma^{-2} r`` over scalar-noise curves (derivative in ``sigma^2``)."""
    out = 0.0
    for n in range(data.n_samples):
        if data.white[n]:
            continue
        _, _, Sigma, resid = _dense_parts(data, n, params)
        Si = np.linalg.inv(Sigma)
        x = Si @ resid
        out += np.trace(Si) - x @ x
    return float(out)


def grad_c_dense(data, n, params):
    """``2 B^T (Sigma^{-1} - Sigma^{-1} S Sigma^{-1}) B C`` with explicit inverse."""
    d, C, Sigma, resid = _dense_parts(data, n, params)
    Si = np.linalg.inv(Sigma)
    x = Si @ resid
    return 2.0 * d.B.T @ (Si - np.outer(x, x)) @ d.B @ C


def grad_beta_dense(data, params):
    dC = np.array([grad_c_dense(data, n, params) for n in range(data.n_samples)])
    return _gamma_from_dC(dC, data.V).reshape(-1, order="F")


def woodbury_inverse(data: PreparedData, n: int, params: ModelParams) -> np.ndarray:
    """``sigma^{-2} (I - B C (sigma^2 I + W)^{-1} C^T B^T)`` for a scalar-noise curve."""
    d = data.designs[n]
    C = c_matrices(params.gamma, data.V[n:n + 1])[0]
    s2 = params.sigma2
    BC = d.B @ C
    W = BC.T @ BC
    return (np.eye(d.B.shape[0]) - BC @ np.linalg.solve(s2 * np.eye(params.r) + W, BC.T)) / s2


# ---------------------------------------------------------------------------
# Penalized objective
# ---------------------------------------------------------------------------

def objective_value(data, params, penalty) -> float:
    return nll_fast(data, params) + penalty.mean_value(params.theta_mu) + penalty.cov_value(params.gamma)


def objective(data, params, penalty):
    """Penalized objective and its gradients ``(theta_mu, gamma, log_sigma2)``."""
    value, g = nll_and_grads(data, params)
    value += penalty.mean_value(params.theta_mu) + penalty.cov_value(params.gamma)
    grads = LikelihoodGrads(g.theta_mu + penalty.mean_grad(params.theta_mu),
                            g.gamma + penalty.cov_grad(params.gamma), g.log_sigma2, g.sigma2)
    return value, grads
