"""Block coordinate descent for the penalized likelihood, and smoothing-parameter CV.

Each outer sweep runs, in turn, descent on the mean coefficients, the
covariance coefficients and ``log sigma^2`` until the block stalls. All steps
use Armijo backtracking on the fast objective, so the recorded objective never
increases.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InitError, InvalidArgumentError, NumericalError
from .init import bin_count_candidates, initialize
from .likelihood import (PreparedData, gamma_fisher, gamma_hessian, log_sigma2_fisher, objective, objective_value,
                         prepare, theta_curvature)
from .model import Bases, ModelParams, make_bases
from .penalty import Lambdas, PenaltyOperator, assemble
from .predict import heldout_nll

log = logging.getLogger(__name__)

DIRECTIONS = ("newton", "fisher", "steepest")


@dataclass(frozen=True)
class FitConfig:
    r: int = 3
    l: int = 10
    p: int = 5
    m: int = 10
    q: int = 7
    degree: int = 3
    lambdas: Tuple[float, float, float, float] = (1e-3, 1e-3, 1e-3, 1e-3)
    max_outer: int = 50
    max_inner: int = 200
    rel_tol: float = 1e-6
    inner_tol: float = 1e-4
    shrink: float = 0.5
    armijo: float = 1e-4
    initial_step: float = 1.0
    min_step: float = 1e-14
    direction: str = "newton"
    max_log_sigma_step: float = 1.0
    seed: int = 0
    n_bins: Optional[int] = None
    min_bin_count: int = 10
    init_resolutions: int = 4
    cv_folds: int = 5
    cv_observe_fraction: float = 0.25
    t_domain: Optional[Tuple[float, float]] = None
    z_domain: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        for name in ("r", "l", "p", "m", "q", "degree", "max_outer", "max_inner", "cv_folds", "init_resolutions"):
            if int(getattr(self, name)) <= 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not 0 < self.rel_tol < 1 or not 0 < self.inner_tol < 1:
            raise InvalidArgumentError("tolerances must lie in (0, 1)")
        if self.r > self.m:
            raise InvalidArgumentError(f"r={self.r} exceeds m={self.m}")
        if self.direction not in DIRECTIONS:
            raise InvalidArgumentError(f"direction must be one of {DIRECTIONS}")
        if not 0 < self.shrink < 1:
            raise InvalidArgumentError("shrink must lie in (0, 1)")
        if len(self.lambdas) != 4 or any(v < 0 for v in self.lambdas):
            raise InvalidArgumentError("lambdas must be four nonnegative values")


@dataclass(eq=False)
class FitDiagnostics:
    objective_trace: List[float] = field(default_factory=list)
    block_trace: List[str] = field(default_factory=list)
    n_outer: int = 0
    converged: bool = False
    line_search_failures: int = 0
    grad_norms: dict = field(default_factory=dict)
    init_bins: Optional[int] = None


@dataclass(eq=False)
class FittedModel:
    params: ModelParams
    bases: Bases
    lambdas: Lambdas
    config: FitConfig
    diagnostics: FitDiagnostics
    n_train: int
    t_range: Tuple[float, float]
    z_range: Tuple[float, float]
    heteroscedastic: bool = False

    @property
    def objective(self) -> float:
        return self.diagnostics.objective_trace[-1]


def data_domains(samples, config: FitConfig):
    t_lo = min(float(s.times[0]) for s in samples)
    t_hi = max(float(s.times[-1]) for s in samples)
    z = [s.covariate for s in samples]
    t_dom = config.t_domain or (t_lo, t_hi)
    z_dom = config.z_domain or (min(z), max(z))
    if not t_dom[1] > t_dom[0]:
        raise InvalidArgumentError("observation times span an empty interval")
    if not z_dom[1] > z_dom[0]:
        raise InvalidArgumentError("covariates span an empty interval")
    return (float(t_dom[0]), float(t_dom[1])), (float(z_dom[0]), float(z_dom[1])), (t_lo, t_hi), (min(z), max(z))


def build_bases(samples, config: FitConfig):
    t_dom, z_dom, t_rng, z_rng = data_domains(samples, config)
    return make_bases(config.l, config.p, config.m, config.q, t_dom, z_dom, config.degree), t_rng, z_rng


class _Descent:
    """Armijo backtracking along a block direction, recording accepted values."""

    def __init__(self, data, penalty, config, diag):
        self.data = data
        self.penalty = penalty
        self.cfg = config
        self.diag = diag

    def value(self, params):
        try:
            with np.errstate(all="ignore"):
                f = objective_value(self.data, params, self.penalty)
        except NumericalError:
            return np.inf
        return f if np.isfinite(f) else np.inf

    def line_search(self, params, f0, slope, direction, setter, step):
        """Backtrack from ``step``; returns ``(params, f, step)`` or ``None`` on failure."""
        cfg = self.cfg
        if slope >= 0:
            return None
        dnorm = np.linalg.norm(direction)
        while step * dnorm >= cfg.min_step:
            trial = setter(params, step * direction)
            f = self.value(trial)
            if f <= f0 + cfg.armijo * step * slope:
                return trial, f, step
            step *= cfg.shrink
        return None

    def record(self, f, block):
        self.diag.objective_trace.append(float(f))
        self.diag.block_trace.append(block)

    def direction(self, params, g, block):
        """Descent direction; ``None`` asks for a plain gradient step."""
        cfg = self.cfg
        if cfg.direction == "steepest":
            return None
        if block == "theta":
            H = theta_curvature(self.data, params) + 2.0 * self.penalty.mean_matrix
        elif block == "gamma":
            curv = gamma_hessian if cfg.direction == "newton" else gamma_fisher
            H = curv(self.data, params) + np.kron(2.0 * self.penalty.cov_matrix, np.eye(params.r))
        else:
            info = log_sigma2_fisher(self.data, params)
            return -g / info if info > 0 else None
        return -_psd_solve(H, g.ravel()).reshape(g.shape)

    def run_block(self, params, f, block):
        cfg = self.cfg
        prev_x = prev_g = None
        for it in range(cfg.max_inner):
            _, grads = objective(self.data, params, self.penalty)
            g = _block_get(grads, block)
            d = self.direction(params, g, block)
            step = cfg.initial_step
            if d is None:
                d = -g
                x = _param_get(params, block)
                if prev_x is not None:
                    sy = float(np.vdot(x - prev_x, g - prev_g))
                    if sy > 0:
                        step = float(np.vdot(x - prev_x, x - prev_x)) / sy   # Barzilai-Borwein
                prev_x, prev_g = x, g
            if block == "sigma":
                # the log-variance objective is exponentially steep below its minimum
                step = min(step, cfg.max_log_sigma_step / max(abs(float(d[0])), 1e-300))
            slope = float(np.vdot(g, d))
            res = self.line_search(params, f, slope, d, _setter(block), step)
            if res is None:
                self.diag.line_search_failures += 1
                break
            params, f_new, _ = res
            self.record(f_new, block)
            done = abs(f - f_new) <= cfg.inner_tol * max(1.0, abs(f_new))
            f = f_new
            if done:
                break
        return params, f


def _psd_solve(H, g):
    """Solve ``|H| x = g``, with eigenvalues replaced by their magnitudes and floored.

    For positive definite ``H`` this is an ordinary solve; otherwise negative
    curvature is turned into ascent-free curvature, so ``-x`` is a descent direction.
    """
    H = 0.5 * (H + H.T)
    floor = 1e-8 * max(np.abs(np.diag(H)).mean(), 1e-300)
    try:
        c = cho_factor(H + floor * np.eye(H.shape[0]), lower=True)
        return cho_solve(c, g)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(H)
        vals = np.maximum(np.abs(vals), floor)
        return vecs @ ((vecs.T @ g) / vals)


def _block_get(grads, block):
    if block == "theta":
        return grads.theta_mu
    if block == "gamma":
        return grads.gamma
    return np.array([grads.log_sigma2])


def _param_get(params, block):
    if block == "theta":
        return params.theta_mu
    if block == "gamma":
        return params.gamma
    return np.array([params.log_sigma2])


def _setter(block):
    def set_theta(p, d):
        return ModelParams(p.theta_mu + d, p.gamma, p.log_sigma2)

    def set_gamma(p, d):
        return ModelParams(p.theta_mu, p.gamma + d, p.log_sigma2)

    def set_sigma(p, d):
        return ModelParams(p.theta_mu, p.gamma, p.log_sigma2 + float(d[0]))

    return {"theta": set_theta, "gamma": set_gamma, "sigma": set_sigma}[block]


def optimize(data: PreparedData, params: ModelParams, penalty: PenaltyOperator, config: FitConfig,
             blocks=("theta", "gamma", "sigma")):
    """Run outer sweeps of block descent from ``params``."""
    diag = FitDiagnostics()
    desc = _Descent(data, penalty, config, diag)
    f = desc.value(params)
    if not np.isfinite(f):
        raise InitError("objective is not finite at the starting point")
    desc.record(f, "init")
    if data.all_white:
        blocks = tuple(b for b in blocks if b != "sigma")
    for outer in range(config.max_outer):
        f_start = f
        for block in blocks:
            params, f = desc.run_block(params, f, block)
        diag.n_outer = outer + 1
        if abs(f_start - f) <= config.rel_tol * max(1.0, abs(f)):
            diag.converged = True
            break
    _, grads = objective(data, params, penalty)
    diag.grad_norms = {"theta": float(np.linalg.norm(grads.theta_mu)),
                       "gamma": float(np.linalg.norm(grads.gamma)),
                       "sigma": 0.0 if data.all_white else float(abs(grads.log_sigma2))}
    return params, diag


def fit(samples, config: FitConfig = FitConfig(), init_params: Optional[ModelParams] = None,
        bases: Optional[Bases] = None) -> FittedModel:
    """Fit the model; ``init_params`` bypasses the binned initializer."""
    samples = list(samples)
    if len(samples) < 2:
        raise InvalidArgumentError("need at least two curves")
    if bases is None:
        bases, t_rng, z_rng = build_bases(samples, config)
    else:
        _, _, t_rng, z_rng = data_domains(samples, config)
    data = prepare(samples, bases)
    penalty = assemble(bases.b, bases.v, bases.a, bases.u, Lambdas(*config.lambdas))
    if init_params is not None:
        params, diag = optimize(data, init_params.copy(), penalty, config)
    else:
        params, diag = _binned_start(samples, bases, data, penalty, config)
    return FittedModel(params, bases, Lambdas(*config.lambdas), config, diag, len(samples),
                       tuple(map(float, t_rng)), tuple(map(float, z_rng)), bool(data.white.any()))


def _binned_start(samples, bases, data, penalty, config):
    """Optimize from the binned start at one or more bin counts; keep the lowest objective.

    With ``n_bins`` unset, ``init_resolutions`` neighbouring bin counts are
    tried. Different counts can land in different nearby local optima, and
    the extra fits are cheaper than random restarts.
    """
    if config.n_bins is not None:
        counts = [config.n_bins]
    else:
        counts = bin_count_candidates(len(samples), config.init_resolutions)
    best = None
    errors = []
    for nb in counts:
        try:
            p0, _ = initialize(samples, bases, config.r, nb, config.min_bin_count)
        except InitError as exc:
            errors.append(exc)
            continue
        params, diag = optimize(data, p0, penalty, config)
        diag.init_bins = nb
        if best is None or diag.objective_trace[-1] < best[1].objective_trace[-1]:
            best = (params, diag)
    if best is None:
        raise errors[0]
    return best


def random_init(bases: Bases, r: int, rng, scale: float = 1.0, log_sigma2: float = 0.0) -> ModelParams:
    return ModelParams(np.zeros(bases.l * bases.p),
                       scale * rng.standard_normal((bases.m * bases.q, r)), log_sigma2)


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class CVRow:
    stage: str
    lambdas: Tuple[float, float, float, float]
    score: float
    n_folds: int


def fold_indices(n: int, folds: int, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(perm[k::folds]) for k in range(folds)]


def _pick(rows: Sequence[CVRow]):
    scored = [r for r in rows if np.isfinite(r.score)]
    if not scored:
        raise NumericalError("no grid point produced a finite CV score")
    best = min(r.score for r in scored)
    ties = [r for r in scored if r.score <= best + 1e-12 * max(1.0, abs(best))]
    return max(ties, key=lambda r: sum(r.lambdas)).lambdas


def cross_validate(samples, config: FitConfig, mean_grid, cov_grid):
    """K-fold CV by whole curves over the four smoothing parameters.

    The search is done in two stages: mean smoothing parameters
    ``(t_mean, z_mean)`` are chosen with the covariance held at its initial
    value, then covariance parameters ``(t, z)`` are chosen with the full fit.
    The score is the held-out Gaussian predictive negative log-likelihood.

    Returns ``(best_lambdas, table)``.
    """
    samples = list(samples)
    mean_grid = [tuple(map(float, g)) for g in mean_grid]
    cov_grid = [tuple(map(float, g)) for g in cov_grid]
    if not mean_grid or not cov_grid:
        raise InvalidArgumentError("grids must be nonempty")
    if config.cv_folds < 2:
        raise InvalidArgumentError("cv_folds must be >= 2")
    folds = fold_indices(len(samples), config.cv_folds, config.seed)

    prepared = []
    for k, test_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(len(samples)), test_idx)
        train = [samples[i] for i in train_idx]
        test = [samples[i] for i in test_idx]
        zs = [s.covariate for s in train]
        if len(train) < 2 or max(zs) <= min(zs):
            warnings.warn(f"fold {k}: training covariates have an empty range; fold skipped")
            continue
        bases, t_rng, z_rng = build_bases(train, config)
        init, _ = initialize(train, bases, config.r, config.n_bins, config.min_bin_count)
        prepared.append((train, test, bases, t_rng, z_rng, prepare(train, bases), init))
    if not prepared:
        raise InvalidArgumentError("every fold was skipped")

    def score(lams, blocks):
        cfg = _replace(config, lambdas=lams)
        scores = []
        for train, test, bases, t_rng, z_rng, data, init in prepared:
            pen = assemble(bases.b, bases.v, bases.a, bases.u, Lambdas(*lams))
            params, diag = optimize(data, init.copy(), pen, cfg, blocks=blocks)
            model = FittedModel(params, bases, Lambdas(*lams), cfg, diag, len(train), t_rng, z_rng)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                scores.append(heldout_nll(model, test, config.cv_observe_fraction, config.seed))
        return float(np.mean(scores)), len(scores)

    table = []
    c0 = cov_grid[0]
    for mt, mz in mean_grid:
        lams = (c0[0], c0[1], mt, mz)
        s, nf = score(lams, ("theta", "sigma"))
        table.append(CVRow("mean", lams, s, nf))
    best_mean = _pick(table)
    stage2 = []
    for ct, cz in cov_grid:
        lams = (ct, cz, best_mean[2], best_mean[3])
        s, nf = score(lams, ("theta", "gamma", "sigma"))
        stage2.append(CVRow("cov", lams, s, nf))
    table.extend(stage2)
    return _pick(stage2), table


def _replace(config, **kw):
    d = asdict(config)
    d.update(kw)
    return FitConfig(**d)
