"""Score inference and curve prediction for partially observed curves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import tensor_rows
from .errors import InvalidArgumentError, NumericalError
from .model import FunctionalSample, eigen_at


@dataclass(eq=False)
class ScorePosterior:
    mean: np.ndarray        # (r,)
    cov: np.ndarray         # (r, r)
    theta_star: np.ndarray  # (m, r) eigenvectors of Sigma(z*)
    d_star: np.ndarray      # (r,) eigenvalues
    z: float


def _outside_mode(model, z):
    lo, hi = model.bases.z_domain
    if not lo <= z <= hi:
        warnings.warn(f"covariate {z} outside training range [{lo}, {hi}]; spline extrapolation is unreliable",
                      stacklevel=3)
        return "extrapolate"
    return "clamp"


def _mean_at(model, t, z, outside):
    H = tensor_rows(model.bases.a, model.bases.u, np.atleast_1d(t), z, outside)
    return H @ model.params.theta_mu


def infer_scores(model, sample: FunctionalSample) -> ScorePosterior:
    """Conditional mean and covariance of the scores given the observed values.

    ``noise_sd`` on the sample replaces the fitted noise variance.
    """
    if sample.n_obs < 1:
        raise InvalidArgumentError("need at least one observation")
    z = sample.covariate
    mode = _outside_mode(model, z)
    params, bases = model.params, model.bases
    d_star, theta_star = eigen_at(params, z, bases.v, mode)
    B = np.atleast_2d(bases.b.eval(sample.times, mode))
    resid = sample.values - _mean_at(model, sample.times, z, mode)
    noise = sample.noise_sd ** 2 if sample.noise_sd is not None else np.full(sample.n_obs, params.sigma2)
    BT = B @ theta_star                               # (m*, r)
    K = BT * d_star                                   # cov(y, xi) = B Theta D
    Sy = K @ BT.T + np.diag(noise)
    try:
        cf = cho_factor(Sy, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"marginal covariance of sample {sample.id} is singular", sample_id=sample.id) from exc
    mean = K.T @ cho_solve(cf, resid)
    cov = np.diag(d_star) - K.T @ cho_solve(cf, K)
    cov = 0.5 * (cov + cov.T)
    return ScorePosterior(mean, cov, theta_star, d_star, z)


def predict_curve(model, posterior: ScorePosterior, z, t_grid, latent: bool = False, noise_sd=None):
    """Predictive mean and variance at ``t_grid``.

    ``latent=True`` drops the noise term. ``noise_sd`` (per point) replaces the
    fitted noise variance for observation-level prediction.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    mode = _outside_mode(model, z)
    Bt = np.atleast_2d(model.bases.b.eval(t_grid, mode)) @ posterior.theta_star
    mean = _mean_at(model, t_grid, z, mode) + Bt @ posterior.mean
    var = np.einsum("ij,jk,ik->i", Bt, posterior.cov, Bt)
    var = np.clip(var, 0.0, None)
    if not latent:
        var = var + (np.asarray(noise_sd) ** 2 if noise_sd is not None else model.params.sigma2)
    return mean, var


def split_observed(n_obs: int, fraction: float, rng):
    """Random observed/held-out index split; the observed part has ``round(fraction * n_obs)`` points."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgumentError("observe_fraction must lie in (0, 1)")
    k = int(round(fraction * n_obs))
    perm = rng.permutation(n_obs)
    return np.sort(perm[:k]), np.sort(perm[k:])


def conditional_predictions(model, samples, observe_fraction, seed, min_observed=2, latent=False):
    """Condition on a random subset of each curve and predict every point.

    Yields ``(sample, observed_idx, heldout_idx, mean, var)``; curves with
    fewer than ``min_observed`` conditioning points are skipped and counted
    in the returned list's ``skipped`` attribute.
    """
    rng = np.random.default_rng(seed)
    out = _Results()
    for s in samples:
        obs, rest = split_observed(s.n_obs, observe_fraction, rng)
        if obs.size < min_observed or rest.size == 0:
            out.skipped += 1
            continue
        post = infer_scores(model, s.subset(obs))
        mean, var = predict_curve(model, post, s.covariate, s.times, latent=latent, noise_sd=s.noise_sd)
        out.append((s, obs, rest, mean, var))
    return out


class _Results(list):
    skipped = 0


def predict_mse(model, samples, observe_fraction: float = 0.25, seed: int = 0) -> float:
    """Mean squared error on the points not used for conditioning."""
    res = conditional_predictions(model, samples, observe_fraction, seed)
    if not res:
        raise InvalidArgumentError("no curve had enough observations to condition on")
    err = np.concatenate([s.values[rest] - mean[rest] for s, _, rest, mean, _ in res])
    return float(np.mean(err ** 2))


def coverage(model, samples, observe_fraction: float = 0.2, seed: int = 0, z_score: float = 1.96) -> float:
    """Fraction of held-out points inside ``mean +- z_score * sd``."""
    res = conditional_predictions(model, samples, observe_fraction, seed)
    hits = np.concatenate([np.abs(s.values[rest] - mean[rest]) <= z_score * np.sqrt(var[rest])
                           for s, _, rest, mean, var in res])
    return float(hits.mean())


def heldout_nll(model, samples, observe_fraction: float = 0.25, seed: int = 0) -> float:
    """Mean Gaussian predictive negative log-likelihood over held-out points."""
    res = conditional_predictions(model, samples, observe_fraction, seed)
    if not res:
        raise InvalidArgumentError("no curve had enough observations to condition on")
    terms = np.concatenate([
        0.5 * (np.log(2 * np.pi * var[rest]) + (s.values[rest] - mean[rest]) ** 2 / var[rest])
        for s, _, rest, mean, var in res])
    return float(terms.mean())


def is_common_grid(samples) -> bool:
    t0 = samples[0].times
    return all(s.times.shape == t0.shape and np.array_equal(s.times, t0) for s in samples)


def fve(model, samples, observe_fraction: float = 0.2, seed: int = 0) -> float:
    """Fraction of variation explained by reconstructions from partially observed curves.

    Scores are inferred from a random ``observe_fraction`` of each curve and the
    reconstruction error is summed over every point. The baseline is the
    pointwise cross-curve mean when all curves share one time grid, otherwise
    the global mean of all observations.
    """
    samples = list(samples)
    res = conditional_predictions(model, samples, observe_fraction, seed, min_observed=1, latent=True)
    used = [s for s, *_ in res]
    if not used:
        raise InvalidArgumentError("no curve could be reconstructed")
    num = sum(float(np.sum((s.values - mean) ** 2)) for s, _, _, mean, _ in res)
    if is_common_grid(used):
        Y = np.array([s.values for s in used])
        den = float(np.sum((Y - Y.mean(axis=0)) ** 2))
    else:
        y = np.concatenate([s.values for s in used])
        den = float(np.sum((y - y.mean()) ** 2))
    if den <= 0:
        raise InvalidArgumentError("FVE undefined: data have no variation")
    return 1.0 - num / den
