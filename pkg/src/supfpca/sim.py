"""Synthetic curves with covariate-dependent mean, eigenfunctions and eigenvalues."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from .model import FunctionalSample

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SimTruth:
    """Generating model on ``t in [0, 1]``.

    ``mu(t, z) = 30 (t - z)^2``; eigenfunctions ``sqrt2 cos(pi(t+z))``,
    ``sqrt2 sin(pi(t+z))``, ``sqrt2 cos(3 pi(t-z))`` with variances
    ``(2(z+20), z+10, z)``; white noise variance ``sigma2``.
    """

    n: int = 2000
    m_tilde: int = 51
    sigma2: float = 0.1
    z_range: Tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    irregular: Optional[float] = None   # fraction of the grid kept per curve
    score_scale: float = 1.0
    fixed_z: Optional[float] = None
    id_offset: int = 0

    def t_grid(self):
        return np.linspace(0.0, 1.0, self.m_tilde)


def mean_function(t, z):
    return 30.0 * (np.asarray(t) - np.asarray(z)) ** 2


def eigenfunctions(t, z):
    """Array of shape ``(3,) + broadcast(t, z).shape``."""
    t, z = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(z, dtype=float))
    return np.stack([SQRT2 * np.cos(np.pi * (t + z)),
                     SQRT2 * np.sin(np.pi * (t + z)),
                     SQRT2 * np.cos(3.0 * np.pi * (t - z))])


def eigenvalues(z):
    z = np.asarray(z, dtype=float)
    return np.stack([2.0 * (z + 20.0), z + 10.0, z], axis=-1)


def true_covariance(t, z):
    """``sum_j d_j(z) f_j(t, z) f_j(t', z)`` on the grid ``t`` at scalar ``z``."""
    F = eigenfunctions(t, z)
    return (F.T * eigenvalues(z)) @ F


def generate(truth: SimTruth):
    rng = np.random.default_rng(truth.seed)
    n = truth.n
    t = truth.t_grid()
    if truth.fixed_z is None:
        z = rng.uniform(truth.z_range[0], truth.z_range[1], size=n)
    else:
        z = np.full(n, float(truth.fixed_z))
    xi = rng.standard_normal((n, 3)) * np.sqrt(eigenvalues(z)) * truth.score_scale
    F = eigenfunctions(t[None, :], z[:, None])                  # (3, n, T)
    Y = mean_function(t[None, :], z[:, None]) + np.einsum("nj,jnt->nt", xi, F)
    if truth.sigma2 > 0:
        Y = Y + rng.standard_normal(Y.shape) * np.sqrt(truth.sigma2)
    samples = []
    keep = None
    if truth.irregular is not None:
        k = max(2, int(round(truth.irregular * truth.m_tilde)))
    for i in range(n):
        if truth.irregular is not None:
            keep = np.sort(rng.choice(truth.m_tilde, size=k, replace=False))
            samples.append(FunctionalSample(i + truth.id_offset, t[keep], Y[i, keep], z[i]))
        else:
            samples.append(FunctionalSample(i + truth.id_offset, t, Y[i], z[i]))
    return samples


# ---------------------------------------------------------------------------
# Recovery metrics and the study driver
# ---------------------------------------------------------------------------

def align_to_truth(est, truth):
    """Reorder and sign-flip estimated functions ``(r, T)`` to best match ``truth`` ``(k, T)``.

    Greedy on absolute inner products; returns an array shaped like ``truth``
    for the matched functions (rows without a match stay zero).
    """
    P = truth @ est.T
    out = np.zeros_like(truth)
    free_t, free_e = list(range(truth.shape[0])), list(range(est.shape[0]))
    while free_t and free_e:
        sub = np.abs(P[np.ix_(free_t, free_e)])
        a, b = np.unravel_index(np.argmax(sub), sub.shape)
        i, j = free_t[a], free_e[b]
        out[i] = est[j] * (1.0 if P[i, j] >= 0 else -1.0)
        free_t.remove(i)
        free_e.remove(j)
    return out


def eigen_mise(model, t_grid=None, z_grid=None):
    """Per-eigenfunction integrated squared error over ``[0,1]^2`` after alignment at each ``z``."""
    from .model import eigen_surface
    t_grid = np.linspace(0.0, 1.0, 101) if t_grid is None else np.asarray(t_grid, dtype=float)
    z_grid = np.linspace(0.0, 1.0, 51) if z_grid is None else np.asarray(z_grid, dtype=float)
    _, est = eigen_surface(model.params, model.bases, z_grid, t_grid, outside="clamp")
    r = est.shape[1]
    err = np.empty((z_grid.size, r))
    for k, z in enumerate(z_grid):
        truth = eigenfunctions(t_grid, z)[:r]
        diff = align_to_truth(est[k], truth) - truth
        err[k] = trapezoid(diff ** 2, t_grid, axis=1)
    return trapezoid(err, z_grid, axis=0) / (z_grid[-1] - z_grid[0])


@dataclass(frozen=True)
class StudyConfig:
    n_train: int = 2000
    n_test: int = 1000
    m_tilde: int = 51
    sigma2: float = 0.1
    seed: int = 0
    ranks: Tuple[int, ...] = (1, 2, 3)
    observe_fraction: float = 0.2
    lambdas: Tuple[float, float, float, float] = (1e-3, 1e-3, 1e-3, 1e-3)
    l: int = 10
    p: int = 5
    m: int = 10
    q: int = 7
    surface_z: Tuple[float, ...] = (0.2, 0.5, 0.7)
    n_interval_curves: int = 5
    repetitions: int = 1


@dataclass(eq=False)
class StudyReport:
    rows: list          # dicts: rep, r, fve, coverage, mse, objective, outer, converged, mise_1..
    text: str
    files: dict         # name -> CSV text


def _fmt(x):
    return f"{x:.6f}"


def _study_once(cfg: StudyConfig, rep: int):
    from .fit import FitConfig, fit
    from .model import eigen_surface
    from .predict import conditional_predictions, coverage, fve, predict_mse

    seed = cfg.seed + 1000 * rep
    train = generate(SimTruth(n=cfg.n_train, m_tilde=cfg.m_tilde, sigma2=cfg.sigma2, seed=seed))
    test = generate(SimTruth(n=cfg.n_test, m_tilde=cfg.m_tilde, sigma2=cfg.sigma2, seed=seed + 1,
                             id_offset=cfg.n_train))
    rows, files = [], {}
    t_grid = np.linspace(0.0, 1.0, 101)
    for r in cfg.ranks:
        fc = FitConfig(r=r, l=cfg.l, p=cfg.p, m=cfg.m, q=cfg.q, lambdas=cfg.lambdas, seed=seed,
                       t_domain=(0.0, 1.0), z_domain=(0.0, 1.0))
        model = fit(train, fc)
        row = {"rep": rep, "r": r,
               "fve": fve(model, test, cfg.observe_fraction, seed),
               "coverage": coverage(model, test, cfg.observe_fraction, seed),
               "mse": predict_mse(model, test, cfg.observe_fraction, seed),
               "objective": model.objective, "outer": model.diagnostics.n_outer,
               "converged": model.diagnostics.converged}
        for j, v in enumerate(eigen_mise(model), 1):
            row[f"mise_{j}"] = float(v)
        rows.append(row)
        if rep == 0:
            vals, funcs = eigen_surface(model.params, model.bases, np.asarray(cfg.surface_z), t_grid, "clamp")
            lines = ["z,t,j,value,eigenvalue,truth"]
            for k, z in enumerate(cfg.surface_z):
                truth = eigenfunctions(t_grid, z)
                aligned = align_to_truth(funcs[k], truth[:r])
                for j in range(r):
                    for t, v, tv in zip(t_grid, aligned[j], truth[j]):
                        lines.append(f"{z:g},{t:g},{j + 1},{_fmt(v)},{_fmt(vals[k, j])},{_fmt(tv)}")
            files[f"eigen_r{r}.csv"] = "\n".join(lines) + "\n"
            res = conditional_predictions(model, test[: cfg.n_interval_curves], cfg.observe_fraction, seed)
            lines = ["id,t,y,observed,mean,lower,upper"]
            for s, obs, _, mean, var in res:
                mask = np.zeros(s.n_obs, dtype=bool)
                mask[obs] = True
                sd = np.sqrt(var)
                for i in range(s.n_obs):
                    lines.append(f"{s.id},{s.times[i]:g},{_fmt(s.values[i])},{int(mask[i])},"
                                 f"{_fmt(mean[i])},{_fmt(mean[i] - 1.96 * sd[i])},{_fmt(mean[i] + 1.96 * sd[i])}")
            files[f"intervals_r{r}.csv"] = "\n".join(lines) + "\n"
    return rows, files


def run_study(cfg: StudyConfig = StudyConfig(), out_dir=None) -> StudyReport:
    """Fit every rank on fresh train/test draws and summarize test-set recovery.

    With ``out_dir`` the report and the eigen-surface and interval CSVs are
    written there. The report text depends only on the configuration.
    """
    import warnings

    rows, files = [], {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(cfg.repetitions):
            rrows, rfiles = _study_once(cfg, rep)
            rows.extend(rrows)
            files.update(rfiles)
    keys = ["rep", "r", "fve", "coverage", "mse", "objective", "outer", "converged"]
    mkeys = sorted({k for row in rows for k in row if k.startswith("mise_")})
    lines = [",".join(keys + mkeys)]
    for row in rows:
        cells = [str(row["rep"]), str(row["r"])] + [_fmt(row[k]) for k in ("fve", "coverage", "mse", "objective")]
        cells += [str(row["outer"]), str(int(row["converged"]))]
        cells += [_fmt(row[k]) if k in row else "" for k in mkeys]
        lines.append(",".join(cells))
    files["study.csv"] = "\n".join(lines) + "\n"

    text = [f"train={cfg.n_train} test={cfg.n_test} m_tilde={cfg.m_tilde} sigma2={cfg.sigma2} "
            f"seed={cfg.seed} repetitions={cfg.repetitions}", "r  mean_fve  se_fve  mean_coverage"]
    for r in cfg.ranks:
        f = np.array([row["fve"] for row in rows if row["r"] == r])
        c = np.array([row["coverage"] for row in rows if row["r"] == r])
        se = f.std(ddof=1) / np.sqrt(f.size) if f.size > 1 else float("nan")
        text.append(f"{r}  {_fmt(f.mean())}  {_fmt(se)}  {_fmt(c.mean())}")
    report = StudyReport(rows, "\n".join(text) + "\n", files)
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(report.text)
        for name, body in files.items():
            with open(os.path.join(out_dir, name), "w") as fh:
                fh.write(body)
    return report


@dataclass(eq=False)
class StartComparison:
    trial: int
    init_objective: float
    random_objectives: np.ndarray
    tolerance: float

    @property
    def best_random(self) -> float:
        return float(np.min(self.random_objectives))

    @property
    def init_wins(self) -> bool:
        return self.init_objective <= self.best_random + self.tolerance


def compare_starts(trials: int = 20, starts: int = 20, n: int = 200, m_tilde: int = 21, r: int = 3,
                   seed: int = 0, random_scale: float = 1.0, config=None):
    """Binned initialization versus random starts, each run to convergence on fresh data.

    Random starts draw ``Gamma`` entries from ``N(0, random_scale^2)`` with
    ``theta_mu = 0`` and ``sigma^2 = 1``. Two objectives closer than the outer
    stopping tolerance ``rel_tol * max(1, |f|)`` count as equal.
    """
    import warnings

    from .fit import FitConfig, build_bases, fit, random_init

    cfg = config or FitConfig(r=r, t_domain=(0.0, 1.0), z_domain=(0.0, 1.0))
    out = []
    for trial in range(trials):
        data_seed = seed + trial
        samples = generate(SimTruth(n=n, m_tilde=m_tilde, seed=data_seed))
        bases, _, _ = build_bases(samples, cfg)
        # keyed by the data seed so a single trial can be rerun on its own
        rng = np.random.default_rng([data_seed, 0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            f0 = fit(samples, cfg, bases=bases).objective
            rand = []
            for _ in range(starts):
                p0 = random_init(bases, cfg.r, rng, scale=random_scale)
                try:
                    rand.append(fit(samples, cfg, init_params=p0, bases=bases).objective)
                except Exception:   # a start that cannot be evaluated simply loses
                    rand.append(np.inf)
        tol = cfg.rel_tol * max(1.0, abs(f0))
        out.append(StartComparison(trial, f0, np.array(rand), tol))
    return out
