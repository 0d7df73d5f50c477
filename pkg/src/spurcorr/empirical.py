"""Seeded simulation of ridge regression on block-Gaussian data.

Datasets are drawn with ``numpy.random.default_rng(seed)`` (PCG64). Rows of
``Z`` are ``Sigma^{1/2} xi`` with the symmetric square root cached on the
model, so a fixed seed reproduces the same dataset bit for bit within this
implementation.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covmodel import CovarianceModel, psd_sqrt
from .detequiv import GroundTruth, fmt, worker_count
from .errors import ParameterRangeError, SingularBlockError

RIDGELESS_COND_TOL = 1e-12
MC_CHUNK = 1 << 15
TRIAL_HEADER = ("lambda", "seed", "c_emp", "l_emp")
AGGREGATE_HEADER = ("lambda", "c_mean", "c_std", "l_mean", "l_std", "n_seeds")


@dataclass(frozen=True, eq=False)
class Dataset:
    z: np.ndarray
    g: np.ndarray
    noise: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def dim(self) -> int:
        return self.z.shape[1]

    @cached_property
    def gram(self):
        return self.z.T @ self.z

    @cached_property
    def ztg(self):
        return self.z.T @ self.g


@dataclass(frozen=True)
class RidgeEstimate:
    theta_hat: np.ndarray
    lam: float


@dataclass(frozen=True)
class TrialSummary:
    c_emp: float
    l_emp: float
    seed: int
    lam: float


def _theta(estimate):
    return estimate.theta_hat if isinstance(estimate, RidgeEstimate) else np.asarray(estimate, dtype=float)


def sample_dataset(model: CovarianceModel, gt: GroundTruth, n: int, seed: int) -> Dataset:
    """Draw ``n`` rows ``z ~ N(0, Sigma)`` and labels ``g = z theta* + eps``."""
    if gt.d != model.d:
        raise ParameterRangeError(f"ground truth has d={gt.d}, model has d={model.d}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2 * model.d)) @ model.sqrt
    if gt.sigma2 > 0:
        noise = math.sqrt(gt.sigma2) * rng.standard_normal(n)
    else:
        noise = np.zeros(n)
    return Dataset(z=z, g=z @ gt.theta_star + noise, noise=noise, seed=seed)


def redraw_noise(dataset: Dataset, gt: GroundTruth, seed: int) -> Dataset:
    """Same design matrix, fresh label noise."""
    rng = np.random.default_rng(seed)
    noise = math.sqrt(gt.sigma2) * rng.standard_normal(dataset.n)
    return Dataset(z=dataset.z, g=dataset.z @ gt.theta_star + noise, noise=noise, seed=seed)


def ridge_fit(dataset: Dataset, lam: float) -> RidgeEstimate:
    """``(Z^T Z + n lam I)^{-1} Z^T G``.

    The smaller Gram matrix is factored: primal when ``n >= 2d``, dual
    ``Z^T (Z Z^T + n lam I)^{-1} G`` otherwise. ``lam = 0`` is ordinary
    least squares and requires a well-conditioned ``Z^T Z``.
    """
    if lam < 0:
        raise ParameterRangeError(f"lambda must be >= 0, got {lam!r}")
    z, n, p = dataset.z, dataset.n, dataset.dim
    if lam == 0:
        if n < p:
            raise SingularBlockError(f"Z^T Z is singular for n={n} < 2d={p} at lambda=0")
        w = np.linalg.eigvalsh(dataset.gram)
        if w[0] < RIDGELESS_COND_TOL * w[-1]:
            raise SingularBlockError(f"Z^T Z is ill-conditioned (ratio {w[0] / w[-1]:.3e})")
        # least squares avoids squaring the condition number of Z
        return RidgeEstimate(theta_hat=np.linalg.lstsq(z, dataset.g, rcond=None)[0], lam=0.0)
    if n >= p:
        a = dataset.gram + n * lam * np.eye(p)
        theta = cho_solve(cho_factor(a), dataset.ztg)
    else:
        k = z @ z.T + n * lam * np.eye(n)
        theta = z.T @ cho_solve(cho_factor(k), dataset.g)
    return RidgeEstimate(theta_hat=theta, lam=float(lam))


def gradient_flow_estimate(dataset: Dataset, lam: float, t: float):
    """Closed-form gradient flow from zero on the ridge objective.

    ``theta(t) = (I - exp(-2 (Z^T Z / n + lam I) t)) theta_hat``, evaluated in
    the eigenbasis of ``Z^T Z / n + lam I``.
    """
    if not lam > 0:
        raise ParameterRangeError(f"gradient flow needs lambda > 0, got {lam!r}")
    if t < 0:
        raise ParameterRangeError(f"t must be >= 0, got {t!r}")
    a, w = np.linalg.eigh(dataset.gram / dataset.n + lam * np.eye(dataset.dim))
    coef = w.T @ dataset.ztg / dataset.n
    return w @ (-np.expm1(-2.0 * a * t) / a * coef)


def spurious_cov_exact(estimate, model: CovarianceModel, gt: GroundTruth) -> float:
    """Population spurious covariance ``theta^T P_y Sigma theta*``."""
    theta = _theta(estimate)
    return float(theta[model.d :] @ (model.syx @ gt.theta_star_x))


def test_loss_exact(estimate, model: CovarianceModel, gt: GroundTruth) -> float:
    """In-distribution squared loss ``sigma^2 + (theta - theta*)^T Sigma (theta - theta*)``."""
    e = _theta(estimate) - gt.theta_star
    return float(gt.sigma2 + e @ model.sigma @ e)


test_loss_exact.__test__ = False  # not a pytest test despite the name


def _ood_draws(model, gt, m, seed):
    """Yield chunks of ``([x_tilde, y], x theta*_x + eps, x_tilde)``."""
    rng = np.random.default_rng(seed)
    d = model.d
    root_xx = psd_sqrt(model.sxx)
    done = 0
    while done < m:
        k = min(MC_CHUNK, m - done)
        zz = rng.standard_normal((k, 2 * d)) @ model.sqrt
        xt = rng.standard_normal((k, d)) @ root_xx
        eps = math.sqrt(gt.sigma2) * rng.standard_normal(k) if gt.sigma2 > 0 else 0.0
        yield np.concatenate([xt, zz[:, d:]], axis=1), zz[:, :d] @ gt.theta_star_x + eps, xt
        done += k


def _cov_with_stderr(f, g):
    fc = f - f.mean()
    gc = g - g.mean()
    prod = fc * gc
    m = f.size
    cov = float(prod.sum() / (m - 1))
    se = float(np.std(prod, ddof=1) / math.sqrt(m))
    return cov, se


def monte_carlo_spurious_cov(
    estimate, model: CovarianceModel, gt: GroundTruth, m: int, seed: int, *, return_stderr=False
):
    """Sample covariance of ``f([x_tilde, y])`` and ``g`` over ``m`` draws.

    ``x_tilde ~ N(0, Sigma_xx)`` is independent of ``(x, y) ~ N(0, Sigma)``.
    """
    if m < 2:
        raise ParameterRangeError(f"m must be >= 2, got {m}")
    theta = _theta(estimate)
    fs, gs = [], []
    for zt, g, _ in _ood_draws(model, gt, m, seed):
        fs.append(zt @ theta)
        gs.append(g)
    cov, se = _cov_with_stderr(np.concatenate(fs), np.concatenate(gs))
    return (cov, se) if return_stderr else cov


def predictor_variance_ood(estimate, model: CovarianceModel) -> float:
    """``Var f([x_tilde, y])`` with ``x_tilde`` independent of ``y``."""
    theta = _theta(estimate)
    d = model.d
    tx, ty = theta[:d], theta[d:]
    return float(tx @ model.sxx @ tx + ty @ model.syy @ ty)


def normalized_spurious_cov(estimate, model: CovarianceModel, gt: GroundTruth) -> float:
    """Spurious covariance after scaling predictor and target to unit variance."""
    sf = math.sqrt(predictor_variance_ood(estimate, model))
    st = math.sqrt(float(gt.theta_star_x @ model.sxx @ gt.theta_star_x))
    return spurious_cov_exact(estimate, model, gt) / (sf * st)


def ood_loss_empirical(
    estimate,
    model: CovarianceModel,
    gt: GroundTruth,
    m: int,
    seed: int,
    *,
    normalize=False,
    return_stderr=False,
):
    """Monte Carlo ``E[(f([x_tilde, y]) - x_tilde^T theta*_x)^2]``.

    With ``normalize=True`` predictor and target are divided by their
    population standard deviations first, which is the setting where the
    loss is bounded below by ``2 - 2 sqrt(1 - C^2)``.
    """
    if m < 2:
        raise ParameterRangeError(f"m must be >= 2, got {m}")
    theta = _theta(estimate)
    sf = st = 1.0
    if normalize:
        sf = math.sqrt(predictor_variance_ood(theta, model))
        st = math.sqrt(float(gt.theta_star_x @ model.sxx @ gt.theta_star_x))
        if sf == 0:
            raise ParameterRangeError("cannot normalize a constant predictor")
    sq = []
    for zt, _, xt in _ood_draws(model, gt, m, seed):
        sq.append((zt @ theta / sf - xt @ gt.theta_star_x / st) ** 2)
    sq = np.concatenate(sq)
    val = float(sq.mean())
    return (val, float(sq.std(ddof=1) / math.sqrt(m))) if return_stderr else val


def _seed_trials(model, gt, n, grid, seed):
    ds = sample_dataset(model, gt, n, seed)
    out = []
    for lam in grid:
        est = ridge_fit(ds, lam)
        out.append(
            TrialSummary(
                c_emp=spurious_cov_exact(est, model, gt),
                l_emp=test_loss_exact(est, model, gt),
                seed=int(seed),
                lam=float(lam),
            )
        )
    return out


def trial_sweep(model, gt, n, lambda_grid, seeds, *, workers=None) -> list:
    """Run sample -> fit -> exact C and L for every ``(lambda, seed)`` cell.

    One dataset is drawn per seed and refit for each lambda. Output is
    ordered by lambda (grid order) then ascending seed.
    """
    grid = [float(x) for x in lambda_grid]
    seeds = sorted(int(s) for s in seeds)
    if not grid or not seeds:
        raise ParameterRangeError("trial_sweep needs a nonempty grid and seed list")
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        per_seed = [_seed_trials(model, gt, n, grid, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(lambda s: _seed_trials(model, gt, n, grid, s), seeds))
    return [per_seed[j][i] for i in range(len(grid)) for j in range(len(seeds))]


def seed_list(base: int, count: int) -> list:
    """Per-trial seeds ``base + index``."""
    return [int(base) + i for i in range(int(count))]


def _mean_std(xs):
    total = 0.0
    for x in xs:
        total += x
    mean = total / len(xs)
    if len(xs) < 2:
        return mean, 0.0
    ss = 0.0
    for x in xs:
        ss += (x - mean) ** 2
    return mean, math.sqrt(ss / (len(xs) - 1))


def aggregate(trials, *, subtract_noise=0.0) -> list:
    """Per-lambda mean and sample standard deviation, ascending seed order.

    ``subtract_noise`` is removed from every test-loss value before
    aggregation (figure convention where the optimal predictor scores 0).
    """
    by_lam = {}
    for t in trials:
        by_lam.setdefault(t.lam, []).append(t)
    rows = []
    for lam, ts in by_lam.items():
        ts = sorted(ts, key=lambda t: t.seed)
        c_mean, c_std = _mean_std([t.c_emp for t in ts])
        l_mean, l_std = _mean_std([t.l_emp - subtract_noise for t in ts])
        rows.append(
            {"lambda": lam, "c_mean": c_mean, "c_std": c_std, "l_mean": l_mean, "l_std": l_std, "n_seeds": len(ts)}
        )
    return rows


def write_trials_csv(trials, path, *, subtract_noise=0.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for t in trials:
            w.writerow([fmt(t.lam), t.seed, fmt(t.c_emp), fmt(t.l_emp - subtract_noise)])
    return path


def write_aggregate_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_HEADER)
        for r in rows:
            w.writerow(
                [fmt(r["lambda"]), fmt(r["c_mean"]), fmt(r["c_std"]), fmt(r["l_mean"]), fmt(r["l_std"]), r["n_seeds"]]
            )
    return path
