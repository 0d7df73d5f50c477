"""Deterministic equivalents for ridge regression on block-Gaussian data.

All quantities are functions of the covariance spectrum and the effective
regularization ``tau(lambda)``, the unique positive root of

    1 - lambda / tau = tr((Sigma + tau I)^{-1} Sigma) / n.

Trace terms are evaluated as sums over the cached eigenvalues of Sigma, so
a single eigendecomposition serves a whole lambda grid.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covmodel import CovarianceModel
from .errors import (
    ConvergenceError,
    DegenerateDenominatorError,
    ParameterRangeError,
)

TAU_RESIDUAL_TOL = 1e-12
DENOMINATOR_TOL = 1e-10
IDENTITY_TOL = 1e-10
CURVE_HEADER = ("lambda", "tau", "c_sigma", "l_sigma", "bound1", "bound2", "bound3")


@dataclass(frozen=True)
class GroundTruth:
    """Core signal ``theta_star_x`` (unit norm) and label-noise variance."""

    theta_star_x: np.ndarray
    sigma2: float = 0.25

    def __post_init__(self):
        t = np.array(self.theta_star_x, dtype=float).ravel()
        t.setflags(write=False)
        object.__setattr__(self, "theta_star_x", t)
        if abs(float(np.linalg.norm(t)) - 1.0) > 1e-12:
            raise ParameterRangeError(f"||theta_star_x|| must be 1, got {np.linalg.norm(t)!r}")
        if not self.sigma2 >= 0.0:
            raise ParameterRangeError(f"sigma2 must be nonnegative, got {self.sigma2}")

    @classmethod
    def first_basis(cls, d: int, sigma2: float = 0.25) -> "GroundTruth":
        e = np.zeros(d)
        e[0] = 1.0
        return cls(e, sigma2)

    @classmethod
    def from_vector(cls, v, sigma2: float = 0.25) -> "GroundTruth":
        """Normalize an arbitrary nonzero direction."""
        v = np.asarray(v, dtype=float)
        return cls(v / np.linalg.norm(v), sigma2)

    @property
    def d(self) -> int:
        return self.theta_star_x.size

    @property
    def theta_star(self):
        """Full ``2d`` parameter ``[theta_star_x, 0]``."""
        return np.concatenate([self.theta_star_x, np.zeros(self.d)])

    def spec(self) -> dict:
        t = self.theta_star_x
        if t[0] == 1.0 and not np.any(t[1:]):
            return {"theta_star_x": "e1", "sigma2": self.sigma2}
        return {"theta_star_x": t.tolist(), "sigma2": self.sigma2}


@dataclass(frozen=True)
class DeterministicPoint:
    lam: float
    tau: float
    c_sigma: float
    l_sigma: float
    bounds: tuple

    def row(self):
        return (self.lam, self.tau, self.c_sigma, self.l_sigma, *self.bounds)


@dataclass(frozen=True)
class TradeoffThresholds:
    lambda_L: float
    lambda_C: float
    tau_L: float
    tau_C: float
    condition_holds: bool
    sxx_is_identity: bool = True
    warnings: tuple = field(default=())

    def as_dict(self) -> dict:
        out = asdict(self)
        out["warnings"] = list(self.warnings)
        return out


def _check_gt(model, gt):
    if gt.d != model.d:
        raise ParameterRangeError(f"ground truth has d={gt.d}, model has d={model.d}")


def _trace_term(w, tau):
    return float(np.sum(w / (w + tau)))


def tau_residual(model: CovarianceModel, n: int, lam: float, tau: float) -> float:
    """``1 - lam/tau - tr((Sigma + tau I)^{-1} Sigma)/n``; increasing in tau."""
    return 1.0 - lam / tau - _trace_term(model.eigenvalues, tau) / n


def solve_tau(model: CovarianceModel, n: int, lam: float) -> float:
    """Unique positive root ``tau(lam)`` of the self-consistent equation.

    Bisection on the residual over ``[lam, lam + 2d lambda_max / n]``,
    carried to floating-point resolution.
    """
    if not lam > 0:
        raise ParameterRangeError(f"lambda must be > 0, got {lam!r}")
    if n < 1:
        raise ParameterRangeError(f"n must be positive, got {n!r}")
    w = model.eigenvalues
    lo = float(lam)
    hi = lo + 2 * model.d * model.lambda_max / n

    def h(t):
        return 1.0 - lam / t - _trace_term(w, t) / n

    h_lo, h_hi = h(lo), h(hi)
    if h_lo > 0 or h_hi < 0:
        raise ConvergenceError(
            f"bracket [{lo}, {hi}] does not contain a sign change ({h_lo}, {h_hi})"
        )
    for _ in range(4000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        h_mid = h(mid)
        if h_mid == 0.0:
            return mid
        if h_mid < 0:
            lo, h_lo = mid, h_mid
        else:
            hi, h_hi = mid, h_mid
    tau, res = (lo, h_lo) if abs(h_lo) <= abs(h_hi) else (hi, h_hi)
    if abs(res) > TAU_RESIDUAL_TOL:
        raise ConvergenceError(f"tau residual {res:.3e} above tolerance at lambda={lam}")
    return tau


def lambda_from_tau(model: CovarianceModel, n: int, tau: float) -> float:
    """Invert the fixed-point map: ``lam = tau (1 - tr((Sigma+tau I)^{-1} Sigma)/n)``."""
    if not tau > 0:
        raise ParameterRangeError(f"tau must be > 0, got {tau!r}")
    lam = tau * (1.0 - _trace_term(model.eigenvalues, tau) / n)
    if not lam > 0:
        raise ParameterRangeError(
            f"tau={tau} is below the ridgeless limit for n={n} (lambda would be {lam})"
        )
    return lam


def _rotated(model, gt):
    # theta* and P_y Sigma theta* in the eigenbasis of Sigma
    u = model.eigenvectors
    theta = gt.theta_star
    st = model.sigma @ theta
    st[: model.d] = 0.0
    return u.T @ theta, u.T @ st


def c_sigma(model: CovarianceModel, gt: GroundTruth, n: int, lam: float, *, tau=None) -> float:
    """Deterministic equivalent of the learned spurious correlation,
    ``theta*^T Sigma (Sigma + tau I)^{-1} P_y Sigma theta*``."""
    _check_gt(model, gt)
    if tau is None:
        tau = solve_tau(model, n, lam)
    a, b = _rotated(model, gt)
    w = model.eigenvalues
    return float(np.sum(w * a * b / (w + tau)))


def c_sigma_schur(model: CovarianceModel, gt: GroundTruth, n: int, lam: float, *, tau=None) -> float:
    """Same quantity as :func:`c_sigma`, computed blockwise through the
    Schur complement of ``Sigma + tau I``:

        tau * tx^T (Sxx + tau I)^{-1} Sxy (S_x^{Sigma + tau I})^{-1} Syx tx

    Uses only the d x d blocks, never the eigenbasis of the full matrix.
    """
    _check_gt(model, gt)
    if tau is None:
        tau = solve_tau(model, n, lam)
    d = model.d
    wx, ux = np.linalg.eigh(model.sxx)
    sxy = model.sxy
    # (Sxx + tau)^{-1} applied through its eigenbasis
    rot = ux.T @ sxy
    schur_shift = model.syy + tau * np.eye(d) - rot.T @ (rot / (wx + tau)[:, None])
    tx = gt.theta_star_x
    left = ux @ ((ux.T @ tx) / (wx + tau))
    right = model.syx @ tx
    sol = cho_solve(cho_factor(0.5 * (schur_shift + schur_shift.T)), right)
    return float(tau * (left @ sxy @ sol))


def l_sigma(model: CovarianceModel, gt: GroundTruth, n: int, lam: float, *, tau=None) -> float:
    """Deterministic equivalent of the in-distribution test loss."""
    _check_gt(model, gt)
    if tau is None:
        tau = solve_tau(model, n, lam)
    w = model.eigenvalues
    a = model.eigenvectors.T @ gt.theta_star
    bias = tau * tau * float(np.sum(w * a * a / (w + tau) ** 2))
    denom = 1.0 - float(np.sum((w / (w + tau)) ** 2)) / n
    if denom <= DENOMINATOR_TOL:
        raise DegenerateDenominatorError(
            f"test-loss denominator {denom:.3e} vanishes at lambda={lam}"
        )
    return (gt.sigma2 + bias) / denom


def c_bounds(model: CovarianceModel, gt: GroundTruth, n: int, lam: float, *, tau=None) -> tuple:
    """Three upper bounds on ``|c_sigma|``: cross-block norm, spectral decay
    in tau, and the simplicity / Schur-complement bound."""
    _check_gt(model, gt)
    if tau is None:
        tau = solve_tau(model, n, lam)
    tx = gt.theta_star_x
    signal_var = float(tx @ model.sxx @ tx)  # Var(g) - sigma^2
    s_min = float(model.eigenvalues_schur[0])
    third = (
        tau
        * math.sqrt(signal_var)
        * (float(model.eigenvalues_yy[-1]) - s_min)
        / (s_min * math.sqrt(model.lambda_min_xx))
    )
    return (model.cross_opnorm, model.lambda_max**2 / tau, third)


def evaluate(model: CovarianceModel, gt: GroundTruth, n: int, lam: float) -> DeterministicPoint:
    tau = solve_tau(model, n, lam)
    return DeterministicPoint(
        lam=float(lam),
        tau=tau,
        c_sigma=c_sigma(model, gt, n, lam, tau=tau),
        l_sigma=l_sigma(model, gt, n, lam, tau=tau),
        bounds=c_bounds(model, gt, n, lam, tau=tau),
    )


def worker_count() -> int:
    """Pool size from ``SPURCORR_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SPURCORR_WORKERS", "1")))
    except ValueError:
        return 1


def curve(model, gt, n, grid, *, workers=None) -> list:
    """Evaluate :func:`evaluate` over a lambda grid, results in grid order."""
    grid = [float(x) for x in grid]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [evaluate(model, gt, n, lam) for lam in grid]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda lam: evaluate(model, gt, n, lam), grid))


def shape_ratio_condition(ratio: float, lam_min: float, lam_max: float, sigma2: float) -> bool:
    """Sufficient condition on ``2d/n`` for ``lambda_C >= lambda_L``."""
    kappa = lam_max / lam_min
    second = math.inf if sigma2 == 0 else (2 * lam_max / sigma2) / (kappa + 1) ** 2
    return ratio <= lam_min / 4 * min(1.0, second)


def thresholds(model: CovarianceModel, gt: GroundTruth, n: int) -> TradeoffThresholds:
    """Trade-off thresholds.

    ``lambda_C`` is where ``tau = sqrt(lambda_min(S_x))`` (``c_sigma`` is
    nondecreasing below it when ``Sigma_xx = I``); ``lambda_L`` is where
    ``tau = lambda_min(Sigma)``.
    """
    _check_gt(model, gt)
    if not 2 * model.d < n:
        raise ParameterRangeError(f"thresholds require 2d < n (2d={2 * model.d}, n={n})")
    tau_c = math.sqrt(float(model.eigenvalues_schur[0]))
    tau_l = model.lambda_min
    ident = float(np.linalg.norm(model.sxx - np.eye(model.d), 2)) <= IDENTITY_TOL
    notes = () if ident else ("Sigma_xx != I: monotonicity of c_sigma below lambda_C is not guaranteed",)
    return TradeoffThresholds(
        lambda_L=lambda_from_tau(model, n, tau_l),
        lambda_C=lambda_from_tau(model, n, tau_c),
        tau_L=tau_l,
        tau_C=tau_c,
        condition_holds=shape_ratio_condition(
            2 * model.d / n, model.lambda_min, model.lambda_max, gt.sigma2
        ),
        sxx_is_identity=ident,
        warnings=notes,
    )


def ood_lower_bound(c: float) -> float:
    """Lower bound ``2 - 2 sqrt(1 - c^2)`` on the normalized OOD loss."""
    if not abs(c) <= 1.0:
        raise ParameterRangeError(f"|c| must be <= 1, got {c!r}")
    return 2.0 - 2.0 * math.sqrt(1.0 - c * c)


def fmt(x) -> str:
    return f"{float(x):.17g}"


def write_curve_csv(points, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for p in points:
            writer.writerow([fmt(v) for v in p.row()])
    return path


def curve_metadata(model, gt, n, grid_spec) -> dict:
    return {
        "model_hash": model.fingerprint,
        "n": int(n),
        "d": model.d,
        "sigma2": gt.sigma2,
        "theta_star": gt.spec()["theta_star_x"],
        "grid": grid_spec,
    }


def write_metadata(meta: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path
