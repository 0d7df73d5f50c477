"""Random-features regression and its linear-regression equivalent.

The model is ``f(theta, z) = phi(V z)^T theta`` with a fixed Gaussian first
layer ``V`` (entries ``N(0, 1/(2d))``) and ridge-trained readout ``theta``.
Over-parameterized RF behaves like ridge regression on ``z`` with the
effective regularization

    lambda_tilde = 2 mu_tilde^2 d / (mu_1^2 n) + 2 d lambda / (mu_1^2 p),

where ``mu_k`` are Hermite coefficients of ``phi`` in the orthonormal
probabilists' basis ``He_k / sqrt(k!)`` and ``mu_tilde^2 = sum_{k>=2} mu_k^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite_e
from scipy.linalg import cho_factor, cho_solve
from scipy.special import roots_hermitenorm

from .covmodel import CovarianceModel, psd_sqrt
from .detequiv import GroundTruth
from .empirical import Dataset, ridge_fit, spurious_cov_exact
from .errors import ParameterRangeError, QuadratureError, SingularBlockError

DEFAULT_NODES = 200
MIN_NODES = 32
QUAD_INSTABILITY_TOL = 1e-6
ODD_CHECK_TOL = 1e-12
KERNEL_COND_TOL = 1e-12
ROUNDOFF_TOL = 1e-12
DEFAULT_BUDGET = 200_000_000


@dataclass(frozen=True)
class Activation:
    """Odd pointwise nonlinearity.

    Build with :meth:`tanh`, :meth:`hermite_mix`, :meth:`identity` or
    :meth:`custom`; ``fn`` is applied elementwise to arrays.
    """

    kind: str
    fn: Callable = field(compare=False, repr=False)
    params: tuple = ()

    def __call__(self, u):
        return self.fn(u)

    @property
    def name(self) -> str:
        if self.kind == "hermite_mix":
            return "hermite_mix(" + ",".join(f"{c:g}" for c in self.params) + ")"
        return self.kind

    @classmethod
    def tanh(cls) -> "Activation":
        return cls("tanh", np.tanh)

    @classmethod
    def identity(cls, scale: float = 1.0) -> "Activation":
        return cls("identity", lambda u: scale * np.asarray(u, dtype=float), (float(scale),))

    @classmethod
    def hermite_mix(cls, *coeffs: float) -> "Activation":
        """``sum_j coeffs[j] * h_{2j+1}`` in the orthonormal Hermite basis.

        ``hermite_mix(1, 0.1)`` is ``h_1 + 0.1 h_3``.
        """
        series = np.zeros(2 * len(coeffs))
        for j, c in enumerate(coeffs):
            k = 2 * j + 1
            series[k] = c / math.sqrt(math.factorial(k))
        return cls("hermite_mix", lambda u: hermite_e.hermeval(u, series), tuple(float(c) for c in coeffs))

    @classmethod
    def custom(cls, fn: Callable, name: str = "custom", *, seed: int = 0) -> "Activation":
        """Wrap a user map; oddness is spot-checked, not proven."""
        act = cls(name, fn)
        act.check_odd(seed=seed)
        return act

    @classmethod
    def from_name(cls, name: str) -> "Activation":
        name = name.strip()
        if name == "tanh":
            return cls.tanh()
        if name == "identity":
            return cls.identity()
        if name in ("phi1", "hermite_mix"):
            return cls.hermite_mix(1.0, 0.1)
        if name.startswith("hermite_mix(") and name.endswith(")"):
            return cls.hermite_mix(*(float(c) for c in name[12:-1].split(",")))
        raise ParameterRangeError(f"unknown activation {name!r}")

    def check_odd(self, points: int = 1000, seed: int = 0) -> None:
        u = np.random.default_rng(seed).standard_normal(points) * 3.0
        fu = np.asarray(self.fn(u), dtype=float)
        defect = np.max(np.abs(fu + np.asarray(self.fn(-u), dtype=float)))
        if defect > ODD_CHECK_TOL * max(1.0, float(np.max(np.abs(fu)))):
            raise ParameterRangeError(f"activation {self.kind!r} is not odd (defect {defect:.3e})")


@dataclass(frozen=True)
class HermiteStats:
    mu1: float
    mu_tilde_sq: float
    l2_norm_sq: float

    @property
    def ratio(self) -> float:
        """``mu_tilde^2 / mu_1^2``."""
        return self.mu_tilde_sq / self.mu1**2


def _gauss_hermite(nodes):
    x, w = roots_hermitenorm(nodes)
    return x, w / w.sum()


def _moments(activation, nodes):
    x, w = _gauss_hermite(nodes)
    f = np.asarray(activation(x), dtype=float)
    mu1 = float(np.sum(w * x * f))
    l2 = float(np.sum(w * f * f))
    return mu1, l2


def hermite_stats(activation: Activation, nodes: int = DEFAULT_NODES) -> HermiteStats:
    """First Hermite coefficient and residual energy of ``activation``.

    Gauss-Hermite quadrature against the standard normal weight, with a
    self-check at twice the node count.
    """
    if nodes < MIN_NODES:
        raise ParameterRangeError(f"nodes must be >= {MIN_NODES}, got {nodes}")
    mu1, l2 = _moments(activation, nodes)
    mu1_ref, l2_ref = _moments(activation, 2 * nodes)
    drift = max(abs(mu1 - mu1_ref), abs(l2 - l2_ref))
    if drift > QUAD_INSTABILITY_TOL:
        raise QuadratureError(f"Hermite moments move by {drift:.3e} when doubling nodes")
    resid = l2 - mu1 * mu1
    # a linear activation leaves only quadrature roundoff here
    if resid <= ROUNDOFF_TOL * max(l2, 1.0):
        resid = 0.0
    return HermiteStats(mu1=mu1, mu_tilde_sq=resid, l2_norm_sq=l2)


def hermite_coefficients(activation: Activation, kmax: int, nodes: int = DEFAULT_NODES):
    """``mu_0 .. mu_kmax`` in the orthonormal probabilists' basis."""
    x, w = _gauss_hermite(nodes)
    f = np.asarray(activation(x), dtype=float)
    out = np.empty(kmax + 1)
    for k in range(kmax + 1):
        basis = np.zeros(k + 1)
        basis[k] = 1.0 / math.sqrt(math.factorial(k))
        out[k] = np.sum(w * f * hermite_e.hermeval(x, basis))
    return out


def effective_lambda(stats: HermiteStats, d: int, n: int, p: int, lam: float) -> float:
    """Ridge strength at which linear regression matches the RF predictor."""
    if stats.mu1 == 0:
        raise ParameterRangeError("first Hermite coefficient is zero")
    if lam < 0:
        raise ParameterRangeError(f"lambda must be >= 0, got {lam!r}")
    m2 = stats.mu1**2
    return 2 * stats.mu_tilde_sq * d / (m2 * n) + 2 * d * lam / (m2 * p)


@dataclass(frozen=True, eq=False)
class RFConfig:
    p: int
    seed: int
    v: np.ndarray

    @classmethod
    def draw(cls, p: int, dim: int, seed: int) -> "RFConfig":
        """Sample ``V`` (``p x dim``) with i.i.d. ``N(0, 1/dim)`` entries."""
        if p < 1:
            raise ParameterRangeError(f"p must be positive, got {p}")
        v = np.random.default_rng(seed).standard_normal((p, dim)) / math.sqrt(dim)
        v.setflags(write=False)
        return cls(p=p, seed=int(seed), v=v)

    @property
    def dim(self) -> int:
        return self.v.shape[1]


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(x) for x in parts]).generate_state(1, np.uint64)[0])


def _feature_blocks(p, rows, budget):
    step = max(1, min(p, budget // max(rows, 1)))
    return range(0, p, step), step


def feature_gram(z, config: RFConfig, activation: Activation, *, budget=DEFAULT_BUDGET):
    """``Phi Phi^T`` accumulated over blocks of features.

    ``Phi`` itself is never materialized beyond ``budget`` entries.
    """
    z = np.asarray(z, dtype=float)
    starts, step = _feature_blocks(config.p, z.shape[0], budget)
    k = np.zeros((z.shape[0], z.shape[0]))
    for s in starts:
        phi = activation(z @ config.v[s : s + step].T)
        k += phi @ phi.T
    return k


def rf_fit(dataset: Dataset, config: RFConfig, activation: Activation, lam: float, *, budget=DEFAULT_BUDGET):
    """``Phi^T (Phi Phi^T + n lam I)^{-1} G``; min-norm interpolator at lam = 0."""
    if dataset.dim != config.dim:
        raise ParameterRangeError(f"data dim {dataset.dim} != feature input dim {config.dim}")
    if lam < 0:
        raise ParameterRangeError(f"lambda must be >= 0, got {lam!r}")
    n = dataset.n
    k = feature_gram(dataset.z, config, activation, budget=budget)
    if lam == 0:
        w = np.linalg.eigvalsh(k)
        if w[0] <= KERNEL_COND_TOL * w[-1]:
            raise SingularBlockError(f"Phi Phi^T is ill-conditioned (ratio {w[0] / w[-1]:.3e})")
    alpha = cho_solve(cho_factor(k + n * lam * np.eye(n)), dataset.g)
    starts, step = _feature_blocks(config.p, n, budget)
    theta = np.empty(config.p)
    for s in starts:
        theta[s : s + step] = activation(dataset.z @ config.v[s : s + step].T).T @ alpha
    return theta


def rf_predict(theta_rf, config: RFConfig, activation: Activation, z):
    """``phi(V z)^T theta``. ``z`` may be one point or a stack of rows."""
    theta_rf = np.asarray(theta_rf, dtype=float)
    z = np.asarray(z, dtype=float)
    if theta_rf.shape != (config.p,):
        raise ParameterRangeError(f"theta has shape {theta_rf.shape}, expected ({config.p},)")
    if z.shape[-1] != config.dim:
        raise ParameterRangeError(f"input dim {z.shape[-1]} != {config.dim}")
    return activation(z @ config.v.T) @ theta_rf


def equivalence_gap(
    dataset: Dataset,
    config: RFConfig,
    activation: Activation,
    lam: float,
    test_points,
    *,
    stats: HermiteStats | None = None,
    theta_rf=None,
):
    """Max and mean ``|f_RF(z) - f_LR(z)|`` over test points.

    The linear model is ridge-fit on the same data at the effective
    regularization; ``test_points`` must be independent of ``dataset``.
    """
    if stats is None:
        stats = hermite_stats(activation)
    test_points = np.atleast_2d(np.asarray(test_points, dtype=float))
    if theta_rf is None:
        theta_rf = rf_fit(dataset, config, activation, lam)
    lam_tilde = effective_lambda(stats, dataset.dim // 2, dataset.n, config.p, lam)
    theta_lr = ridge_fit(dataset, lam_tilde).theta_hat
    gap = np.abs(rf_predict(theta_rf, config, activation, test_points) - test_points @ theta_lr)
    return float(gap.max()), float(gap.mean())


def linearized_coefficient(theta_rf, config: RFConfig, stats: HermiteStats):
    """Weights ``mu_1 V^T theta`` of the linear part of the RF predictor."""
    return stats.mu1 * (config.v.T @ np.asarray(theta_rf, dtype=float))


def rf_spurious_cov(
    theta_rf,
    config: RFConfig,
    activation: Activation,
    model: CovarianceModel,
    gt: GroundTruth,
    *,
    stats: HermiteStats | None = None,
    m: int = 100_000,
    seed: int = 0,
    chunk: int = 1000,
):
    """Spurious covariance of the RF predictor, with its Monte Carlo error.

    The predictor splits as ``mu_1 z^T V^T theta + r(z)``. The linear part
    has the closed form ``spurious_cov_exact`` and the remainder ``r`` is
    estimated by sampling ``[x_tilde, y]`` against the noiseless target
    ``x^T theta*_x``; only the remainder contributes sampling error.

    Returns
    -------
    (value, stderr) : tuple of float
    """
    if stats is None:
        stats = hermite_stats(activation)
    if m < 2:
        raise ParameterRangeError(f"m must be >= 2, got {m}")
    theta_rf = np.asarray(theta_rf, dtype=float)
    d = model.d
    exact = spurious_cov_exact(linearized_coefficient(theta_rf, config, stats), model, gt)

    rng = np.random.default_rng(seed)
    root_xx = psd_sqrt(model.sxx)
    resid = np.empty(m)
    target = np.empty(m)
    for s in range(0, m, chunk):
        k = min(chunk, m - s)
        zz = rng.standard_normal((k, 2 * d)) @ model.sqrt
        xt = rng.standard_normal((k, d)) @ root_xx
        pre = np.concatenate([xt, zz[:, d:]], axis=1) @ config.v.T
        resid[s : s + k] = (activation(pre) - stats.mu1 * pre) @ theta_rf
        target[s : s + k] = zz[:, :d] @ gt.theta_star_x
    rc = resid - resid.mean()
    tc = target - target.mean()
    prod = rc * tc
    mc = float(prod.sum() / (m - 1))
    return exact + mc, float(np.std(prod, ddof=1) / math.sqrt(m))
