"""Block covariance models for the core/spurious feature split.

A model holds the full ``2d x 2d`` covariance of ``z = [x, y]`` where ``x``
is the core feature and ``y`` the spurious one. Everything spectral is
computed once from a dense symmetric eigendecomposition and cached on the
instance; the instance itself is immutable.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import NotPositiveDefiniteError, ParameterRangeError, SingularBlockError

SYMMETRY_RTOL = 1e-12
TRACE_RTOL = 1e-9
SQRT_NEG_RTOL = 1e-12
SINGULAR_TOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def psd_sqrt(a):
    """Symmetric square root of a PSD matrix via its eigendecomposition.

    Eigenvalues below ``-1e-12 * lambda_max`` raise rather than being
    clamped; tiny negative round-off above that threshold is set to zero.
    """
    a = np.asarray(a, dtype=float)
    w, u = np.linalg.eigh(0.5 * (a + a.T))
    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    if w[0] < -SQRT_NEG_RTOL * scale:
        raise NotPositiveDefiniteError(
            f"matrix square root of a non-PSD matrix (min eigenvalue {w[0]:.3e})"
        )
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


@dataclass(frozen=True)
class SyntheticFamilyParams:
    """Parameters of the diagonal synthetic family.

    ``Sigma_xx = I``, ``Sigma_yy = diag(ev_max_yy, r, ..., r)`` with
    ``r = (d - ev_max_yy) / (d - 1)`` and
    ``Sigma_xy = Sigma_yx = (Sigma_yy - beta I)^{1/2}``, so the Schur
    complement of the x-block is ``beta * I``.
    """

    d: int
    ev_max_yy: float = 2.0
    beta: float = 0.5

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ParameterRangeError(f"d must be an integer >= 2, got {self.d!r}")
        if not (1.0 <= self.ev_max_yy < self.d):
            raise ParameterRangeError(
                f"ev_max_yy must satisfy 1 <= ev_max_yy < d, got {self.ev_max_yy}"
            )
        rest = self.rest_value
        if not (0.0 < self.beta <= rest):
            raise ParameterRangeError(
                f"beta must satisfy 0 < beta <= (d - ev_max_yy)/(d - 1) = {rest}, "
                f"got {self.beta}"
            )

    @property
    def rest_value(self) -> float:
        return (self.d - self.ev_max_yy) / (self.d - 1)


class CovarianceModel:
    """Immutable ``2d x 2d`` covariance with lazily cached spectra.

    Parameters
    ----------
    sigma : array_like, shape (2d, 2d)
        Full covariance of ``z = [x, y]``.
    require_unit_trace : bool
        When true (default) ``tr(sigma) = 2d`` is enforced. When false a
        model with a different trace is accepted and ``trace_warning`` is
        set.
    synthetic : SyntheticFamilyParams, optional
        Recorded when the model was produced by :func:`build_synthetic`;
        only used for serialization.
    """

    def __init__(self, sigma, *, require_unit_trace=True, synthetic=None):
        s = np.asarray(sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
            raise ParameterRangeError(f"sigma must be square with even size, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ParameterRangeError("sigma contains non-finite entries")
        scale = max(float(np.max(np.abs(s))), np.finfo(float).tiny)
        asym = float(np.max(np.abs(s - s.T)))
        if asym > SYMMETRY_RTOL * scale:
            raise ParameterRangeError(f"sigma is not symmetric (defect {asym:.3e})")
        s = 0.5 * (s + s.T)
        self._sigma = _readonly(s)
        self.d = s.shape[0] // 2
        self.synthetic = synthetic

        w = self.eigenvalues
        if not w[0] > SINGULAR_TOL * max(1.0, w[-1]):
            raise NotPositiveDefiniteError(
                f"sigma is not positive definite (lambda_min = {w[0]:.3e})"
            )
        self.trace_warning = False
        tr = float(np.trace(s))
        if abs(tr - 2 * self.d) > TRACE_RTOL * 2 * self.d:
            if require_unit_trace:
                raise ParameterRangeError(
                    f"tr(sigma) = {tr!r} but 2d = {2 * self.d} is required"
                )
            self.trace_warning = True
            warnings.warn(
                f"covariance trace {tr:.6g} differs from 2d = {2 * self.d}",
                RuntimeWarning,
                stacklevel=2,
            )

    def __repr__(self):
        return f"CovarianceModel(d={self.d}, lambda_min={self.lambda_min:.4g}, lambda_max={self.lambda_max:.4g})"

    # blocks -------------------------------------------------------------
    @property
    def sigma(self):
        return self._sigma

    @property
    def sxx(self):
        return self._sigma[: self.d, : self.d]

    @property
    def sxy(self):
        return self._sigma[: self.d, self.d :]

    @property
    def syx(self):
        return self._sigma[self.d :, : self.d]

    @property
    def syy(self):
        return self._sigma[self.d :, self.d :]

    # spectral cache -------------------------------------------------------
    @cached_property
    def _eig(self):
        w, u = np.linalg.eigh(self._sigma)
        return _readonly(w), _readonly(u)

    @property
    def eigenvalues(self):
        """Ascending eigenvalues of sigma."""
        return self._eig[0]

    @property
    def eigenvectors(self):
        return self._eig[1]

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @cached_property
    def sqrt(self):
        """Symmetric square root ``sigma^{1/2}`` from the cached eigenbasis."""
        w, u = self._eig
        return _readonly((u * np.sqrt(w)) @ u.T)

    @cached_property
    def _eig_xx(self):
        w, u = np.linalg.eigh(self.sxx)
        return _readonly(w), _readonly(u)

    @cached_property
    def eigenvalues_yy(self):
        return _readonly(np.linalg.eigvalsh(self.syy))

    @cached_property
    def schur(self):
        """``S_x = Syy - Syx Sxx^{-1} Sxy``, see :func:`schur_complement`."""
        return _readonly(_schur(self.sxx, self.sxy, self.syy, self._eig_xx))

    @cached_property
    def eigenvalues_schur(self):
        return _readonly(np.linalg.eigvalsh(self.schur))

    @property
    def lambda_min_xx(self) -> float:
        return float(self._eig_xx[0][0])

    @cached_property
    def cross_opnorm(self) -> float:
        """Operator norm of ``Sigma_yx``."""
        return float(np.linalg.norm(self.syx, 2))

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 of the covariance bytes, used in output metadata."""
        return hashlib.sha256(np.ascontiguousarray(self._sigma).tobytes()).hexdigest()

    # serialization --------------------------------------------------------
    def to_dict(self, *, shorthand=True) -> dict:
        if shorthand and self.synthetic is not None:
            return asdict(self.synthetic)
        return {"d": self.d, "sigma": self._sigma.ravel().tolist()}

    def to_json(self, path=None, *, shorthand=True):
        text = json.dumps(self.to_dict(shorthand=shorthand))
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, doc: dict, **kwargs) -> "CovarianceModel":
        if "sigma" in doc:
            d = int(doc["d"])
            flat = np.asarray(doc["sigma"], dtype=float)
            if flat.size != 4 * d * d:
                raise ParameterRangeError(
                    f"sigma has {flat.size} entries, expected 4*d^2 = {4 * d * d}"
                )
            return cls(flat.reshape(2 * d, 2 * d), **kwargs)
        if {"ev_max_yy", "beta"} <= doc.keys():
            return build_synthetic(
                SyntheticFamilyParams(int(doc["d"]), float(doc["ev_max_yy"]), float(doc["beta"]))
            )
        raise ParameterRangeError(
            "model document needs either 'sigma' or both 'ev_max_yy' and 'beta'"
        )

    @classmethod
    def from_json(cls, source, **kwargs) -> "CovarianceModel":
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source), **kwargs)


def _schur(sxx, sxy, syy, eig_xx):
    w, u = eig_xx
    if w[0] < SINGULAR_TOL:
        raise SingularBlockError(f"Sigma_xx is singular (lambda_min = {w[0]:.3e})")
    t = u.T @ sxy
    s = syy - t.T @ (t / w[:, None])
    return 0.5 * (s + s.T)


def schur_complement(model: CovarianceModel):
    """Schur complement of sigma with respect to its top-left block.

    Equals the conditional covariance of ``y`` given ``x`` for Gaussian
    data. ``Sigma_xx^{-1}`` is applied through its eigenbasis.
    """
    return model.schur


def build_synthetic(params: SyntheticFamilyParams) -> CovarianceModel:
    """Assemble the diagonal synthetic model described by ``params``."""
    d = params.d
    syy = np.full(d, params.rest_value)
    syy[0] = params.ev_max_yy
    shifted = np.diag(syy - params.beta)
    if np.min(np.diag(shifted)) < -SQRT_NEG_RTOL * params.ev_max_yy:
        raise ParameterRangeError("Sigma_yy - beta I has a negative diagonal entry")
    cross = psd_sqrt(shifted)
    sigma = np.zeros((2 * d, 2 * d))
    sigma[:d, :d] = np.eye(d)
    sigma[d:, d:] = np.diag(syy)
    sigma[:d, d:] = cross
    sigma[d:, :d] = cross.T
    return CovarianceModel(sigma, synthetic=params)


@dataclass(frozen=True)
class ModelDiagnostics:
    symmetry_defect: float
    lambda_min: float
    lambda_max: float
    trace: float
    trace_defect: float
    xx_psd: bool
    yy_psd: bool
    cross_transpose_defect: float

    @property
    def symmetric(self) -> bool:
        return self.symmetry_defect <= SYMMETRY_RTOL

    @property
    def positive_definite(self) -> bool:
        return self.lambda_min > 0.0

    @property
    def trace_ok(self) -> bool:
        return self.trace_defect <= TRACE_RTOL

    @property
    def passed(self) -> bool:
        return (
            self.symmetric
            and self.positive_definite
            and self.trace_ok
            and self.xx_psd
            and self.yy_psd
            and self.cross_transpose_defect <= SYMMETRY_RTOL
        )

    def as_dict(self) -> dict:
        out = asdict(self)
        out.update(
            symmetric=self.symmetric,
            positive_definite=self.positive_definite,
            trace_ok=self.trace_ok,
            passed=self.passed,
        )
        return out


def validate(model) -> ModelDiagnostics:
    """Report structural checks on a model or a raw ``2d x 2d`` array.

    Never raises on a bad matrix; defects are reported as relative
    quantities (symmetry and cross-block defects relative to ``max|sigma|``,
    trace defect relative to ``2d``).
    """
    s = np.asarray(model.sigma if isinstance(model, CovarianceModel) else model, dtype=float)
    d = s.shape[0] // 2
    scale = max(float(np.max(np.abs(s))), np.finfo(float).tiny)
    sym = 0.5 * (s + s.T)
    w = np.linalg.eigvalsh(sym)
    tol = SYMMETRY_RTOL * max(1.0, float(np.max(np.abs(w))))
    tr = float(np.trace(s))
    return ModelDiagnostics(
        symmetry_defect=float(np.max(np.abs(s - s.T))) / scale,
        lambda_min=float(w[0]),
        lambda_max=float(w[-1]),
        trace=tr,
        trace_defect=abs(tr - 2 * d) / (2 * d),
        xx_psd=bool(np.linalg.eigvalsh(sym[:d, :d])[0] >= -tol),
        yy_psd=bool(np.linalg.eigvalsh(sym[d:, d:])[0] >= -tol),
        cross_transpose_defect=float(np.max(np.abs(s[:d, d:] - s[d:, :d].T))) / scale,
    )


def random_block_model(rng, d, *, min_eig=0.05, unit_trace=True) -> CovarianceModel:
    """Draw a random well-conditioned block covariance (used by property tests
    and the acceptance suite).

    Eigenvalues are drawn uniformly on ``[min_eig, 1]`` with a Haar-random
    eigenbasis, then rescaled so that ``tr = 2d`` when ``unit_trace``.
    """
    q, r = np.linalg.qr(rng.standard_normal((2 * d, 2 * d)))
    q = q * np.sign(np.diag(r))
    w = rng.uniform(min_eig, 1.0, size=2 * d)
    if unit_trace:
        w *= 2 * d / w.sum()
    s = (q * w) @ q.T
    return CovarianceModel(0.5 * (s + s.T), require_unit_trace=unit_trace)
