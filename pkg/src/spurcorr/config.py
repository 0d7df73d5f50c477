"""Experiment configuration: one JSON document plus dotted-key overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covmodel import CovarianceModel
from .detequiv import GroundTruth
from .errors import ConfigError, ParameterRangeError

DEFAULTS = {
    "model": {"d": 400, "ev_max_yy": 2.0, "beta": 0.5},
    "ground_truth": {"theta_star_x": "e1", "sigma2": 0.25},
    "n": 2000,
    "lambda_grid": {"min": 1e-3, "max": 1e2, "count": 31},
    "seeds": {"base": 0, "count": 10},
    "simplicity": {"axis": "ev_max_yy", "values": [1.5, 2.0, 3.0, 5.0], "lambda": 1.0},
    "rf": None,
    "output_dir": "out",
    "subtract_noise": False,
}

RF_DEFAULTS = {
    "p": 20000,
    "p_ladder": [2000, 8000, 32000],
    "activations": ["tanh", "phi1"],
    "nodes": 200,
    "lambda_grid": [0.0, 0.1, 1.0, 10.0],
    "seeds": 5,
    "n_test": 100,
    "mc_samples": 10000,
}

DESK = {"model.d": 100, "n": 500}


def _set_dotted(doc, key, value):
    parts = key.split(".")
    cur = doc
    for p in parts[:-1]:
        if cur.get(p) is None:
            cur[p] = {}
        cur = cur[p]
        if not isinstance(cur, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
    cur[parts[-1]] = value


def parse_override(text: str):
    """``a.b=value``; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    model: dict
    ground_truth: dict
    n: int
    lambda_grid: dict
    seeds: dict
    simplicity: dict
    rf: dict | None
    output_dir: Path
    subtract_noise: bool
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, doc: dict, *, base_dir=".") -> "ExperimentConfig":
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        full = _merge(DEFAULTS, doc)
        if full["rf"] is not None:
            full["rf"] = _merge(RF_DEFAULTS, full["rf"])
        cfg = cls(
            model=full["model"],
            ground_truth=full["ground_truth"],
            n=full["n"],
            lambda_grid=full["lambda_grid"],
            seeds=full["seeds"],
            simplicity=full["simplicity"],
            rf=full["rf"],
            output_dir=Path(full["output_dir"]),
            subtract_noise=bool(full["subtract_noise"]),
            base_dir=Path(base_dir),
        )
        cfg.check()
        return cfg

    def check(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        g = self.lambda_grid
        try:
            lo, hi, count = float(g["min"]), float(g["max"]), int(g["count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"lambda_grid needs min, max, count: {exc}") from None
        if count < 1 or not (0 < lo <= hi):
            raise ConfigError(f"lambda_grid must satisfy 0 < min <= max and count >= 1, got {g}")
        if int(self.seeds.get("count", 0)) < 0:
            raise ConfigError("seeds.count must be >= 0")
        if "path" in self.model:
            p = self.resolve(self.model["path"])
            if not p.exists():
                raise ConfigError(f"model file {p} does not exist")
        axis = self.simplicity.get("axis")
        if axis not in ("ev_max_yy", "beta"):
            raise ConfigError(f"simplicity.axis must be 'ev_max_yy' or 'beta', got {axis!r}")
        if not self.simplicity.get("values"):
            raise ConfigError("simplicity.values must be nonempty")
        if self.rf is not None:
            if not self.rf["p_ladder"] or not self.rf["activations"]:
                raise ConfigError("rf.p_ladder and rf.activations must be nonempty")
            if any(lam < 0 for lam in self.rf["lambda_grid"]):
                raise ConfigError("rf.lambda_grid must be nonnegative")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    # derived objects ------------------------------------------------------
    def grid(self):
        g = self.lambda_grid
        return np.geomspace(float(g["min"]), float(g["max"]), int(g["count"])).tolist()

    def seed_values(self):
        base, count = int(self.seeds.get("base", 0)), int(self.seeds.get("count", 0))
        return [base + i for i in range(count)]

    def build_model(self, **synthetic_overrides) -> CovarianceModel:
        spec = dict(self.model)
        if "path" in spec:
            return CovarianceModel.from_json(self.resolve(spec["path"]))
        spec.update(synthetic_overrides)
        return CovarianceModel.from_dict(spec)

    def build_ground_truth(self, d: int) -> GroundTruth:
        gt = self.ground_truth
        sigma2 = float(gt.get("sigma2", 0.25))
        theta = gt.get("theta_star_x", "e1")
        if theta == "e1":
            return GroundTruth.first_basis(d, sigma2)
        vec = np.asarray(theta, dtype=float)
        if vec.shape != (d,):
            raise ConfigError(f"theta_star_x has shape {vec.shape}, expected ({d},)")
        try:
            return GroundTruth.from_vector(vec, sigma2)
        except ParameterRangeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=(), *, desk=False) -> ExperimentConfig:
    doc = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        base = path.parent
    doc = _merge(DEFAULTS, doc)
    if desk:
        for k, v in DESK.items():
            _set_dotted(doc, k, v)
    for item in overrides:
        _set_dotted(doc, *parse_override(item))
    return ExperimentConfig.from_dict(doc, base_dir=base)
