"""Run configuration: a flat YAML (or JSON) mapping with strict keys.

Every key has a default; validation collects all violated constraints
before raising so a user sees the whole list at once.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from .geometry import SpaceTimeGrid
from .noise import CovarianceSpec, NoiseError
from .nonlinearity import Nonlinearity, default_lambda


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentConfig:
    # reaction term
    kind: str = "polynomial"
    m: float = 3.0
    alpha_log: float = 2.0
    g_sup: float = 0.0
    f2_variant: str = "consistent"
    # grid and noise
    d: int = 1
    nx: int | None = None
    noise: str = "white"
    noise_lam: float | None = None
    alpha: float | None = None
    lam: float | None = None
    # coming down
    R: list = field(default_factory=lambda: [0.125, 0.25, 0.375])
    boundary: str = "constant"
    M: list = field(default_factory=lambda: [1.0, 1e2, 1e4, 1e6])
    ensemble: int = 200
    base_seed: int = 0
    coarsen: bool = True
    write_fields: bool = False
    # ode
    x0: list = field(default_factory=lambda: [10.0, 1e3, 1e6])
    n_steps: int = 100_000
    n_paths: int = 1000
    # tails and invariant measure
    quantile: float = 0.95
    tail_method: str = "mle"
    n_samples: int = 10_000
    batch: int = 500
    samples_file: str | None = None
    chain_steps: int = 10_000
    n_chains: int = 100
    burn_in: int = 2000
    scaling: str = "spde"
    band: list = field(default_factory=lambda: [2.2, 3.8])
    max_gap: float = 0.6
    # diagnostics
    T: list = field(default_factory=lambda: [0.0625, 0.125, 0.25])
    n_fields: int = 100
    radii: list = field(default_factory=lambda: [0.9, 0.45, 0.225, 0.1125])
    dx_list: list = field(default_factory=lambda: [0.015625, 0.0078125])
    tolerance: float = 0.2

    # -- derived -----------------------------------------------------------
    def nonlinearity(self) -> Nonlinearity:
        if self.kind == "polynomial":
            return Nonlinearity.polynomial(self.m, self.g_sup)
        if self.kind == "sinh":
            return Nonlinearity.sinh(self.g_sup)
        return Nonlinearity.log_type(self.alpha_log, self.g_sup, self.f2_variant)

    def noise_spec(self) -> CovarianceSpec:
        return CovarianceSpec(self.noise, self.noise_lam)

    def grid(self) -> SpaceTimeGrid:
        return SpaceTimeGrid.default(self.d, self.nx)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


KEYS = {f.name for f in fields(ExperimentConfig)}


_FLOAT_LISTS = ("R", "M", "x0", "band", "T", "radii", "dx_list")


def _normalize(cfg: ExperimentConfig) -> None:
    # 3 and 3.0 must hash alike, so integers in float slots become floats
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if "float" in str(f.type) and isinstance(v, int) and not isinstance(v, bool):
            setattr(cfg, f.name, float(v))
        elif f.name in _FLOAT_LISTS and isinstance(v, (list, tuple)):
            setattr(cfg, f.name, [float(x) if isinstance(x, (int, float)) and not isinstance(x, bool) else x
                                  for x in v])


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill defaults that depend on other keys, then check every constraint."""
    _normalize(cfg)
    bad = []
    if cfg.kind not in ("polynomial", "sinh", "log_type"):
        bad.append(f"kind must be polynomial, sinh or log_type, not {cfg.kind!r}")
    if cfg.kind == "polynomial" and not cfg.m > 1:
        bad.append("m must exceed 1")
    if cfg.kind == "log_type" and not cfg.alpha_log > 0:
        bad.append("alpha_log must be positive")
    if cfg.g_sup < 0:
        bad.append("g_sup must be nonnegative")
    if cfg.d not in (1, 2, 3):
        bad.append("d must be 1, 2 or 3")
    if cfg.nx is not None and cfg.nx < 3:
        bad.append("nx must be at least 3")
    spec = None
    try:
        spec = cfg.noise_spec()
    except NoiseError as exc:
        bad.append(str(exc))
    if spec is not None and spec.kind == "white" and cfg.d != 1:
        bad.append("white noise is only available for d = 1")
    if spec is not None:
        if cfg.alpha is None:
            cfg.alpha = spec.default_alpha()
        elif not 0 < cfg.alpha < 1:
            bad.append("alpha must lie in (0, 1)")
        elif cfg.alpha >= spec.regularity:
            bad.append(f"alpha must stay below the noise regularity {spec.regularity:g}")
    if cfg.lam is None and cfg.d in (1, 2, 3):
        cfg.lam = default_lambda(cfg.d)
    elif cfg.lam is not None and not cfg.lam > 0:
        bad.append("lam must be positive")
    if any(not 0 < r < 0.5 for r in cfg.R):
        bad.append("every R must lie in (0, 1/2)")
    if cfg.boundary not in ("constant", "oscillating", "random", "zero"):
        bad.append("boundary must be constant, oscillating, random or zero")
    if any(v < 0 for v in cfg.M):
        bad.append("boundary magnitudes must be nonnegative")
    if cfg.ensemble < 1:
        bad.append("ensemble must be at least 1")
    if cfg.n_steps < 100:
        bad.append("n_steps must be at least 100")
    if not 0.5 < cfg.quantile < 0.999:
        bad.append("quantile must lie in (0.5, 0.999)")
    if cfg.tail_method not in ("mle", "loglog"):
        bad.append("tail_method must be mle or loglog")
    if cfg.n_samples < 1:
        bad.append("n_samples must be at least 1")
    if cfg.scaling not in ("spde", "literal"):
        bad.append("scaling must be spde or literal")
    if cfg.chain_steps < 1 or cfg.n_chains < 1 or cfg.burn_in < 0:
        bad.append("chain_steps and n_chains must be positive, burn_in nonnegative")
    if any(t <= 0 or t > 1 for t in cfg.T):
        bad.append("every T must lie in (0, 1]")
    if cfg.base_seed < 0:
        bad.append("base_seed must be nonnegative")
    if bad:
        raise ConfigError(bad)
    return cfg


def config_from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    unknown = sorted(set(data) - KEYS)
    if unknown:
        raise ConfigError([f"unknown key {k!r}" for k in unknown])
    return validate(ExperimentConfig(**data))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"parse error in {path}{where}: {getattr(exc, 'problem', exc)}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: the top level must be a mapping")
    return config_from_dict(data)
