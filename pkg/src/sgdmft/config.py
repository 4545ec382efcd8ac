"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` are comments. Unknown keys are rejected. Values
are written back with 17 significant digits so a resolved config (and the
run manifest, which embeds it) reproduces a run bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .dmft import SolverConfig
from .model import KINDS, MixtureSpec
from .simulator import MASK_SCHEMES, RunParams

MODES = ("simulate", "dmft", "compare", "oracle", "sweep")
REQUIRED = ("kind", "alpha", "delta", "eta", "horizon")


class ConfigError(ValueError):
    pass


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _at_least_one(x):
    return x >= 1


# key -> (type, default, check, constraint text)
SCHEMA = {
    "mode": (str, "simulate", lambda v: v in MODES, f"one of {MODES}"),
    "kind": (str, None, lambda v: v in KINDS, f"one of {KINDS}"),
    "delta": (float, None, _positive, "> 0"),
    "door_onset": (float, 0.7, _positive, "> 0"),
    "rho": (float, 0.5, lambda v: 0 < v < 1, "in (0, 1)"),
    "alpha": (float, None, _nonneg, ">= 0"),
    "d": (int, 500, _at_least_one, ">= 1"),
    "lambda": (float, 0.0, _nonneg, ">= 0"),
    "eta": (float, None, _positive, "> 0"),
    "b": (float, 1.0, lambda v: 0 < v <= 1, "in (0, 1]"),
    "tau": (float, 1.0, _positive, "> 0"),
    "R": (float, 0.01, _nonneg, ">= 0"),
    "horizon": (float, None, _positive, "> 0"),
    "mask_scheme": (str, "", lambda v: v in MASK_SCHEMES + ("",), f"one of {MASK_SCHEMES}"),
    "clip_transitions": (bool, False, None, ""),
    "seed": (int, 0, _nonneg, ">= 0"),
    "n_seeds": (int, 1, _at_least_one, ">= 1"),
    "n_test": (int, 0, _nonneg, ">= 0"),
    "n_paths": (int, 10_000, _at_least_one, ">= 1"),
    "damping": (float, 0.5, lambda v: 0 < v <= 1, "in (0, 1]"),
    "tol": (float, 1e-3, _positive, "> 0"),
    "max_iters": (int, 100, _at_least_one, ">= 1"),
    "dmft_mask_mode": (str, "", lambda v: v in MASK_SCHEMES + ("",), f"one of {MASK_SCHEMES}"),
    "m0": ("optfloat", None, None, ""),
    "d_ref": (int, 0, _nonneg, ">= 0 (0 = use d)"),
    "correlation": (str, "wpath", lambda v: v in ("wpath", "dyson"), "'wpath' or 'dyson'"),
    "chunk_size": (int, 250, _at_least_one, ">= 1"),
    "workers": (int, 1, _at_least_one, ">= 1"),
    "warm_start": (str, "", None, ""),
    "sweep_key": (str, "", None, ""),
    "sweep_values": (list, (), None, ""),
    "sweep_mode": (str, "compare", lambda v: v in ("simulate", "dmft", "compare"), "simulate, dmft or compare"),
    "reference_error": ("optfloat", None, lambda v: v is None or 0 <= v <= 1, "in [0, 1]"),
}

ALIASES = {"inv_tau": "tau"}


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "simulate"
    kind: str = "two"
    delta: float = 0.5
    door_onset: float = 0.7
    rho: float = 0.5
    alpha: float = 2.0
    d: int = 500
    lam: float = 0.0
    eta: float = 0.2
    b: float = 1.0
    tau: float = 1.0
    R: float = 0.01
    horizon: float = 20.0
    mask_scheme: str = ""
    clip_transitions: bool = False
    seed: int = 0
    n_seeds: int = 1
    n_test: int = 0
    n_paths: int = 10_000
    damping: float = 0.5
    tol: float = 1e-3
    max_iters: int = 100
    dmft_mask_mode: str = ""
    m0: float | None = None
    d_ref: int = 0
    correlation: str = "wpath"
    chunk_size: int = 250
    workers: int = 1
    warm_start: str = ""
    sweep_key: str = ""
    sweep_values: tuple = ()
    sweep_mode: str = "compare"
    reference_error: float | None = None

    @property
    def scheme(self) -> str:
        if self.mask_scheme:
            return self.mask_scheme
        return "full" if self.b == 1 else "persistent"

    def mixture_spec(self) -> MixtureSpec:
        return MixtureSpec(self.kind, self.delta, self.door_onset, self.rho)

    def run_params(self) -> RunParams:
        return RunParams(
            alpha=self.alpha,
            d=self.d,
            lam=self.lam,
            eta=self.eta,
            b=self.b,
            tau=self.tau,
            R=self.R,
            horizon=self.horizon,
            mask_scheme=self.scheme,
            seed=self.seed,
            clip_transitions=self.clip_transitions,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            n_paths=self.n_paths,
            damping=self.damping,
            tol=self.tol,
            max_iters=self.max_iters,
            mask_mode=self.dmft_mask_mode or None,
            seed=self.seed,
            m0=self.m0,
            d_ref=self.d_ref or None,
            workers=self.workers,
            chunk_size=self.chunk_size,
            correlation=self.correlation,
        )

    def items(self):
        """(config key, value) pairs in schema order."""
        for key in SCHEMA:
            yield key, getattr(self, _attr(key))


def _attr(key: str) -> str:
    return "lam" if key == "lambda" else key


def _convert(key, raw: str, lineno: int | None):
    typ = SCHEMA[key][0]
    where = f"line {lineno}: " if lineno else ""
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError(raw)
            return int(val)
        if typ is float:
            return float(raw)
        if typ == "optfloat":
            return None if raw.lower() in ("", "none") else float(raw)
        if typ is list:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        name = typ if isinstance(typ, str) else typ.__name__
        raise ConfigError(f"{where}cannot read {key} = {raw!r} as {name}") from None


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate configuration text."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in ALIASES:
            target = ALIASES[key]
            val = _convert(target, raw, lineno)
            if target in values:
                raise ConfigError(f"line {lineno}: {key} duplicates {target}")
            if not val > 0:
                raise ConfigError(f"line {lineno}: {key} must be > 0")
            values[target] = 1.0 / val
            continue
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    for key, raw in (overrides or {}).items():
        values[key] = raw if not isinstance(raw, str) else _convert(key, raw, None)

    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    kwargs = {}
    for key, (typ, default, check, text_) in SCHEMA.items():
        val = values.get(key, default)
        if check is not None and not check(val):
            raise ConfigError(f"{key} = {val!r} out of range: must be {text_}")
        kwargs[_attr(key)] = val
    cfg = ExperimentConfig(**kwargs)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ExperimentConfig):
    try:
        cfg.mixture_spec()
        cfg.run_params()
        cfg.solver_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.mode == "sweep":
        if cfg.sweep_key not in SCHEMA or cfg.sweep_key in ("mode", "sweep_key", "sweep_values", "sweep_mode"):
            raise ConfigError(f"sweep_key = {cfg.sweep_key!r} is not a sweepable key")
        if not cfg.sweep_values:
            raise ConfigError("sweep_values must list at least one value")
    if cfg.mode == "oracle" and cfg.kind != "three":
        raise ConfigError("kind must be 'three' for mode oracle")


def format_value(val) -> str:
    if val is None:
        return "none"
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return "nan" if math.isnan(val) else f"{val:.17g}"
    if isinstance(val, tuple):
        return ", ".join(f"{v:.17g}" for v in val)
    return str(val)


def to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, val in cfg.items():
        lines.append(f"{key} = {format_value(val)}")
    return "\n".join(lines) + "\n"


def config_fields():
    return [f.name for f in fields(ExperimentConfig)]
