"""Solver and sampler configuration.

Defaults come from the dataclass fields, can be overridden from the environment
(``BELIEFOPT_*`` variables, optionally loaded from a ``.env`` file), then from a
JSON config file, and finally from CLI flags.
"""

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

load_dotenv()

INIT_CHOICES = ("uniform-half", "bias-sigmoid", "seeded-noise")
BP_SCHEDULES = ("synchronous", "sequential")


@dataclass(frozen=True)
class SolveConfig:
    """Hyperparameters shared by BO, MF, TAP, BP and the Gaussian solver."""

    max_iters: int = 1000
    tol_q: float = 1e-8
    tol_f: float = 1e-10
    tol_grad: float = 1e-6
    step0: float = 0.1
    step_up: float = 1.1
    step_down: float = 0.5
    damping_max: float = 0.9
    damping_ramp_iters: int = 100
    init: str = "seeded-noise"
    seed: int = 0
    restarts: int = 1
    bp_schedule: str = "synchronous"
    message_floor: float = 1e-300
    tap_use_gradient: bool = False
    divergence_floor: float = -1e12
    variance_cap: float = 1e12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 <= self.damping_max < 1.0:
            raise ValueError(f"damping_max must lie in [0, 1), got {self.damping_max}")
        if self.step0 <= 0:
            raise ValueError(f"step0 must be positive, got {self.step0}")
        if self.init not in INIT_CHOICES:
            raise ValueError(f"init must be one of {INIT_CHOICES}, got {self.init!r}")
        if self.bp_schedule not in BP_SCHEDULES:
            raise ValueError(f"bp_schedule must be one of {BP_SCHEDULES}, got {self.bp_schedule!r}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")

    def damping(self, iteration: int) -> float:
        """Linear damping ramp from 0 to ``damping_max`` over ``damping_ramp_iters``."""
        if self.damping_ramp_iters <= 0:
            return self.damping_max
        return self.damping_max * min(1.0, iteration / self.damping_ramp_iters)

    def grad_threshold(self, n: int) -> float:
        """Gradient-norm threshold for an ``n``-node model; at least ``tol_grad``."""
        return self.tol_grad * max(n, 1)


@dataclass(frozen=True)
class GibbsConfig:
    """Annealed single-site Gibbs sampler settings."""

    n_samples: int = 10000
    burn_in: int = 1000
    anneal_from: float = 4.0
    anneal_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.burn_in < 0 or self.anneal_steps < 0:
            raise ValueError("Gibbs sample, burn-in and anneal counts must be positive")
        if self.anneal_from < 1.0:
            raise ValueError(f"anneal_from must be >= 1, got {self.anneal_from}")


_ENV_PREFIX = "BELIEFOPT_"


def _coerce(value: str, target: Any) -> Any:
    if isinstance(target, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    return type(target)(value)


def _env_overrides(cls) -> Dict[str, Any]:
    overrides = {}
    defaults = cls()
    for field in fields(cls):
        raw = os.getenv(_ENV_PREFIX + field.name.upper())
        if raw is not None:
            overrides[field.name] = _coerce(raw, getattr(defaults, field.name))
    return overrides


def with_overrides(config, overrides: Optional[Dict[str, Any]]):
    """Return a copy of ``config`` with ``overrides`` applied, rejecting unknown keys."""
    if not overrides:
        return config
    known = {f.name for f in fields(config)}
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ValueError(f"Unknown {type(config).__name__} keys: {', '.join(unknown)}")
    return replace(config, **overrides)


def solve_config_from_env() -> SolveConfig:
    """SolveConfig with ``BELIEFOPT_*`` environment overrides applied."""
    return SolveConfig(**_env_overrides(SolveConfig))


def gibbs_config_from_env() -> GibbsConfig:
    return GibbsConfig(**_env_overrides(GibbsConfig))


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    Load a JSON config file.

    The file may either be a flat mapping of SolveConfig keys or hold ``"solve"``
    and ``"gibbs"`` sections.

    Returns:
        Dictionary with ``"solve"`` and ``"gibbs"`` override mappings
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found at {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    if "solve" in data or "gibbs" in data:
        return {"solve": data.get("solve", {}), "gibbs": data.get("gibbs", {})}
    return {"solve": data, "gibbs": {}}


def log_level_from_env(default: str = "WARNING") -> str:
    return os.getenv(_ENV_PREFIX + "LOG_LEVEL", default).upper()
