"""
Config - Experiment configuration files, presets and hashing
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..backend import ConfigError

PRESET_DIR = Path(__file__).resolve().parents[2] / "data" / "presets"
SEED_ENV = "METAMARL_SEED"
HASH_EXCLUDED = {"workers", "seeds"}


class ExperimentConfig(BaseModel):
    """Resolved settings of one experiment"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    game: Literal["ipd", "rps", "zero_sum"] = "ipd"
    n_agents: int = Field(2, ge=2)
    method: Literal["meta_mapg", "meta_pg", "no_own_learning", "reinforce"] = "meta_mapg"
    estimator_path: Literal["score_function", "dice_autodiff"] = "dice_autodiff"
    K: int = Field(32, ge=1)
    H: int = Field(20, ge=1)
    L: int = Field(3, ge=1)
    gamma: float = Field(0.96, ge=0.0, lt=1.0)
    gae_lambda: float = Field(0.95, ge=0.0, le=1.0)
    inner_lr: float = Field(1.0, gt=0.0)
    outer_lr: float = Field(0.1, ge=0.0)
    learn_inner_lrs: bool = False
    opponent_modeling: bool = False
    population: str = "ipd"
    population_seed: int = Field(0, ge=0)
    peers_per_batch: int = Field(4, ge=1)
    max_iters: int = Field(300, ge=0)
    val_every: int = Field(0, ge=0)
    patience: int = Field(0, ge=0)
    seeds: List[int] = Field(default_factory=lambda: [0])
    workers: int = Field(1, ge=1)
    init_scale: float = Field(0.0, ge=0.0)
    pcgrad: bool = True
    async_updates: bool = False
    exact: bool = False
    om_lr: float = Field(1.0, gt=0.0)
    om_tol: float = Field(1e-6, ge=0.0)
    om_max_iters: int = Field(200, ge=0)
    n_samples: int = Field(200, ge=1)
    fig3_init: Literal["mirror", "uniform"] = "mirror"

    @field_validator("seeds", mode="before")
    @classmethod
    def _split_seeds(cls, value):
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        return value

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in value):
            raise ValueError("seeds must be non-negative")
        return value

    @model_validator(mode="after")
    def _check_game(self):
        if self.game in ("ipd", "zero_sum") and self.n_agents != 2:
            raise ValueError(f"{self.game} is a 2-agent game")
        if self.game == "zero_sum" and self.method not in ("meta_mapg", "meta_pg"):
            raise ValueError("the zero-sum game supports meta_mapg and meta_pg only")
        return self


def read_config_file(path, _stack: Optional[List[Path]] = None) -> Dict[str, str]:
    """
    Parse a flat key=value file, resolving includes depth-first

    Args:
        path: File to read
        _stack: Files currently being read (cycle detection)

    Returns:
        Raw string values, later lines overriding included ones
    """
    path = Path(path).resolve()
    stack = list(_stack or [])
    if path in stack:
        raise ConfigError(f"include cycle: {' -> '.join(p.name for p in stack + [path])}")
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    stack.append(path)

    values: Dict[str, str] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path.name}:{lineno}: expected key = value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path.name}:{lineno}: empty key")
            if key == "include":
                values.update(read_config_file(_resolve_include(path, value), stack))
            else:
                values[key] = value
    return values


def _resolve_include(parent: Path, name: str) -> Path:
    local = parent.parent / name
    if local.is_file():
        return local
    preset = PRESET_DIR / name
    if preset.is_file():
        return preset
    raise ConfigError(f"{parent.name}: included file {name!r} not found")


def load_config(path, overrides: Optional[Mapping[str, object]] = None, env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Read, merge and validate a configuration file

    Args:
        path: Config file (a bare preset name is looked up in data/presets)
        overrides: Values applied after the file
        env: Environment to read METAMARL_SEED from (os.environ by default)

    Returns:
        Validated ExperimentConfig
    """
    path = Path(path)
    if not path.is_file() and (PRESET_DIR / path.name).is_file():
        path = PRESET_DIR / path.name
    raw: Dict[str, object] = dict(read_config_file(path))
    raw.update(overrides or {})
    env = os.environ if env is None else env
    seed = env.get(SEED_ENV)
    if seed:
        raw["seeds"] = seed
    return ExperimentConfig(**raw)


def config_hash(config: ExperimentConfig) -> str:
    """md5 of the canonical JSON, ignoring where and how often the run is placed"""
    payload = json.dumps(config.model_dump(exclude=HASH_EXCLUDED), sort_keys=True)
    return hashlib.md5(payload.encode()).hexdigest()


class PresetLibrary:
    """Published hyperparameter and population tables"""

    def __init__(self):
        self.hyperparameters = {
            "ipd": {
                "batch_sizes": (4, 8, 16, 32, 64),
                "threads": 5,
                "inner_lrs": (1.0, 0.1),
                "outer_lr": 1e-4,
                "critic_lr": 1.5e-4,
                "horizon": 150,
                "chain_length": 7,
                "gae_lambda": 0.95,
                "gamma": 0.96,
            },
            "rps": {
                "batch_sizes": (64,),
                "threads": 5,
                "inner_lrs": (0.01,),
                "outer_lr": 1e-5,
                "critic_lr": 1.5e-5,
                "horizon": 150,
                "chain_length": 7,
                "gae_lambda": 0.95,
                "gamma": 0.90,
            },
            "reinforce_ipd": {
                "batch_sizes": (4, 8, 16, 32, 64),
                "actor_lrs": (1.0, 0.1),
                "horizon": 150,
                "chain_length": 7,
                "gamma": 0.96,
            },
        }
        self.populations = {
            "ipd": {"counts": {"cooperating": 240, "defecting": 240}, "split": (400, 40, 40)},
            "rps": {"counts": {"rock": 240, "paper": 240, "scissors": 240}, "split": (600, 60, 60)},
        }

    def get_hyperparameters(self, name: str) -> Dict:
        if name not in self.hyperparameters:
            raise ConfigError(f"no hyperparameter table named {name!r}")
        return self.hyperparameters[name]

    def get_population(self, name: str) -> Dict:
        if name not in self.populations:
            raise ConfigError(f"no population preset named {name!r}")
        return self.populations[name]

    def preset_path(self, name: str) -> Path:
        path = PRESET_DIR / (name if name.endswith(".cfg") else f"{name}.cfg")
        if not path.is_file():
            raise ConfigError(f"preset {name!r} is not shipped")
        return path

    def list_presets(self) -> List[str]:
        return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


presets = PresetLibrary()
