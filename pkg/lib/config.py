"""
Experiment Configuration

Loads ExperimentConfig from YAML files or named presets, and reads optional
defaults from a .env file.
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

from .errors import ConfigurationError
from .schemas import ExperimentConfig


load_dotenv()

DEFAULT_RUNS_DIR = "runs"
DEFAULT_LOG_LEVEL = "INFO"

# Training set sizes of the all-canary and half-canary presets.
TABLE2_SIZES = (250, 500, 1000)


def runs_dir() -> str:
    """Root directory for run outputs (DPAUDIT_RUNS_DIR, default 'runs')."""
    return os.getenv("DPAUDIT_RUNS_DIR", DEFAULT_RUNS_DIR)


def log_level() -> str:
    return os.getenv("DPAUDIT_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()


def _dpsgd(input_dim: int = 10, num_classes: int = 4, steps: int = 200, batch_size: int = 64,
           noise_multiplier: float = 0.5, clip_C: float = 1.0, lr: float = 0.5) -> Dict[str, Any]:
    return {
        "kind": "dpsgd",
        "dpsgd": {
            "clip_C": clip_C,
            "noise_multiplier": noise_multiplier,
            "steps": steps,
            "batch_size": batch_size,
            "lr": lr,
            "net": {
                "input_dim": input_dim,
                "hidden_dims": [32],
                "output_dim": num_classes,
                "activation": "relu",
                "head": "logits",
            },
        },
    }


def _table2_presets() -> Dict[str, Dict[str, Any]]:
    """All-canary and half-canary presets for each size in TABLE2_SIZES."""
    presets = {}
    for n in TABLE2_SIZES:
        suffix = "" if n == TABLE2_SIZES[0] else f"-n{n}"
        for regime, data in (("r0", {"n": n, "m": 2 * n, "r": 0}), ("half", {"n": n, "m": n, "r": n // 2})):
            name = f"table2-desk-{regime}{suffix}"
            presets[name] = {
                "name": name,
                "mechanism": _dpsgd(),
                "data": data,
                "games": {"binary": True, "kary": True, "K": 2},
                "scores": {"methods": ["margin", "quantile"]},
                "trials": 5,
            }
    return presets


# Scaled-down settings: r = 9m for the first, then the table-2 grid, then a
# heterogeneous setting where per-example score spread varies widely.
PRESETS: Dict[str, Dict[str, Any]] = {
    "table1-desk": {
        "name": "table1-desk",
        "mechanism": _dpsgd(),
        "data": {"n": 475, "m": 50, "r": 450},
        "games": {"binary": True, "kary": True, "K": 2},
        "scores": {"methods": ["margin", "loss", "quantile"]},
        "trials": 5,
    },
    **_table2_presets(),
    # 1000 nuisance coordinates against 800 fitted holdout examples: the
    # regressor cannot recover what the target memorized in them.
    "heterogeneous-quantile": {
        "name": "heterogeneous-quantile",
        "mechanism": _dpsgd(input_dim=1010, steps=300),
        "data": {
            "n": 1000, "m": 1000, "r": 500, "heterogeneity": 1.0,
            "nuisance_dims": 1000, "nuisance_scale": 0.2, "holdout_size": 1000,
        },
        "games": {"binary": True, "kary": True, "K": 2},
        "scores": {"methods": ["margin", "quantile"]},
        "trials": 10,
    },
    "rr-oracle": {
        "name": "rr-oracle",
        "mechanism": {"kind": "rr", "eps_true": 1.0},
        "data": {"m": 1000, "r": 0},
        "games": {"binary": True, "kary": True, "K": 2},
        "trials": 5,
    },
    "gaussian-oracle": {
        "name": "gaussian-oracle",
        "mechanism": {"kind": "gaussian", "noise_sigma": 1.0},
        "data": {"m": 1000, "r": 0},
        "games": {"binary": True, "kary": True, "K": 2},
        "trials": 5,
    },
}


def get_preset(name: str, **overrides: Any) -> ExperimentConfig:
    """
    Build a preset config.

    Args:
        name: Key of PRESETS
        **overrides: Top-level fields to replace (e.g. trials=1)

    Raises:
        ConfigurationError: If the preset does not exist
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset '{name}'; choose from {', '.join(sorted(PRESETS))}")
    raw = copy.deepcopy(PRESETS[name])
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(raw)


def load_config(path: Union[str, Path], **overrides: Any) -> ExperimentConfig:
    """
    Load and validate a YAML experiment config.

    Raises:
        ConfigurationError: If the file is missing or is not a YAML mapping
        pydantic.ValidationError: If a field or invariant is violated
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must contain a mapping at the top level")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(raw)


def dump_config(config: ExperimentConfig) -> str:
    """YAML text of a config, keys in declaration order."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def resolve(path: Optional[str] = None, preset: Optional[str] = None, **overrides: Any) -> ExperimentConfig:
    """Config from exactly one of a YAML path or a preset name."""
    if (path is None) == (preset is None):
        raise ConfigurationError("give exactly one of a config path or a preset name")
    if preset is not None:
        return get_preset(preset, **overrides)
    return load_config(path, **overrides)
