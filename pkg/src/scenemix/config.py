"""TOML application configuration with strict key checking.

Every tunable the pipeline exposes lives in one file; unknown sections or
keys are hard errors so a typo cannot silently fall back to a default.
Values the file omits keep the library defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .augment import AugmentPolicy, Mode, PolicyBundle, default_policy
from .batcher import BatchConfig
from .captions import RefinerConfig
from .losses import LossConfig
from .relations import PlacementParams
from .train import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys, wrong types, or invalid values."""


@dataclass(frozen=True)
class EvalSettings:
    seed: int = 0
    n_max: int = 4
    min_overlap: float = 0.25
    reposition_method: str = "coordinate"
    reposition_steps: int = 60
    reposition_step_size: float = 0.4

    def __post_init__(self) -> None:
        if self.reposition_method not in ("coordinate", "gradient", "grid"):
            raise ValueError(f"unknown reposition method '{self.reposition_method}'")


_POLICY_KEYS = {
    "dropout_rate": float,
    "scale_min": float,
    "scale_max": float,
    "yaw_range": float,
    "tilt_range": float,
    "shift_range": float,
}

_SCHEMA: dict = {
    "dataset": {"root": str},
    "output": {"dir": str, "log_level": str},
    "placement": {"delta": float, "noise_sigma": float},
    "augment": {"single": _POLICY_KEYS, "pre_compose": _POLICY_KEYS, "final_scene": _POLICY_KEYS},
    "compose": {"target_points": int, "subsample_method": str},
    "refiner": {"endpoint_url": str, "model_name": str, "api_key_env": str,
                "timeout": float, "max_retries": int, "temperature": float,
                "offline_fallback": bool, "validate": bool, "prompt_path": str,
                "concurrency": int},
    "batch": {"batch_size": int, "alpha": float, "max_objects": int,
              "prefetch_depth": int, "workers": int, "global_seed": int},
    "loss": {"init_temperature": float, "tau_min": float, "tau_max": float,
             "dynamic_budget": bool},
    "train": {"epochs": int, "batches_per_epoch": int, "lr": float, "momentum": float,
              "hidden": int, "dim": int, "encoder_seed": int, "frozen_seed": int},
    "eval": {"seed": int, "n_max": int, "min_overlap": float, "reposition_method": str,
             "reposition_steps": int, "reposition_step_size": float},
    "baselines": {"mixup_matching": str},
}


def _check_keys(data: dict, schema: dict, path: str = "") -> None:
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key '{where}'")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a table")
            _check_keys(value, expected, where)
            continue
        if expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key '{where}' must be a number, got {value!r}")
        elif expected is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"config key '{where}' must be an integer, got {value!r}")
        elif not isinstance(value, expected):
            raise ConfigError(f"config key '{where}' must be {expected.__name__}, got {value!r}")


def _policy_from(mode: Mode, section: dict) -> AugmentPolicy:
    base = default_policy(mode)
    scale = (section.get("scale_min", base.scale_range[0]),
             section.get("scale_max", base.scale_range[1]))
    try:
        return AugmentPolicy(
            mode=mode,
            dropout_rate=section.get("dropout_rate", base.dropout_rate),
            scale_range=scale,
            yaw_range=section.get("yaw_range", base.yaw_range),
            tilt_range=section.get("tilt_range", base.tilt_range),
            shift_range=section.get("shift_range", base.shift_range),
        )
    except ValueError as exc:
        raise ConfigError(f"augment.{mode.value}: {exc}") from exc


@dataclass
class AppConfig:
    dataset_root: str = "."
    output_dir: str = "out"
    log_level: str = "info"
    placement: PlacementParams = field(default_factory=PlacementParams)
    policies: PolicyBundle = field(default_factory=PolicyBundle.default)
    target_points: int = 10000
    subsample_method: str = "uniform"
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    batch: BatchConfig = field(default_factory=BatchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    mixup_matching: str = "greedy"

    @classmethod
    def from_dict(cls, data: dict) -> "AppConfig":
        _check_keys(data, _SCHEMA)
        try:
            placement = PlacementParams(**data.get("placement", {}))
            augment = data.get("augment", {})
            policies = PolicyBundle(
                single=_policy_from(Mode.SINGLE, augment.get("single", {})),
                pre_compose=_policy_from(Mode.PRE_COMPOSE, augment.get("pre_compose", {})),
                final_scene=_policy_from(Mode.FINAL_SCENE, augment.get("final_scene", {})),
            )
            refiner = RefinerConfig(**data.get("refiner", {}))
            batch_section = dict(data.get("batch", {}))
            compose_section = data.get("compose", {})
            target_points = int(compose_section.get("target_points", 10000))
            subsample_method = compose_section.get("subsample_method", "uniform")
            if subsample_method not in ("uniform", "fps"):
                raise ConfigError(f"compose.subsample_method must be 'uniform' or 'fps', "
                                  f"got '{subsample_method}'")
            batch = BatchConfig(target_points=target_points, **batch_section)
            loss = LossConfig(alpha=batch.alpha, **data.get("loss", {}))
            train = TrainConfig(**data.get("train", {}))
            evaluation = EvalSettings(**data.get("eval", {}))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        matching = data.get("baselines", {}).get("mixup_matching", "greedy")
        if matching not in ("greedy", "random"):
            raise ConfigError(f"baselines.mixup_matching must be 'greedy' or 'random', got '{matching}'")
        level = data.get("output", {}).get("log_level", "info")
        if level not in ("debug", "info", "warning", "error"):
            raise ConfigError(f"output.log_level must be debug/info/warning/error, got '{level}'")
        return cls(
            dataset_root=data.get("dataset", {}).get("root", "."),
            output_dir=data.get("output", {}).get("dir", "out"),
            log_level=level,
            placement=placement,
            policies=policies,
            target_points=target_points,
            subsample_method=subsample_method,
            refiner=refiner,
            batch=batch,
            loss=loss,
            train=train,
            eval=evaluation,
            mixup_matching=matching,
        )

    @classmethod
    def load(cls, path: str | Path) -> "AppConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)
