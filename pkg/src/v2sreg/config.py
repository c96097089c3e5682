"""Pipeline configuration: one dataclass tree, JSON load/save, canonical
hashing."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from .dataset import canonical_json, config_hash
from .fem import SolverOpts
from .geometry import GenParams
from .scenario import PartialSurfaceParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    count: int = 1
    resolution: int = 64
    out_root: Optional[str] = None
    workers: int = 1
    generation: GenParams = field(default_factory=lambda: GenParams(seed=0))
    solver: SolverOpts = field(default_factory=SolverOpts)
    partial: PartialSurfaceParams = field(
        default_factory=lambda: PartialSurfaceParams(seed=0))
    youngs_modulus_range: tuple = (2000.0, 5000.0)
    poissons_ratio: float = 0.35
    mls_radius: float = 0.005

    def validate(self) -> None:
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.resolution < 2:
            raise ConfigError("resolution must be >= 2")
        if self.resolution % 8:
            raise ConfigError("resolution must be divisible by 8")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not (0.0 < self.mls_radius):
            raise ConfigError("mls_radius must be positive")
        lo, hi = self.youngs_modulus_range
        if not (0.0 < lo <= hi):
            raise ConfigError("youngs_modulus_range must be 0 < lo <= hi")
        if not (0.0 <= self.poissons_ratio < 0.5):
            raise ConfigError("poissons_ratio must be in [0, 0.5)")
        self.generation.validate()
        self.partial.validate()

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    def identity_dict(self) -> dict:
        # seed, count, out_root, and workers do not change sample content,
        # so they stay out of the identity hash
        d = self.to_dict()
        for k in ("seed", "count", "out_root", "workers"):
            d.pop(k, None)
        # per-stream seeds inside nested params are derived at run time
        d["generation"].pop("seed", None)
        d["partial"].pop("seed", None)
        return d

    def hash(self) -> str:
        return config_hash(self.identity_dict())


def _build(cls, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"{path}{key}: unknown key for {cls.__name__}")
        f = fields[key]
        if dataclasses.is_dataclass(f.type) or f.type in _NESTED:
            sub = _NESTED.get(f.type, f.type)
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key}: expected an object")
            sub_fields = {g.name for g in dataclasses.fields(sub)}
            if "seed" in sub_fields and "seed" not in value:
                # nested seeds are placeholders; real ones derive per sample
                value = dict(value, seed=0)
            kwargs[key] = _build(sub, value, path + key + ".")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path.rstrip('.') or 'config'}: {exc}") from exc


_NESTED = {
    "GenParams": GenParams,
    "SolverOpts": SolverOpts,
    "PartialSurfaceParams": PartialSurfaceParams,
}


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = _build(PipelineConfig, data, "")
    cfg.validate()
    return cfg


def save_config(cfg: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(json.loads(canonical_json(cfg.to_dict())),
                            indent=2, sort_keys=True))
        fh.write("\n")
