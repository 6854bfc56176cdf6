"""Run configuration: a single resolved record covering every module.

JSON configs are partial; anything not specified keeps its default.  Unknown
keys and type mismatches are rejected with the offending field path so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .clustering import DbscanParams, RerankParams
from .encoder import OptimizerConfig
from .errors import InvalidConfig
from .losses import LossWeights
from .numerics import Temperatures
from .synth import AugmentConfig


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple = (128,)
    d_out: int = 32


@dataclass(frozen=True)
class ScheduleConfig:
    epochs_per_step: int = 10
    iterations_per_epoch: int = 200
    n_p: int = 8
    n_k: int = 4
    rehearsal_batch: int = 32


@dataclass(frozen=True)
class DataConfig:
    n_seen: int = 3
    n_unseen: int = 2
    n_train_identities: int = 100
    n_test_identities: int = 50
    n_cameras: int = 4
    samples_per_id_per_camera: int = 4
    d_in: int = 64
    noise_sigma: float = 0.05
    camera_offset_norm: float = 0.2
    bias_scale: float = 0.1
    transform_condition: float = 8.0
    ambient_noise_sigma: float = 0.03


# JSON key -> dataclass field name, where the field name is not a legal key
_FIELD_ALIASES = {"is": "is_"}
_KEY_ALIASES = {v: k for k, v in _FIELD_ALIASES.items()}


def _coerce(value, f, path):
    want = f.type if isinstance(f.type, type) else None
    name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if name == "int" or want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig("%s must be an integer, got %r" % (path, value))
        return value
    if name == "float" or want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig("%s must be a number, got %r" % (path, value))
        return float(value)
    if name == "tuple" or want is tuple:
        if not isinstance(value, (list, tuple)):
            raise InvalidConfig("%s must be a list, got %r" % (path, value))
        return tuple(value)
    return value


def _build_section(cls, data, path):
    if not isinstance(data, dict):
        raise InvalidConfig("%s must be an object" % path)
    by_name = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        fname = _FIELD_ALIASES.get(key, key)
        if fname not in by_name:
            raise InvalidConfig("unknown key %s.%s" % (path, key))
        kwargs[fname] = _coerce(value, by_name[fname], "%s.%s" % (path, key))
    try:
        return dataclasses.replace(cls(), **kwargs)
    except (TypeError, ValueError, InvalidConfig) as exc:
        raise InvalidConfig("%s: %s" % (path, exc)) from exc


def _section_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = list(v)
        out[_KEY_ALIASES.get(f.name, f.name)] = v
    return out


@dataclass
class RunConfig:
    master_seed: int = 7
    threads: int = 1
    order: tuple | None = None
    n_mem: int = 512
    ema_alpha: float = 0.999
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    temperatures: Temperatures = field(default_factory=Temperatures)
    weights: LossWeights = field(default_factory=LossWeights)
    rerank: RerankParams = field(default_factory=RerankParams)
    dbscan: DbscanParams = field(default_factory=DbscanParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)

    _SECTIONS = {
        "encoder": EncoderConfig,
        "optimizer": OptimizerConfig,
        "temperatures": Temperatures,
        "weights": LossWeights,
        "rerank": RerankParams,
        "dbscan": DbscanParams,
        "augment": AugmentConfig,
        "schedule": ScheduleConfig,
        "data": DataConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise InvalidConfig("config root must be an object")
        cfg = cls()
        for key, value in data.items():
            if key in cls._SECTIONS:
                setattr(cfg, key, _build_section(cls._SECTIONS[key], value, key))
            elif key in ("master_seed", "threads", "n_mem"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise InvalidConfig("%s must be an integer, got %r" % (key, value))
                setattr(cfg, key, value)
            elif key == "ema_alpha":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise InvalidConfig("ema_alpha must be a number, got %r" % (value,))
                cfg.ema_alpha = float(value)
            elif key == "order":
                if value is not None:
                    if not isinstance(value, list) or not all(
                        isinstance(v, int) and not isinstance(v, bool) for v in value
                    ):
                        raise InvalidConfig("order must be a list of integers")
                    value = tuple(value)
                cfg.order = value
            else:
                raise InvalidConfig("unknown key %s" % key)
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(
                "%s line %d column %d: %s" % (path, exc.lineno, exc.colno, exc.msg)
            ) from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {
            "master_seed": self.master_seed,
            "threads": self.threads,
            "order": None if self.order is None else list(self.order),
            "n_mem": self.n_mem,
            "ema_alpha": self.ema_alpha,
        }
        for key in self._SECTIONS:
            out[key] = _section_dict(getattr(self, key))
        return out

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


ABLATIONS = ("pa", "pa-ia", "pa-ia-ps", "pa-ia-is", "full")


def apply_ablation(cfg: RunConfig, name: str) -> RunConfig:
    """Zero out loss weights to match a named ablation row."""
    if name not in ABLATIONS:
        raise InvalidConfig("unknown ablation %r (choose from %s)" % (name, ", ".join(ABLATIONS)))
    w = cfg.weights
    if name == "pa":
        w = dataclasses.replace(w, lambda_ia=0.0, lambda_ps=0.0, lambda_is=0.0)
    elif name == "pa-ia":
        w = dataclasses.replace(w, lambda_ps=0.0, lambda_is=0.0)
    elif name == "pa-ia-ps":
        w = dataclasses.replace(w, lambda_is=0.0)
    elif name == "pa-ia-is":
        w = dataclasses.replace(w, lambda_ps=0.0)
    out = dataclasses.replace(cfg)
    out.weights = w
    return out
