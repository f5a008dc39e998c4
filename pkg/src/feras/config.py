"""Experiment configuration: JSON files with ``train``, ``sampler`` and ``model`` sections."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .gcn import Hyper
from .sampler import SamplerConfig
from .synthetic import SyntheticSpec
from .trainer import VARIANTS, TrainConfig

SWEEP_AXES = ("kappa", "q", "n_hosts")

_TRAIN_KEYS = ("epochs", "n_hosts", "q", "pi_private", "mode", "eval_every", "seed",
               "exact_split", "barrier", "inference")
_MODEL_KEYS = ("hidden_dims", "eta", "lambda", "loss_kind", "p_share_layer", "dense_head")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    variants: tuple[str, ...] = ("feras",)
    seeds: tuple[int, ...] = (0,)
    threshold: float | None = None

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}")


@dataclass(frozen=True)
class CertifySpec:
    param_scale: float = 0.5
    max_dim: int = 2000


@dataclass
class ExperimentConfig:
    dataset: str | SyntheticSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    variant: str = "feras"
    output_dir: str = "runs/out"
    visibility: str | None = None
    sweep: SweepSpec | None = None
    certify: CertifySpec = field(default_factory=CertifySpec)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")

    # -- (de)serialization ------------------------------------------------

    def to_dict(self) -> dict:
        t = self.train
        d = {
            "dataset": self.dataset if isinstance(self.dataset, str) else {"synthetic": self.dataset.to_dict()},
            "variant": self.variant,
            "output_dir": self.output_dir,
            "train": {k: getattr(t, k) for k in _TRAIN_KEYS},
            "sampler": {k: v for k, v in t.sampler.to_dict().items()},
            "model": {
                "hidden_dims": list(t.hidden_dims),
                "eta": t.hyper.eta,
                "lambda": t.hyper.lam,
                "loss_kind": t.hyper.loss_kind,
                "p_share_layer": t.p_share_layer,
                "dense_head": t.dense_head,
            },
            "certify": asdict(self.certify),
        }
        if self.visibility is not None:
            d["visibility"] = self.visibility
        if self.sweep is not None:
            s = asdict(self.sweep)
            d["sweep"] = {k: list(v) if isinstance(v, tuple) else v for k, v in s.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            return cls._from_dict(d)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def _from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {"dataset", "variant", "output_dir", "train", "sampler", "model",
                            "visibility", "sweep", "certify"}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "dataset" not in d:
            raise ConfigError("config needs a 'dataset' entry")
        ds = d["dataset"]
        if isinstance(ds, dict):
            if set(ds) != {"synthetic"}:
                raise ConfigError("dataset must be a path or {'synthetic': {...}}")
            ds = SyntheticSpec(**ds["synthetic"])
        elif not isinstance(ds, str):
            raise ConfigError("dataset must be a path or {'synthetic': {...}}")

        tr = dict(d.get("train", {}))
        _reject(tr, _TRAIN_KEYS, "train")
        model = dict(d.get("model", {}))
        _reject(model, _MODEL_KEYS, "model")
        hyper_kw = {"eta": model.pop("eta", Hyper.eta), "lam": model.pop("lambda", Hyper.lam),
                    "loss_kind": model.pop("loss_kind", Hyper.loss_kind)}
        if "hidden_dims" in model:
            model["hidden_dims"] = tuple(model["hidden_dims"])
        train = TrainConfig(
            **tr, **model,
            sampler=SamplerConfig(**d.get("sampler", {})),
            hyper=Hyper(**hyper_kw),
        )
        sweep = None
        if "sweep" in d:
            s = dict(d["sweep"])
            for key in ("values", "variants", "seeds"):
                if key in s:
                    s[key] = tuple(s[key])
            sweep = SweepSpec(**s)
        return cls(
            dataset=ds,
            train=train,
            variant=d.get("variant", "feras"),
            output_dir=d.get("output_dir", "runs/out"),
            visibility=d.get("visibility"),
            sweep=sweep,
            certify=CertifySpec(**d.get("certify", {})),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_train(self, **kw) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, **kw))


def _reject(section: dict, allowed, name: str) -> None:
    extra = set(section) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")


def loads(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.from_dict(raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | Path) -> ExperimentConfig:
    return loads(Path(path).read_text())
