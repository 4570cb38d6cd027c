import hashlib
import json
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, get_args

from depthsr.data import SUPPORTED_SCALES
from depthsr.errors import ConfigError, Error
from depthsr.losses import LossWeights


@dataclass
class Ablation:
    cross_task: bool = True
    output_space: bool = True
    affinity_space: bool = True
    structure: bool = True
    uncertainty: bool = True
    distill: bool = True


ABLATION_FLAGS: Dict[str, str] = {
    "no-ct": "cross_task",
    "no-output": "output_space",
    "no-affinity": "affinity_space",
    "no-spnet": "structure",
    "no-uncertainty": "uncertainty",
    "no-distill": "distill",
}

# file section -> {file key: attribute path}
SECTIONS: Dict[str, Dict[str, str]] = {
    "model": {
        "scale": "scale",
        "stage_count": "stage_count",
        "channels": "channels",
        "pool_size": "pool_size",
    },
    "optim": {
        "initial_lr": "initial_lr",
        "lr_decay_factor": "lr_decay_factor",
        "lr_decay_period": "lr_decay_period",
        "beta1": "beta1",
        "beta2": "beta2",
        "epsilon": "epsilon",
    },
    "schedule": {
        "batch_size": "batch_size",
        "step1_epochs": "step1_epochs",
        "max_epochs": "max_epochs",
        "seed": "seed",
        "force_student": "force_student",
    },
    "loss": {
        "gamma": "weights.gamma",
        "lambda": "weights.lam",
        "rho1": "weights.rho1",
        "rho2": "weights.rho2",
    },
    "ablation": {f.name: f"ablation.{f.name}" for f in fields(Ablation)},
    "data": {
        "train_dir": "train_dir",
        "val_dir": "val_dir",
        "test_dir": "test_dir",
        "run_dir": "run_dir",
        "augment": "augment",
        "progress": "progress",
        "role_split": "role_split",
        "dtype": "dtype",
    },
}


@dataclass
class TrainConfig:
    scale: int = 4
    stage_count: int = 5
    channels: int = 32
    pool_size: int = 32
    batch_size: int = 8
    step1_epochs: int = 100
    max_epochs: int = 200
    initial_lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_period: int = 50
    # "momentum = 0.9" is read as beta1
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: Ablation = field(default_factory=Ablation)
    force_student: Optional[str] = None
    train_dir: str = ""
    val_dir: str = ""
    test_dir: str = ""
    run_dir: str = "runs/default"
    augment: bool = True
    progress: bool = False
    role_split: str = "train"
    dtype: str = "float32"

    @classmethod
    def full_scale(cls, **overrides: Any) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides: Any) -> "TrainConfig":
        values: Dict[str, Any] = dict(
            scale=4,
            stage_count=2,
            channels=16,
            pool_size=16,
            batch_size=16,
            step1_epochs=30,
            max_epochs=60,
        )
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_toml(cls, path: Path, overrides: Iterable[str] = ()) -> "TrainConfig":
        try:
            with open(path, "rb") as f:
                document = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as err:
            raise ConfigError([f"cannot read config {path}: {err}"]) from err
        config = cls.toy() if document.get("preset") == "toy" else cls()
        errors = config.apply(document)
        errors += config.apply_overrides(overrides)
        if errors:
            raise ConfigError(errors)
        return config

    def apply(self, document: Dict[str, Any]) -> List[Error]:
        errors: List[Error] = []
        for section, values in document.items():
            if section == "preset":
                continue
            keys = SECTIONS.get(section)
            if keys is None or not isinstance(values, dict):
                errors.append(f"unknown config section [{section}]")
                continue
            for key, value in values.items():
                if key not in keys:
                    errors.append(f"unknown key {section}.{key}")
                    continue
                error = self._set(keys[key], value, f"{section}.{key}")
                if error is not None:
                    errors.append(error)
        return errors

    def apply_overrides(self, overrides: Iterable[str]) -> List[Error]:
        errors: List[Error] = []
        for override in overrides:
            target, sep, raw = override.partition("=")
            section, dot, key = target.strip().partition(".")
            if not sep or not dot:
                errors.append(f"override {override!r} is not section.key=value")
                continue
            try:
                value = tomllib.loads(f"v = {raw.strip()}")["v"]
            except tomllib.TOMLDecodeError:
                value = raw.strip()
            errors += self.apply({section: {key: value}})
        return errors

    def apply_ablations(self, flags: Iterable[str]) -> List[Error]:
        errors: List[Error] = []
        for flag in flags:
            if flag not in ABLATION_FLAGS:
                errors.append(f"unknown ablation {flag!r}; choose from {', '.join(ABLATION_FLAGS)}")
                continue
            setattr(self.ablation, ABLATION_FLAGS[flag], False)
        return errors

    def _set(self, path: str, value: Any, label: str) -> Optional[Error]:
        target: Any = self
        *parents, name = path.split(".")
        for parent in parents:
            target = getattr(target, parent)
        kind = {f.name: f.type for f in fields(target)}[name]
        allowed = tuple(t for t in (get_args(kind) or (kind,)) if t is not type(None))
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        # bool is an int subclass
        if not isinstance(value, allowed) or (isinstance(value, bool) and bool not in allowed):
            expected = " or ".join(t.__name__ for t in allowed)
            return f"{label} must be {expected}, got {value!r}"
        setattr(target, name, value)
        return None

    def effective_weights(self) -> LossWeights:
        return LossWeights(
            gamma=self.weights.gamma,
            lam=self.weights.lam,
            rho1=self.weights.rho1 if self.ablation.structure else 0.0,
            rho2=self.weights.rho2 if self.ablation.distill else 0.0,
        )

    def validate(self) -> List[Error]:
        errors: List[Error] = []
        if self.scale not in SUPPORTED_SCALES:
            errors.append(f"unsupported scale {self.scale}; supported: {', '.join(map(str, SUPPORTED_SCALES))}")
        if self.stage_count < 1:
            errors.append(f"model.stage_count must be >= 1, got {self.stage_count}")
        if self.channels < 2 or self.channels % 2:
            errors.append(f"model.channels must be an even number >= 2, got {self.channels}")
        if self.pool_size < 1:
            errors.append(f"model.pool_size must be >= 1, got {self.pool_size}")
        if self.batch_size < 1:
            errors.append(f"schedule.batch_size must be >= 1, got {self.batch_size}")
        if self.step1_epochs < 0:
            errors.append(f"schedule.step1_epochs must be >= 0, got {self.step1_epochs}")
        if self.step1_epochs >= self.max_epochs:
            errors.append(f"schedule.step1_epochs ({self.step1_epochs}) must be < max_epochs ({self.max_epochs})")
        if self.initial_lr <= 0:
            errors.append(f"optim.initial_lr must be > 0, got {self.initial_lr}")
        if not 0 < self.lr_decay_factor <= 1:
            errors.append(f"optim.lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_period < 1:
            errors.append(f"optim.lr_decay_period must be >= 1, got {self.lr_decay_period}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                errors.append(f"optim.{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.epsilon <= 0:
            errors.append(f"optim.epsilon must be > 0, got {self.epsilon}")
        if self.force_student not in (None, "DSR", "DE"):
            errors.append(f"schedule.force_student must be DSR or DE, got {self.force_student!r}")
        if self.role_split not in ("train", "val"):
            errors.append(f"data.role_split must be 'train' or 'val', got {self.role_split!r}")
        if self.role_split == "val" and not self.val_dir:
            errors.append("data.role_split = 'val' needs data.val_dir")
        if self.dtype not in ("float32", "float64"):
            errors.append(f"data.dtype must be float32 or float64, got {self.dtype!r}")
        errors += self.weights.validate()
        return errors

    def check(self) -> "TrainConfig":
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "TrainConfig":
        values = dict(values)
        weights = LossWeights(**values.pop("weights", {}))
        ablation = Ablation(**values.pop("ablation", {}))
        return cls(weights=weights, ablation=ablation, **values)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
