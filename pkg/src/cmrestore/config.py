"""Experiment configuration: sectioned ``key = value`` files and the config hash.

Example file::

    [experiment]
    seed = 0

    [schedule]
    rho = 7

    [trainer]
    steps = 20000

Every key is optional; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields, replace

from .data import DatasetSpec
from .errors import ConfigurationError
from .schedule import ScheduleConfig
from .trainer import TrainerConfig


@dataclass(frozen=True)
class PriorSettings:
    epochs: int = 150
    batch_size: int = 256
    lr: float = 2e-3
    width: int = 128
    depth: int = 3


@dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 64
    steps: int = 20000
    lr: float = 1e-3
    width: int = 128
    depth: int = 3
    time_dim: int = 32
    importance: bool = True
    consistency: bool = True
    warmup: int = 10
    lam: float = 0.05
    log_interval: int = 100


@dataclass(frozen=True)
class ScorerSettings:
    cadence: int = 2000
    eval_batch: int = 256
    candidate_stride: int = 1
    feature_dim: int = 16


@dataclass(frozen=True)
class ExperimentSettings:
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DatasetSpec = field(default_factory=DatasetSpec)
    prior: PriorSettings = field(default_factory=PriorSettings)
    trainer: TrainSettings = field(default_factory=TrainSettings)
    scorer: ScorerSettings = field(default_factory=ScorerSettings)

    def __post_init__(self) -> None:
        if self.data.seed != self.seed:
            object.__setattr__(self, "data", replace(self.data, seed=self.seed))
        # construct once so invalid combinations fail at load time
        self.trainer_config("v3" if self.trainer.consistency else "v2")

    @property
    def seed(self) -> int:
        return self.experiment.seed

    @property
    def prior_seed(self) -> int:
        return self.seed + 1

    @property
    def trainer_seed(self) -> int:
        return self.seed + 2

    @property
    def projector_seed(self) -> int:
        return self.seed + 3

    def trainer_config(self, mode: str) -> TrainerConfig:
        t, s = self.trainer, self.scorer
        return TrainerConfig(
            mode=mode, batch_size=t.batch_size, steps=t.steps, seed=self.trainer_seed, lr=t.lr,
            width=t.width, depth=t.depth, time_dim=t.time_dim, importance=t.importance,
            consistency=t.consistency, warmup=t.warmup, lam=t.lam, scorer_cadence=s.cadence,
            eval_batch=s.eval_batch, candidate_stride=s.candidate_stride,
            log_interval=t.log_interval)

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        return replace(self, **{section: replace(getattr(self, section), **values)})


SECTIONS = [f.name for f in fields(ExperimentConfig)]
# the dataset seed always follows the experiment seed
_HIDDEN = {("data", "seed")}


def _section_fields(section: str):
    cls = {f.name: f for f in fields(ExperimentConfig)}[section].default_factory
    return [f for f in fields(cls) if (section, f.name) not in _HIDDEN]


def _coerce(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"malformed config: {err}") from None
    sections = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{name}]")
        known = {f.name: f for f in _section_fields(name)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigurationError(f"unknown key {key!r} in section [{name}]")
            values[key] = _coerce(raw, known[key].default, f"[{name}] {key}")
        sections[name] = values
    defaults = ExperimentConfig()
    try:
        built = {name: replace(getattr(defaults, name), **sections.get(name, {})) for name in SECTIONS}
        return ExperimentConfig(**built)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigurationError):
            raise
        raise ConfigurationError(str(err)) from None


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: every section and key, in declaration order."""
    lines = []
    for name in SECTIONS:
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in _section_fields(name):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> bytes:
    """SHA-256 of :func:`dump_config`; 32 bytes."""
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).digest()


def as_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
