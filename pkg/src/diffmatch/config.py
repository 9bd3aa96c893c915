"""Experiment configuration: a sectioned ``key = value`` text file.

Every key has a default, so an empty file is a valid config. Unknown
sections or keys are rejected and errors carry the offending line number.
Lists are written space-separated (``seeds = 0 1 2``).
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .channel import ScenarioRadio
from .dqn import DQNSettings
from .errors import ConfigurationError
from .reward import EconWeights
from .scenario import ConditionSpec


@dataclass(frozen=True)
class ScenarioSection:
    num_users: int = 15
    num_experts: int = 6
    quota: int = 2
    affinity_spread: float = 0.3
    affinity_floor: float = 0.2


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 200
    batch: int = 16
    lr: float = 1e-3
    hidden: int = 128
    diffusion_steps: tuple = (3, 6)
    beta_start: float = 0.15
    beta_end: float = 0.6
    alpha_bar_max: float = 0.05
    dqn_episodes: int = 16
    dqn_lr: float = DQNSettings.lr
    dqn_hidden: int = DQNSettings.hidden[0]
    dqn_buffer: int = DQNSettings.buffer_capacity
    dqn_batch: int = DQNSettings.batch
    dqn_gamma: float = DQNSettings.gamma
    dqn_target_sync: int = DQNSettings.target_sync
    dqn_train_every: int = DQNSettings.train_every
    dqn_eps_start: float = DQNSettings.eps_start
    dqn_eps_end: float = DQNSettings.eps_end
    dqn_anneal_fraction: float = DQNSettings.anneal_fraction

    def dqn_settings(self) -> DQNSettings:
        return DQNSettings(
            hidden=(self.dqn_hidden,), lr=self.dqn_lr, buffer_capacity=self.dqn_buffer,
            batch=self.dqn_batch, gamma=self.dqn_gamma, target_sync=self.dqn_target_sync,
            train_every=self.dqn_train_every, eps_start=self.dqn_eps_start,
            eps_end=self.dqn_eps_end, anneal_fraction=self.dqn_anneal_fraction)


@dataclass(frozen=True)
class SweepSection:
    snr_db_min: float = -10.0
    snr_db_max: float = 30.0
    snr_db_step: float = 5.0
    eval_drops: int = 200
    convergence_snr_db: float = 10.0
    final_window: int = 20
    smoothing_window: int = 10
    brute_force_limit: int = 200_000

    def grid(self) -> tuple:
        n = int(round((self.snr_db_max - self.snr_db_min) / self.snr_db_step))
        return tuple(float(self.snr_db_min + k * self.snr_db_step) for k in range(n + 1))


@dataclass(frozen=True)
class OracleSection:
    sizes: tuple = ("3x2", "4x3")
    quota: int = 1
    epochs: int = 300
    num_seeds: int = 10
    min_ratio: float = 0.95
    min_passing: int = 8
    snr_db: float = 10.0
    da_instances: int = 100
    weight_instances: int = 50
    corrupt_weights: bool = False

    def shapes(self) -> list:
        out = []
        for s in self.sizes:
            try:
                u, e = (int(x) for x in s.lower().split("x"))
            except ValueError:
                raise ConfigurationError(f"oracle size {s!r} is not of the form UxE") from None
            out.append((u, e))
        return out


@dataclass(frozen=True)
class RunSection:
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    radio: ScenarioRadio = field(default_factory=ScenarioRadio)
    reward: EconWeights = field(default_factory=EconWeights)
    condition: ConditionSpec = field(default_factory=ConditionSpec)
    training: TrainingSection = field(default_factory=TrainingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    run: RunSection = field(default_factory=RunSection)

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def with_section(self, name: str, **changes) -> "ExperimentConfig":
        return replace(self, **{name: replace(getattr(self, name), **changes)})


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig)}


def _field_types(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


def _elem_type(cls, name):
    default = getattr(cls(), name)
    if isinstance(default, tuple):
        return type(default[0]) if default else str
    return None


def _parse_value(raw: str, kind, elem=None):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is tuple:
        parts = raw.replace(",", " ").split()
        return tuple(_parse_value(p, elem) for p in parts)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _key_lines(text: str) -> dict:
    """Map (section, key) to the 1-based line it appears on."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out.setdefault((section, None), no)
        elif "=" in s and not s.startswith("#"):
            out.setdefault((section, s.split("=", 1)[0].strip().lower()), no)
    return out


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), delimiters=("=",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    lines = _key_lines(text)

    def where(section, key=None):
        return f"{source}:{lines.get((section, key), '?')}"

    sections = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigurationError(f"{where(name)}: unknown section [{name}]")
        cls = SECTIONS[name]
        types = _field_types(cls)
        kw = {}
        for key, raw in cp.items(name):
            if key not in types:
                raise ConfigurationError(f"{where(name, key)}: unknown key {key!r} in [{name}]")
            try:
                kw[key] = _parse_value(raw, types[key], _elem_type(cls, key))
            except ValueError as exc:
                raise ConfigurationError(f"{where(name, key)}: bad value for {key}: {exc}") from None
        try:
            sections[name] = cls(**kw)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{where(name)}: {exc}") from None
    cfg = ExperimentConfig(**sections)
    try:
        validate(cfg)
    except ConfigurationError as exc:
        sec, key = getattr(exc, "location", (None, None))
        at = lines.get((sec, key)) or lines.get((sec, None), "?")
        raise ConfigurationError(f"{source}:{at}: {exc}") from None
    return cfg


def _invalid(section: str, key: str, msg: str) -> ConfigurationError:
    exc = ConfigurationError(f"[{section}] {msg}")
    exc.location = (section, key)
    return exc


def validate(cfg: ExperimentConfig) -> None:
    sc, tr, sw, run = cfg.scenario, cfg.training, cfg.sweep, cfg.run
    if sc.num_users < 1 or sc.num_experts < 1:
        raise _invalid("scenario", "num_users", "needs at least one user and one expert")
    if not 1 <= sc.quota <= sc.num_experts:
        raise _invalid("scenario", "quota", f"quota {sc.quota} must lie in 1..num_experts")
    if sw.snr_db_max < sw.snr_db_min:
        raise _invalid("sweep", "snr_db_max",
                       f"snr_db_max {sw.snr_db_max} is below snr_db_min {sw.snr_db_min}")
    if sw.snr_db_step <= 0:
        raise _invalid("sweep", "snr_db_step", "snr_db_step must be positive")
    if sw.eval_drops < 1:
        raise _invalid("sweep", "eval_drops", "eval_drops must be >= 1")
    if sw.final_window < 1 or sw.smoothing_window < 0:
        raise _invalid("sweep", "final_window", "final_window must be >= 1, smoothing_window >= 0")
    if not run.seeds:
        raise _invalid("run", "seeds", "seeds must not be empty")
    if len(set(run.seeds)) != len(run.seeds) or min(run.seeds) < 0:
        raise _invalid("run", "seeds", "seeds must be distinct non-negative integers")
    if tr.epochs < 1:
        raise _invalid("training", "epochs", "epochs must be >= 1")
    if tr.batch < 2:
        raise _invalid("training", "batch", "batch must be >= 2 for the mean baseline")
    if not tr.diffusion_steps or min(tr.diffusion_steps) < 1:
        raise _invalid("training", "diffusion_steps", "diffusion_steps must list positive counts")
    if tr.lr <= 0 or tr.dqn_lr <= 0:
        raise _invalid("training", "lr", "learning rates must be positive")
    if tr.dqn_episodes < 1 or tr.dqn_train_every < 1:
        raise _invalid("training", "dqn_episodes", "dqn_episodes and dqn_train_every must be >= 1")
    try:
        cfg.oracle.shapes()
    except ConfigurationError as exc:
        raise _invalid("oracle", "sizes", str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return loads(text, source=str(path))


def dumps(cfg: ExperimentConfig) -> str:
    out = []
    for f in fields(ExperimentConfig):
        sec = getattr(cfg, f.name)
        out.append(f"[{f.name}]")
        for g in fields(sec):
            out.append(f"{g.name} = {_format_value(getattr(sec, g.name))}")
        out.append("")
    return "\n".join(out)


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
