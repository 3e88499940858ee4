"""Run configuration: an INI file with one section per module.

Every key has a default, so an empty file is a valid configuration (the
synthetic benchmark with desk-scale settings). Unknown sections or keys are
rejected with a :class:`ConfigError` naming the offender.

The discount factor lives in ``[ppo]`` and the reward scale ``alpha`` in
``[env]``; both are copied into the sampling config so the two can never
disagree.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from rre.agent import AgentConfig
from rre.dts import DtsConfig
from rre.env import EnvConfig
from rre.errors import ConfigError
from rre.ppo import PpoConfig
from rre.trainer import TrainConfig

MODES = ("rre", "naive-all", "naive-last")


@dataclass
class DataConfig:
    path: str = ""              # empty: generate the synthetic series
    target: str = "target"
    T: int = 24
    H: int = 6
    synth_steps: int = 2000
    synth_noise_frac: float = 0.15
    synth_seed: int = 0


@dataclass
class RunOptions:
    mode: str = "rre"
    output_dir: str = "runs/default"
    seeds: tuple = (0,)
    # bench only
    modes: tuple = MODES
    backbones: tuple = ("GRU",)


# Defaults differing from the library dataclasses: the agent is shrunk to a
# size a single CPU core trains in minutes.
_DESK_AGENT = dict(d_e=32, layers=1, heads=4, d_ff=64)

_SECTIONS = {
    "data": {f.name: f for f in dataclasses.fields(DataConfig)},
    "env": {k: f for k, f in ((f.name, f) for f in dataclasses.fields(EnvConfig)) if k not in ("d_in", "horizon")},
    "agent": {k: f for k, f in ((f.name, f) for f in dataclasses.fields(AgentConfig))
              if k not in ("d_h", "d_in", "skip_window")},
    "dts": {k: f for k, f in ((f.name, f) for f in dataclasses.fields(DtsConfig)) if k not in ("gamma", "alpha")},
    "ppo": {f.name: f for f in dataclasses.fields(PpoConfig)},
    "train": {k: f for k, f in ((f.name, f) for f in dataclasses.fields(TrainConfig)) if k != "seed"},
    "run": {f.name: f for f in dataclasses.fields(RunOptions)},
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    env: dict = field(default_factory=dict)
    agent: dict = field(default_factory=lambda: dict(_DESK_AGENT))
    dts: dict = field(default_factory=dict)
    ppo: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    run: RunOptions = field(default_factory=RunOptions)

    def env_config(self, d_in: int, backbone: str | None = None) -> EnvConfig:
        kw = dict(self.env)
        if backbone:
            kw["cell"] = backbone
        return EnvConfig(d_in=d_in, horizon=self.data.H, **kw)

    def agent_config(self, env_cfg: EnvConfig) -> AgentConfig:
        return AgentConfig(env_cfg.d_h, env_cfg.d_in, env_cfg.skip_window, **self.agent)

    def dts_config(self, env_cfg: EnvConfig) -> DtsConfig:
        return DtsConfig(gamma=self.ppo_config().gamma, alpha=env_cfg.alpha, **self.dts)

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(**self.ppo)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **self.train)

    def validate(self) -> None:
        """Build every component config once so bad values fail before training."""
        try:
            if self.run.mode not in MODES:
                raise ValueError(f"run.mode must be one of {MODES}")
            for m in self.run.modes:
                if m not in MODES:
                    raise ValueError(f"run.modes entry {m!r} not in {MODES}")
            if not self.run.seeds:
                raise ValueError("run.seeds is empty")
            for b in self.run.backbones:
                e = self.env_config(1, b)
                self.dts_config(e)
                self.agent_config(e)
            self.env_config(1)
            self.ppo_config()
            self.train_config(0)
            if self.data.T < 1 or self.data.H < 1:
                raise ValueError("data.T and data.H must be positive")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "data": dataclasses.asdict(self.data),
            "env": dict(self.env), "agent": dict(self.agent), "dts": dict(self.dts),
            "ppo": dict(self.ppo), "train": dict(self.train),
            "run": {k: list(v) if isinstance(v, tuple) else v
                    for k, v in dataclasses.asdict(self.run).items()},
        }


def _coerce(section: str, key: str, raw: str, fld: dataclasses.Field):
    default = fld.default if fld.default is not dataclasses.MISSING else None
    kind = type(default) if default is not None else str
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is tuple:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return tuple(int(s) for s in items) if key == "seeds" else tuple(items)
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (T, H)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = RunConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        fields = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r} in [{section}]")
            value = _coerce(section, key, raw, fields[key])
            target = getattr(cfg, section)
            if isinstance(target, dict):
                target[key] = value
            else:
                setattr(target, key, value)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
