"""Typed run configuration read from INI-style files.

Five sections map onto five frozen dataclasses; every key has a default, so
an empty file (or no file at all) yields a working synthetic-backend setup.
Unknown sections or keys are rejected by name rather than silently ignored:
a typo in a config should never turn into a default.

When no path is given, the DIFFTRACK_CONFIG environment variable is consulted
before falling back to pure defaults.
"""

import configparser
import dataclasses
import os
from dataclasses import dataclass

from .prompt_learner import TrainConfig
from .updater import UpdateSchedule, UpdaterTrainConfig

__all__ = [
    "BackboneConfig",
    "LearnerConfig",
    "UpdaterConfig",
    "PseudolabelConfig",
    "EvalConfig",
    "RunConfig",
    "load_config",
    "dump_defaults",
    "parse_layers",
]

ENV_VAR = "DIFFTRACK_CONFIG"


def parse_layers(text: str) -> tuple:
    """"64x16, 32x8" -> ((64, 16), (32, 8)); empty means backbone defaults."""
    text = text.strip()
    if not text:
        return ()
    out = []
    for part in text.split(","):
        bits = part.strip().lower().split("x")
        if len(bits) != 2:
            raise ValueError(f"layer entry {part.strip()!r} is not of the form CxS")
        try:
            rc, rs = int(bits[0]), int(bits[1])
        except ValueError:
            raise ValueError(f"layer entry {part.strip()!r} is not of the form CxS") from None
        out.append((rc, rs))
    return tuple(out)


def _format_layers(layers) -> str:
    return ", ".join(f"{rc}x{rs}" for rc, rs in layers)


@dataclass(frozen=True)
class BackboneConfig:
    """[backbone] kind = synthetic | diffusion-adapter.

    layers lists attention layers as "CxS" pairs (cross-map resolution x
    self-tensor resolution); empty takes the backbone's default stack.
    model_id and device only matter to the diffusion adapter.
    """

    kind: str = "synthetic"
    resolution: int = 256
    conditioning_dim: int = 64
    layers: tuple = ()
    seed: int = 0
    timestep: int = 50
    model_id: str = "stabilityai/stable-diffusion-2-1-base"
    device: str = "cuda"

    def __post_init__(self):
        if self.kind not in ("synthetic", "diffusion-adapter"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")


@dataclass(frozen=True)
class LearnerConfig:
    """[learner] offline shared phase plus first-frame adaptation settings.

    data points at a directory of training sequences (frames plus label
    files); empty is fine for everything except the training command.
    """

    data: str = ""
    shared_lr: float = 5e-4
    shared_epochs: int = 20
    specific_lr: float = 5e-3
    specific_epochs: int = 3
    specific_iters: int = 25
    lambda_dm: float = 1.0
    batch_size: int = 8
    num_tokens: int = 2
    projector_hidden: int = 256
    seed: int = 0

    def to_train_config(self) -> TrainConfig:
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items()
                              if k in fields})


@dataclass(frozen=True)
class UpdaterConfig:
    """[updater] schedule, blend initialization, and training settings.

    clip_len 0 means "derive from window"; tau is the localization threshold
    used at tracking time.
    """

    start_frame: int = 6
    interval: int = 1
    beta: float = 0.5
    tau: float = 0.5
    lr: float = 1e-4
    epochs: int = 60
    window: int = 8
    clips_per_epoch: int = 2
    clip_len: int = 0
    seed: int = 0

    def to_schedule(self) -> UpdateSchedule:
        return UpdateSchedule(start_frame=self.start_frame, interval=self.interval)

    def to_train_config(self) -> UpdaterTrainConfig:
        return UpdaterTrainConfig(
            lr=self.lr, epochs=self.epochs, window=self.window,
            clip_len=self.clip_len or None,
            clips_per_epoch=self.clips_per_epoch, seed=self.seed)


@dataclass(frozen=True)
class PseudolabelConfig:
    """[pseudolabel] mirrors the keyword arguments of label_video."""

    alpha_thresh: float = 0.3
    gamma: float = 4.1
    min_area: int = 50
    max_aspect: float = 6.0
    video_thresh: float = 0.40
    frame_low: float = 0.40
    frame_high: float = 0.45

    def kwargs(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class EvalConfig:
    """[eval] benchmark protocol and reporting settings."""

    protocol: str = "otb"
    eao_lo: int = 100
    eao_hi: int = 356
    radius: float = 20.0
    jobs: int = 1

    def __post_init__(self):
        if self.protocol not in ("otb", "vot"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")


@dataclass(frozen=True)
class RunConfig:
    backbone: BackboneConfig = BackboneConfig()
    learner: LearnerConfig = LearnerConfig()
    updater: UpdaterConfig = UpdaterConfig()
    pseudolabel: PseudolabelConfig = PseudolabelConfig()
    eval: EvalConfig = EvalConfig()


_SECTIONS = {
    "backbone": BackboneConfig,
    "learner": LearnerConfig,
    "updater": UpdaterConfig,
    "pseudolabel": PseudolabelConfig,
    "eval": EvalConfig,
}


def _coerce(section: str, key: str, text: str, default):
    try:
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return parse_layers(text)
    except ValueError as exc:
        raise ValueError(f"[{section}] {key}: {exc}") from None
    return text.strip()


def _build_section(parser, name: str, cls):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    if parser.has_section(name):
        for key, text in parser.items(name):
            if key not in known:
                raise ValueError(f"unknown config key {key!r} in section [{name}]")
            values[key] = _coerce(name, key, text, getattr(defaults, key))
    return cls(**values)


def load_config(path=None) -> RunConfig:
    """Parse an INI file into a RunConfig; everything unset keeps its default."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        if not os.path.exists(path):
            raise ValueError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
    return RunConfig(**{name: _build_section(parser, name, cls)
                        for name, cls in _SECTIONS.items()})


def dump_defaults() -> str:
    """The full default configuration as INI text, for --write-config."""
    lines = []
    for name, cls in _SECTIONS.items():
        lines.append(f"[{name}]")
        for f in dataclasses.fields(cls):
            value = getattr(cls(), f.name)
            if isinstance(value, tuple):
                value = _format_layers(value)
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
