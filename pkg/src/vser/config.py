"""Run configuration in a flat dotted-key text format.

One assignment per line, TOML-compatible::

    # comments start with '#'
    seed = 0
    dataset = "fixture"
    train.batch_size = 4
    train.lr0 = 0.0001

Keys are ``section.field`` (or a bare top-level field); values are integers,
floats, booleans or double-quoted strings. Unknown keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from vser.audio import StftParams
from vser.errors import InvalidConfig
from vser.models import ModelSpec, square_variant_spec, student_spec, teacher_spec
from vser.training import StageConfig


@dataclass(frozen=True)
class PathsConfig:
    data_root: str = "data"
    run_dir: str = "runs/default"
    cache_dir: str = ""  # empty: <run_dir>/cache


@dataclass(frozen=True)
class DspConfig:
    n_fft: int = 1024
    hop: int = 64
    win_length: int = 512


@dataclass(frozen=True)
class SplitConfig:
    ratio: float = 0.8
    augment: bool = True


@dataclass(frozen=True)
class ModelConfig:
    teacher_depth: int = 6
    teacher_heads: int = 5
    student_depth: int = 3
    student_heads: int = 5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 4
    lr0: float = 1e-4
    lr_halving_period: int = 10
    alpha: float = 10.0


@dataclass(frozen=True)
class EvalConfig:
    sigma: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: str = "fixture"
    threads: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    # -- derived objects; constructing them is the validation --

    def stft_params(self) -> StftParams:
        return StftParams(self.dsp.n_fft, self.dsp.hop, self.dsp.win_length)

    def stage(self, stage: str) -> StageConfig:
        t = self.train
        return StageConfig(stage, t.epochs, t.batch_size, t.lr0, t.lr_halving_period, t.alpha)

    def teacher_spec(self, n_classes: int) -> ModelSpec:
        return teacher_spec(n_classes, self.model.teacher_depth, self.model.teacher_heads)

    def square_spec(self, n_classes: int) -> ModelSpec:
        return square_variant_spec(n_classes, self.model.teacher_depth, self.model.teacher_heads)

    def student_spec(self, n_classes: int) -> ModelSpec:
        return student_spec(n_classes, self.model.student_depth, self.model.student_heads)

    @property
    def run_dir(self) -> Path:
        return Path(self.paths.run_dir)

    @property
    def cache_dir(self) -> Path:
        return Path(self.paths.cache_dir) if self.paths.cache_dir else self.run_dir / "cache"

    def validate(self) -> RunConfig:
        from vser.data import DATASETS

        if self.dataset not in DATASETS:
            raise InvalidConfig(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.threads < 1:
            raise InvalidConfig(f"threads must be >= 1, got {self.threads}")
        if not 0.0 < self.split.ratio < 1.0:
            raise InvalidConfig(f"split.ratio must lie in (0, 1), got {self.split.ratio}")
        if self.eval.sigma <= 0:
            raise InvalidConfig(f"eval.sigma must be positive, got {self.eval.sigma}")
        self.stft_params()
        for stage in ("A_teacher", "B_match", "C_student"):
            self.stage(stage)
        self.teacher_spec(2), self.student_spec(2)
        return self


def _coerce(value, target_type: str, key: str):
    if target_type == "bool":
        if not isinstance(value, bool):
            raise InvalidConfig(f"{key} expects true/false, got {value!r}")
        return value
    if target_type == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{key} expects an integer, got {value!r}")
        return value
    if target_type == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key} expects a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise InvalidConfig(f"{key} expects a string, got {value!r}")
    return value


def from_dict(data: dict) -> RunConfig:
    top, sections = {}, {}
    for f in fields(RunConfig):
        if f.name not in data:
            continue
        value = data[f.name]
        if f.type in ("int", "str", "float", "bool"):
            top[f.name] = _coerce(value, f.type, f.name)
            continue
        if not isinstance(value, dict):
            raise InvalidConfig(f"{f.name} must be a section of dotted keys")
        section_cls = type(getattr(RunConfig(), f.name))
        known = {sf.name: sf.type for sf in fields(section_cls)}
        for key in value:
            if key not in known:
                raise InvalidConfig(f"unknown config key {f.name}.{key}")
        sections[f.name] = section_cls(
            **{k: _coerce(v, known[k], f"{f.name}.{k}") for k, v in value.items()}
        )
    unknown = set(data) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**top, **sections).validate()


def parse_config(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig(f"config syntax error: {exc}") from exc
    return from_dict(data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    return json.dumps(value)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, dict):
            lines += [f"{key}.{k} = {_format_value(v)}" for k, v in value.items()]
        else:
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **top) -> RunConfig:
    """Replace top-level fields (``seed``, ``dataset``, ``threads``) and run dir."""
    run_dir = top.pop("run_dir", None)
    if run_dir is not None:
        cfg = replace(cfg, paths=replace(cfg.paths, run_dir=str(run_dir)))
    return replace(cfg, **{k: v for k, v in top.items() if v is not None}).validate()
