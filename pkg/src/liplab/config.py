"""Flat key=value run configuration.

One ``key=value`` pair per line, ``#`` starts a comment, blank lines are
skipped. The namespace is flat on purpose: unknown keys are a hard error,
so a typo can never silently fall back to a default. Every key has a
documented default (see SCHEMA and the README table).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ConfigKey:
    default: object
    kind: type
    help: str


SCHEMA: dict[str, ConfigKey] = {
    # synthetic corpus generation
    "classes": ConfigKey(10, int, "number of word classes V"),
    "frames": ConfigKey(12, int, "frames per clip T"),
    "gen_size": ConfigKey(28, int, "rendered frame size (square)"),
    "audio_dim": ConfigKey(8, int, "audio features per frame A"),
    "train_per_class": ConfigKey(20, int, "training clips per class"),
    "val_per_class": ConfigKey(10, int, "validation clips per class"),
    "test_per_class": ConfigKey(10, int, "test clips per class"),
    "pose_rot_deg": ConfigKey(0.0, float, "max |rotation| of the per-clip pose, degrees"),
    "pose_shift": ConfigKey(0.0, float, "max |shift| of the per-clip pose, pixels"),
    "pose_scale": ConfigKey(0.0, float, "pose scale drawn from [1-x, 1+x]"),
    "noise_sigma": ConfigKey(0.02, float, "Gaussian pixel noise sigma"),
    "distractor_level": ConfigKey(0.0, float, "amplitude of checker distractor patches"),
    "audio_noise": ConfigKey(0.1, float, "Gaussian noise sigma on the audio stream"),
    "teacher_cache": ConfigKey(True, bool, "train the audio teacher and cache posteriors "
                                           "during gen-data"),
    # model
    "crop_size": ConfigKey(24, int, "square crop fed to the network"),
    "word_boundary": ConfigKey(True, bool, "append the word-boundary indicator channel"),
    "stem_channels": ConfigKey(8, int, "stem convolution output channels"),
    "stage1_channels": ConfigKey(16, int, "first SE-residual stage width"),
    "stage2_channels": ConfigKey(32, int, "second SE-residual stage width"),
    "se_reduction": ConfigKey(4, int, "squeeze-excitation bottleneck reduction"),
    "gru_hidden": ConfigKey(32, int, "GRU hidden size per direction"),
    "gru_layers": ConfigKey(3, int, "stacked bidirectional GRU layers"),
    "dropout": ConfigKey(0.2, float, "dropout after pooling and between GRU layers"),
    "attention_kernel": ConfigKey(1, int, "spatial attention hop kernel size"),
    # training
    "epochs": ConfigKey(30, int, "training epochs"),
    "batch_size": ConfigKey(8, int, "clips per optimizer step"),
    "lr0": ConfigKey(3e-4, float, "initial learning rate of the cosine schedule"),
    "lr_min": ConfigKey(0.0, float, "final learning rate of the cosine schedule"),
    "mixup_alpha": ConfigKey(0.2, float, "Beta(alpha, alpha) parameter for mixup"),
    "label_smoothing": ConfigKey(0.1, float, "label smoothing constant epsilon"),
    "train_fraction": ConfigKey(1.0, float, "stable per-class fraction of training clips"),
    # distillation
    "kd_temperature": ConfigKey(2.0, float, "distillation temperature tau"),
    "kd_beta_seq": ConfigKey(1.0, float, "weight of the sequence-level KD loss"),
    "kd_beta_frame": ConfigKey(1.0, float, "weight of the frame-level KD loss"),
    # audio teacher
    "teacher_hidden": ConfigKey(32, int, "audio teacher MLP hidden width"),
    "teacher_epochs": ConfigKey(20, int, "audio teacher training epochs"),
    "teacher_lr": ConfigKey(0.01, float, "audio teacher Adam learning rate"),
    "teacher_batch": ConfigKey(16, int, "audio teacher batch size"),
}


class RunConfig:
    """Resolved configuration: schema defaults overlaid with file values."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values = {name: key.default for name, key in SCHEMA.items()}
        for name, value in (values or {}).items():
            if name not in SCHEMA:
                raise ConfigError(f"unknown configuration key {name!r}")
            self._values[name] = value

    def __getattr__(self, name: str):
        try:
            return self._values[name]
        except KeyError:
            raise AttributeError(name) from None

    def __getitem__(self, name: str):
        if name not in self._values:
            raise ConfigError(f"unknown configuration key {name!r}")
        return self._values[name]

    def as_dict(self) -> dict[str, object]:
        return dict(self._values)


def _parse_value(name: str, raw: str) -> object:
    kind = SCHEMA[name].kind
    raw = raw.strip()
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {name!r}: cannot parse {raw!r} as a boolean")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {name!r}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected key=value, got {line.strip()!r}")
        name, _, raw = stripped.partition("=")
        name = name.strip()
        if name not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown configuration key {name!r}")
        if name in values:
            raise ConfigError(f"line {line_no}: duplicate key {name!r}")
        values[name] = _parse_value(name, raw)
    return RunConfig(values)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())
