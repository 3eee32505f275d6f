"""The lip-reading network: SE-ResNet frontend, BiGRU backend, linear heads.

Frames are processed independently by a small 2-D convolutional frontend
(stem + two stride-2 SE-residual stages); temporal structure is handled by
the attention block and the 3-layer bidirectional GRU. The sequence head
classifies the time-averaged recurrent features; an optional per-frame head
provides the logits consumed by frame-level distillation.

Spatial bookkeeping with the defaults: crop S -> stem stride 2 -> S/2 ->
stage 1 stride 2 -> S/4 -> stage 2 stride 2 -> S/8 (88 -> 44 -> 22 -> 11).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import (AttentionBundle, AttentionParams, attention_forward,
                        init_attention_params)
from .tensor import Tensor
from . import vsrt
from .fileio import atomic_write_text


@dataclass
class ModelConfig:
    n_classes: int = 10
    frames: int = 12
    frame_size: int = 24
    word_boundary: bool = True
    stem_channels: int = 8
    stage1_channels: int = 16
    stage2_channels: int = 32
    se_reduction: int = 4
    gru_hidden: int = 32
    gru_layers: int = 3
    dropout: float = 0.2
    attention: bool = True
    attention_kernel: int = 1
    kd_head: bool = False

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.gru_hidden < 1 or self.gru_layers < 1:
            raise ValueError("GRU hidden size and layer count must be >= 1")
        for c in (self.stage1_channels, self.stage2_channels):
            if c % self.se_reduction != 0:
                raise ValueError(f"SE reduction {self.se_reduction} must divide "
                                 f"channel width {c}")

    @property
    def in_channels(self) -> int:
        return 1 + (1 if self.word_boundary else 0)

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            if key not in types:
                raise ValueError(f"unknown model config key {key!r}")
            if types[key] == "bool" or types[key] is bool:
                kwargs[key] = value == "True"
            elif types[key] == "float" or types[key] is float:
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)


@dataclass
class NetworkOutput:
    sequence_logits: Tensor               # (V,)
    frame_logits: Tensor | None           # (T, V) when the KD head is enabled
    attention: AttentionBundle | None     # present when attention is enabled
    features: Tensor                      # (T, C) sequence fed to the GRU


def _xavier(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-frame, per-channel spatial normalization with a learned affine.

    Composed from primitive ops (mean/expand/power), so its gradient is
    covered by the finite-difference suite. Kills the common-mode feature
    component which otherwise dominates per-sample gradient noise and, at
    the small pinned learning rate, stalls training; no batch statistics
    are involved, so evaluation stays deterministic per clip.
    """
    t, c, h, w = x.shape

    def spatial(v: Tensor) -> Tensor:
        return T.expand(T.expand(v, 2, h), 3, w)

    m = T.mean_(x, axis=(2, 3), keepdims=True)
    centered = x - spatial(m)
    var = T.mean_(centered * centered, axis=(2, 3), keepdims=True)
    normed = centered * spatial((var + eps) ** -0.5)
    g4 = spatial(T.expand(gamma.reshape(1, c, 1, 1), 0, t))
    b4 = spatial(T.expand(beta.reshape(1, c, 1, 1), 0, t))
    return normed * g4 + b4


def se_excitation(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Channel gate: sigmoid(W2 relu(W1 squeeze(x))), squeeze = global average."""
    t, c, h, w = x.shape
    squeeze = T.avg_pool2d(x)                                     # (T, C)
    hidden = T.relu(T.add_rowvec(T.matmul(squeeze, w1), b1))
    return T.sigmoid(T.add_rowvec(T.matmul(hidden, w2), b2))      # (T, C)


def se_scale(x: Tensor, gate: Tensor) -> Tensor:
    """Scale the (T, C, h, w) map channel-wise by a (T, C) gate."""
    t, c, h, w = x.shape
    gate4 = T.expand(T.expand(gate.reshape(t, c, 1, 1), 2, h), 3, w)
    return gate4 * x


def se_block(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
             residual: Tensor | None = None) -> Tensor:
    """Squeeze-excitation: rescale channels by the learned gate, add the residual."""
    scaled = se_scale(x, se_excitation(x, w1, b1, w2, b2))
    return scaled + (x if residual is None else residual)


class LipReader:
    """Full model; parameters live in an ordered name -> Tensor registry."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng([seed, 0xC0FFEE])
        self._build(rng)

    # -- construction ------------------------------------------------------

    def _register(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self.params[name] = t
        return t

    def _conv_param(self, rng, name, k_out, k_in, kh, kw):
        fan_in, fan_out = k_in * kh * kw, k_out * kh * kw
        w = self._register(f"{name}.w", _xavier(rng, (k_out, k_in, kh, kw), fan_in, fan_out))
        b = self._register(f"{name}.b", np.zeros(k_out))
        return w, b

    def _linear_param(self, rng, name, d_in, d_out):
        w = self._register(f"{name}.w", _xavier(rng, (d_in, d_out), d_in, d_out))
        b = self._register(f"{name}.b", np.zeros(d_out))
        return w, b

    def _build(self, rng):
        cfg = self.cfg
        self._conv_param(rng, "stem", cfg.stem_channels, cfg.in_channels, 3, 3)
        self._norm_param("stemnorm", cfg.stem_channels)
        self._build_stage(rng, "stage1", cfg.stem_channels, cfg.stage1_channels)
        self._build_stage(rng, "stage2", cfg.stage1_channels, cfg.stage2_channels)
        c = cfg.stage2_channels
        if cfg.attention:
            attn = init_attention_params(c, cfg.attention_kernel, rng)
            for name, t in attn.named().items():
                self.params[name] = t
            self.attn = attn
        else:
            self.attn = None
        d = c
        for layer in range(cfg.gru_layers):
            for direction in ("fwd", "bwd"):
                self._build_gru_cell(rng, f"gru{layer}.{direction}", d, cfg.gru_hidden)
            d = 2 * cfg.gru_hidden
        self._linear_param(rng, "head.seq", 2 * cfg.gru_hidden, cfg.n_classes)
        if cfg.kd_head:
            self._linear_param(rng, "head.frame", 2 * cfg.gru_hidden, cfg.n_classes)

    def _norm_param(self, name, channels):
        self._register(f"{name}.gamma", np.ones(channels))
        self._register(f"{name}.beta", np.zeros(channels))

    def _build_stage(self, rng, name, c_in, c_out):
        cfg = self.cfg
        self._conv_param(rng, f"{name}.conv1", c_out, c_in, 3, 3)
        self._norm_param(f"{name}.norm1", c_out)
        self._conv_param(rng, f"{name}.conv2", c_out, c_out, 3, 3)
        self._norm_param(f"{name}.norm2", c_out)
        hidden = c_out // cfg.se_reduction
        self._linear_param(rng, f"{name}.se.fc1", c_out, hidden)
        self._linear_param(rng, f"{name}.se.fc2", hidden, c_out)
        self._conv_param(rng, f"{name}.skip", c_out, c_in, 1, 1)
        self._norm_param(f"{name}.skipnorm", c_out)

    def _build_gru_cell(self, rng, name, d_in, hidden):
        # fused gate matrices, gate order [update z | reset r | candidate n]
        self._register(f"{name}.wx", _xavier(rng, (d_in, 3 * hidden), d_in, 3 * hidden))
        self._register(f"{name}.wh", _xavier(rng, (hidden, 3 * hidden), hidden, 3 * hidden))
        bias = np.zeros(3 * hidden)
        bias[:hidden] = 1.0  # update-gate bias: carry state early in training
        self._register(f"{name}.b", bias)

    # -- bookkeeping ---------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward pieces ---------------------------------------------------------

    def _norm(self, x: Tensor, name: str) -> Tensor:
        return instance_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])

    def _stage_forward(self, x: Tensor, name: str) -> Tensor:
        p = self.params
        main = T.relu(self._norm(T.conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
                                          stride=2, padding=1), f"{name}.norm1"))
        main = self._norm(T.conv2d(main, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"],
                                   stride=1, padding=1), f"{name}.norm2")
        skip = self._norm(T.conv2d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"],
                                   stride=2, padding=0), f"{name}.skipnorm")
        gated = se_block(main, p[f"{name}.se.fc1.w"], p[f"{name}.se.fc1.b"],
                         p[f"{name}.se.fc2.w"], p[f"{name}.se.fc2.b"], residual=skip)
        return T.relu(gated)

    def frontend_forward(self, clip: Tensor) -> Tensor:
        """(T, C_in, S, S) -> (T, C, S/8, S/8) per-frame feature maps."""
        if clip.ndim != 4 or clip.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (T, {self.cfg.in_channels}, S, S) clip, "
                             f"got {clip.shape}")
        p = self.params
        x = T.relu(self._norm(T.conv2d(clip, p["stem.w"], p["stem.b"],
                                       stride=2, padding=1), "stemnorm"))
        x = self._stage_forward(x, "stage1")
        x = self._stage_forward(x, "stage2")
        return x

    def gru_cell_step(self, name: str, x_t: Tensor, h_prev: Tensor) -> Tensor:
        """One recurrence step from the gate pre-activations of the input.

        z = sigmoid(x Wz + h Uz + bz), r likewise; the candidate applies the
        reset gate to the projected hidden contribution,
        n = tanh(x Wn + bn + r * (h Un)); new state h' = n + z * (h - n),
        i.e. the update gate z keeps the old state (its +1 bias at init makes
        early training carry state across time).
        """
        hidden = self.cfg.gru_hidden
        gates_x = T.add_rowvec(T.matmul(x_t, self.params[f"{name}.wx"]),
                               self.params[f"{name}.b"])
        return self._gru_update(name, gates_x, h_prev, hidden)

    def _gru_update(self, name: str, gates_x_row: Tensor, h_prev: Tensor,
                    hidden: int) -> Tensor:
        gates_h = T.matmul(h_prev, self.params[f"{name}.wh"])
        z = T.sigmoid(T.narrow(gates_x_row, 1, 0, hidden)
                      + T.narrow(gates_h, 1, 0, hidden))
        r = T.sigmoid(T.narrow(gates_x_row, 1, hidden, hidden)
                      + T.narrow(gates_h, 1, hidden, hidden))
        cand = T.tanh(T.narrow(gates_x_row, 1, 2 * hidden, hidden)
                      + r * T.narrow(gates_h, 1, 2 * hidden, hidden))
        return cand + z * (h_prev - cand)

    def _gru_direction(self, name: str, seq: Tensor, reverse: bool) -> Tensor:
        t = seq.shape[0]
        hidden = self.cfg.gru_hidden
        # project the whole sequence through Wx once; the recurrence only
        # needs the per-step rows
        gates_x = T.add_rowvec(T.matmul(seq, self.params[f"{name}.wx"]),
                               self.params[f"{name}.b"])
        h = T.constant(np.zeros((1, hidden)))
        steps = range(t - 1, -1, -1) if reverse else range(t)
        outputs: list[Tensor | None] = [None] * t
        for i in steps:
            h = self._gru_update(name, T.narrow(gates_x, 0, i, 1), h, hidden)
            outputs[i] = h
        return T.concat(outputs, axis=0)

    def bigru_forward(self, seq: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """(T, D) -> (T, 2H) through the stacked bidirectional layers."""
        if seq.shape[0] < 1:
            raise ValueError("empty sequence")
        x = seq
        for layer in range(self.cfg.gru_layers):
            fwd = self._gru_direction(f"gru{layer}.fwd", x, reverse=False)
            bwd = self._gru_direction(f"gru{layer}.bwd", x, reverse=True)
            x = T.concat([fwd, bwd], axis=1)
            if layer < self.cfg.gru_layers - 1:
                x = T.dropout(x, self.cfg.dropout, rng)
        return x

    def classify(self, seq_features: Tensor) -> tuple[Tensor, Tensor | None]:
        p = self.params
        pooled = T.mean_(seq_features, axis=0, keepdims=True)       # (1, 2H)
        seq_logits = T.add_rowvec(T.matmul(pooled, p["head.seq.w"]),
                                  p["head.seq.b"]).reshape(self.cfg.n_classes)
        frame_logits = None
        if self.cfg.kd_head:
            frame_logits = T.add_rowvec(T.matmul(seq_features, p["head.frame.w"]),
                                        p["head.frame.b"])
        return seq_logits, frame_logits

    def forward(self, clip: np.ndarray | Tensor,
                rng: np.random.Generator | None = None,
                suppress_frames=()) -> NetworkOutput:
        """Classify one clip of shape (T, C_in, S, S).

        ``rng`` drives dropout and is required only when training (the global
        evaluation flag makes dropout inert). ``suppress_frames`` zeroes the
        listed frames' attention maps and temporal scores.
        """
        x = clip if isinstance(clip, Tensor) else T.constant(clip)
        fmap = self.frontend_forward(x)
        bundle = None
        if self.cfg.attention:
            bundle = attention_forward(fmap, self.attn, suppress_frames)
            features = bundle.fused
        else:
            if suppress_frames:
                raise ValueError("frame suppression requires the attention block")
            features = T.avg_pool2d(fmap)
        features = T.dropout(features, self.cfg.dropout, rng)
        seq_features = self.bigru_forward(features, rng)
        seq_logits, frame_logits = self.classify(seq_features)
        return NetworkOutput(sequence_logits=seq_logits, frame_logits=frame_logits,
                             attention=bundle, features=features)


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(model: LipReader, directory: str | Path) -> None:
    """Directory of VSRT tensors plus a text manifest and the model config."""
    directory = Path(directory)
    (directory / "weights").mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    for name, t in model.params.items():
        vsrt.write(directory / "weights" / f"{name}.vsrt", t.data)
        manifest_lines.append(f"{name} {'x'.join(str(d) for d in t.shape)}")
    atomic_write_text(directory / "manifest.txt", "\n".join(manifest_lines) + "\n")
    atomic_write_text(directory / "config.txt", model.cfg.to_text())


def load_checkpoint(directory: str | Path) -> LipReader:
    directory = Path(directory)
    cfg = ModelConfig.from_text((directory / "config.txt").read_text())
    model = LipReader(cfg, seed=0)
    loaded = set()
    for line in (directory / "manifest.txt").read_text().splitlines():
        if not line.strip():
            continue
        name, _, shape_text = line.partition(" ")
        data = vsrt.read(directory / "weights" / f"{name}.vsrt")
        expected = tuple(int(d) for d in shape_text.split("x"))
        if data.shape != expected:
            raise ValueError(f"checkpoint tensor {name}: shape {data.shape} != manifest "
                             f"{expected}")
        if name not in model.params:
            raise ValueError(f"checkpoint tensor {name} not present in model")
        if model.params[name].shape != data.shape:
            raise ValueError(f"checkpoint tensor {name}: shape {data.shape} incompatible "
                             f"with config {model.params[name].shape}")
        model.params[name].data = data
        loaded.add(name)
    missing = set(model.params) - loaded
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    return model
