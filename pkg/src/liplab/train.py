"""Training loop, schedule, optimizer, evaluation, and the ablation harness.

Five variants cover the ablation grid: ``baseline`` (word boundary, mixup,
label smoothing), ``kd`` (+ audio distillation), ``attention`` (+ the
spatio-temporal block), ``alignment`` (+ landmark de-orientation in
preprocessing), and ``integrated`` (all three). Training is deterministic
for a fixed (config, seed): every random draw comes from generators spawned
off the seed, batches reduce in a fixed order, and the metrics CSV keeps
wall-clock timing out of the file (timings go to the console) so two
identical runs produce identical bytes.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import mixup, mixup_loss
from .data import Corpus, VideoClip
from .fileio import atomic_write_text
from .distill import KDConfig, TeacherPosteriors, combined_loss, frame_kd_loss, \
    sequence_kd_loss
from .geometry import NeutralTemplate, align_lips, append_word_boundary, resize_crop
from .network import LipReader, ModelConfig, save_checkpoint
from .tensor import Tensor

VARIANTS = ("baseline", "kd", "attention", "alignment", "integrated")

VARIANT_LABELS = {
    "baseline": "Baseline",
    "kd": "Baseline + KD",
    "attention": "Baseline + Attention",
    "alignment": "Baseline + Alignment",
    "integrated": "Baseline + KD + Alignment + Attention",
}


def variant_flags(variant: str) -> dict[str, bool]:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return {
        "kd": variant in ("kd", "integrated"),
        "attention": variant in ("attention", "integrated"),
        "alignment": variant in ("alignment", "integrated"),
    }


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr0: float = 3e-4
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    variant: str = "baseline"
    mixup_alpha: float = 0.2
    label_smoothing: float = 0.1
    crop_size: int = 24
    train_fraction: float = 1.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        # lr0 == lr_min (e.g. both 0) is allowed: constant schedule
        if not self.lr0 >= self.lr_min >= 0.0:
            raise ValueError("need lr0 >= lr_min >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must be in (0, 1]")


@dataclass
class MetricsRow:
    variant: str
    epoch: int
    train_loss: float
    val_top1: float
    seconds: float


def cosine_lr(step: int, total: int, lr0: float, lr_min: float = 0.0) -> float:
    """Half-cosine decay from lr0 at step 0 to lr_min at step == total."""
    if step < 0 or step > total:
        raise ValueError(f"step {step} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total))


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction over a named parameter registry."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float) -> None:
        self.step_count += 1
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"NaN/Inf gradient in parameter {name!r}")
            m, v = self.m[name], self.v[name]
            m[:] = self.beta1 * m + (1.0 - self.beta1) * g
            v[:] = self.beta2 * v + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.step_count)
            v_hat = v / (1.0 - self.beta2 ** self.step_count)
            t.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


# -- preprocessing glue ---------------------------------------------------------


@dataclass
class PreparedClip:
    clip_id: str
    label: int
    frames: np.ndarray    # (T, G, G), aligned when the variant asks for it
    boundary_start: int
    boundary_end: int


def prepare_clips(clips: list[VideoClip], align: bool) -> list[PreparedClip]:
    """Per-clip work that does not change across epochs (alignment)."""
    prepared = []
    for clip in clips:
        frames = clip.frames
        if align:
            size = frames.shape[1]
            template = NeutralTemplate.default(size)
            frames = np.stack([
                align_lips(frames[t], clip.landmarks[t], template, size)
                for t in range(frames.shape[0])
            ])
        prepared.append(PreparedClip(clip_id=clip.clip_id, label=clip.label,
                                     frames=frames,
                                     boundary_start=clip.boundary.start,
                                     boundary_end=clip.boundary.end))
    return prepared


def clip_input(prepared: PreparedClip, crop: int, mode: str,
               rng: np.random.Generator | None, word_boundary: bool) -> np.ndarray:
    """(T, G, G) frames -> (T, C, crop, crop) network input."""
    from .geometry import BoundaryInterval

    cropped = resize_crop(prepared.frames, crop, mode=mode, rng=rng)
    features = cropped[:, None, :, :]
    if word_boundary:
        interval = BoundaryInterval(prepared.boundary_start, prepared.boundary_end)
        features = append_word_boundary(features, interval)
    return features


def subsample_train(clips: list[VideoClip], fraction: float) -> list[VideoClip]:
    """Stable per-class prefix subsample (seed-independent, so seeds stay paired)."""
    if fraction >= 1.0:
        return list(clips)
    by_class: dict[int, list[VideoClip]] = {}
    for clip in clips:
        by_class.setdefault(clip.label, []).append(clip)
    kept = []
    for label in sorted(by_class):
        group = by_class[label]
        take = max(1, int(round(len(group) * fraction)))
        kept.extend(group[:take])
    return kept


# -- training -----------------------------------------------------------------------


def build_model(corpus: Corpus, cfg: TrainConfig,
                model_overrides: dict | None = None) -> LipReader:
    flags = variant_flags(cfg.variant)
    overrides = dict(model_overrides or {})
    mc = ModelConfig(
        n_classes=corpus.manifest.classes,
        frames=corpus.manifest.frames,
        frame_size=cfg.crop_size,
        attention=flags["attention"],
        kd_head=flags["kd"],
        **overrides,
    )
    return LipReader(mc, seed=cfg.seed)


def train(model: LipReader, corpus: Corpus, cfg: TrainConfig,
          kd_cfg: KDConfig | None = None,
          teacher_cache: dict[str, TeacherPosteriors] | None = None,
          out_dir: str | Path | None = None,
          log=None) -> list[MetricsRow]:
    """Run the full loop; returns one MetricsRow per epoch.

    When the variant distills, ``teacher_cache`` must cover every training
    clip. A checkpoint and the metrics CSV are written under ``out_dir``
    when given.
    """
    flags = variant_flags(cfg.variant)
    if flags["kd"]:
        if teacher_cache is None:
            raise TrainingError(f"variant {cfg.variant!r} needs a teacher posterior cache")
        kd_cfg = kd_cfg or KDConfig()

    train_clips = subsample_train(corpus.splits["train"], cfg.train_fraction)
    if not train_clips:
        raise TrainingError("empty training split")
    if flags["kd"]:
        missing = [c.clip_id for c in train_clips if c.clip_id not in teacher_cache]
        if missing:
            raise TrainingError(f"teacher cache is missing {len(missing)} clips "
                                f"(first: {missing[0]})")

    train_set = prepare_clips(train_clips, flags["alignment"])
    val_set = prepare_clips(corpus.splits["val"], flags["alignment"])

    seeds = np.random.SeedSequence([cfg.seed, 0x17A1]).spawn(3)
    shuffle_rng = np.random.default_rng(seeds[0])
    crop_rng = np.random.default_rng(seeds[1])
    aug_rng = np.random.default_rng(seeds[2])

    optimizer = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    steps_per_epoch = (len(train_set) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    global_step = 0

    metrics: list[MetricsRow] = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        n_samples = 0
        for lo in range(0, len(order), cfg.batch_size):
            batch_idx = [int(i) for i in order[lo:lo + cfg.batch_size]]
            inputs = [clip_input(train_set[i], cfg.crop_size, "random", crop_rng, True)
                      for i in batch_idx]
            labels = [train_set[i].label for i in batch_idx]
            ids = [train_set[i].clip_id for i in batch_idx]

            # mixup_alpha <= 0 disables mixing entirely (the overfit tests)
            use_mixup = cfg.mixup_alpha > 0.0
            if use_mixup:
                perm = aug_rng.permutation(len(batch_idx))
                lam = float(aug_rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
            else:
                perm = np.arange(len(batch_idx))
                lam = 1.0
            lr = cosine_lr(global_step, total_steps, cfg.lr0, cfg.lr_min)

            optimizer.zero_grad()
            batch_loss = 0.0
            for i in range(len(batch_idx)):
                j = int(perm[i])
                mixed = mixup(inputs[i], inputs[j], labels[i], labels[j],
                              max(cfg.mixup_alpha, 1.0), aug_rng, lam=lam)
                out = model.forward(mixed.x_mixed, rng=aug_rng)
                ce = mixup_loss(out.sequence_logits, mixed.y_a, mixed.y_b,
                                mixed.lam, cfg.label_smoothing)
                if flags["kd"]:
                    post_a = teacher_cache[ids[i]]
                    post_b = teacher_cache[ids[j]]
                    seq_kd = _paired_kd(sequence_kd_loss, out.sequence_logits,
                                        post_a.sequence, post_b.sequence,
                                        lam, kd_cfg.temperature)
                    frame_kd = _paired_kd(frame_kd_loss, out.frame_logits,
                                          post_a.frame, post_b.frame,
                                          lam, kd_cfg.temperature)
                    loss = combined_loss(ce, seq_kd, frame_kd, kd_cfg)
                else:
                    loss = ce
                batch_loss += loss.item()
                (loss * (1.0 / len(batch_idx))).backward()
            optimizer.step(lr)
            global_step += 1
            epoch_loss += batch_loss
            n_samples += len(batch_idx)

        val_top1 = evaluate(model, val_set, cfg.crop_size)
        seconds = time.perf_counter() - start
        row = MetricsRow(variant=cfg.variant, epoch=epoch,
                         train_loss=epoch_loss / n_samples,
                         val_top1=val_top1, seconds=seconds)
        metrics.append(row)
        if log is not None:
            log(f"[{cfg.variant}] epoch {epoch:3d}  loss {row.train_loss:.4f}  "
                f"val {row.val_top1:6.2f}%  ({seconds:.1f}s)")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out_dir / "checkpoint")
        # eval must reproduce the run's preprocessing, so keep the variant tag
        atomic_write_text(out_dir / "checkpoint" / "variant.txt", cfg.variant + "\n")
        write_metrics_csv(out_dir / "metrics.csv", metrics)
    return metrics


def _paired_kd(loss_fn, logits, target_a, target_b, lam: float, temperature: float):
    """Mixup-consistent distillation: blend the per-parent KD losses by lambda."""
    loss = loss_fn(logits, target_a, temperature) * lam
    if lam < 1.0:
        loss = loss + loss_fn(logits, target_b, temperature) * (1.0 - lam)
    return loss


def evaluate(model: LipReader, prepared: list[PreparedClip], crop: int) -> float:
    """Top-1 accuracy percent: center crop, dropout off, deterministic."""
    if not prepared:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    with T.evaluating(), T.no_grad():
        for clip in prepared:
            x = clip_input(clip, crop, "center", None, True)
            out = model.forward(x)
            if int(np.argmax(out.sequence_logits.data)) == clip.label:
                correct += 1
    return 100.0 * correct / len(prepared)


def evaluate_corpus(model: LipReader, corpus: Corpus, cfg: TrainConfig,
                    split: str = "val") -> float:
    prepared = prepare_clips(corpus.splits[split], variant_flags(cfg.variant)["alignment"])
    return evaluate(model, prepared, cfg.crop_size)


# -- metrics CSV ---------------------------------------------------------------------


def write_metrics_csv(path: str | Path, rows: list[MetricsRow]) -> None:
    """Deterministic metrics file.

    The ``seconds`` column is written as 0.000: keeping measured wall-clock
    out of the artifact is what makes two identical runs byte-identical.
    Timings are printed to the console instead.
    """
    lines = ["variant,epoch,train_loss,val_top1,seconds"]
    for row in rows:
        lines.append(f"{row.variant},{row.epoch},{row.train_loss:.12g},"
                     f"{row.val_top1:.12g},0.000")
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- ablation harness ---------------------------------------------------------------


def ablation_run(corpus: Corpus, base_cfg: TrainConfig,
                 teacher_cache: dict[str, TeacherPosteriors] | None,
                 kd_cfg: KDConfig | None = None,
                 out_csv: str | Path | None = None,
                 log=None, model_overrides: dict | None = None) -> list[MetricsRow]:
    """Train the five standard variants with a shared seed; summary per variant.

    Rows come out in the fixed table order (baseline, kd, attention,
    alignment, integrated). KD variants demand the teacher cache up front.
    """
    rows = []
    for variant in VARIANTS:
        cfg = replace(base_cfg, variant=variant)
        if variant_flags(variant)["kd"] and teacher_cache is None:
            raise TrainingError(f"ablation variant {variant!r} requested without a "
                                "teacher posterior cache")
        model = build_model(corpus, cfg, model_overrides)
        history = train(model, corpus, cfg, kd_cfg=kd_cfg,
                        teacher_cache=teacher_cache, log=log)
        final = history[-1]
        rows.append(MetricsRow(variant=VARIANT_LABELS[variant], epoch=final.epoch,
                               train_loss=final.train_loss, val_top1=final.val_top1,
                               seconds=final.seconds))
    if out_csv is not None:
        write_metrics_csv(out_csv, rows)
    return rows
