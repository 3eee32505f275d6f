"""Knowledge distillation from an audio teacher, at sequence and frame level.

The teacher is a small per-frame MLP over the paired audio stream whose
frame logits are mean-pooled into a sequence prediction. Its softened
posteriors are precomputed per clip and cached as VSRT tensors; the student
then minimizes

    tau^2 * KL( sharpen(teacher, tau) || softmax(student_logits / tau) )

per sequence, and the frame average of the same quantity for the per-frame
head. ``sharpen`` renormalizes ``teacher**(1/tau)``, so tau > 1 softens the
target the same way it softens the student.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from . import vsrt
from .tensor import Tensor

_EPS = 1e-12


@dataclass
class KDConfig:
    temperature: float = 2.0
    beta_seq: float = 1.0
    beta_frame: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.beta_seq < 0.0 or self.beta_frame < 0.0:
            raise ValueError("KD loss weights must be nonnegative")


@dataclass
class TeacherPosteriors:
    frame: np.ndarray   # (T, V), rows sum to 1
    sequence: np.ndarray  # (V,), sums to 1

    def validate(self) -> None:
        _check_distribution(self.sequence, "sequence posterior")
        for t in range(self.frame.shape[0]):
            _check_distribution(self.frame[t], f"frame posterior {t}")


def _check_distribution(p: np.ndarray, what: str) -> None:
    p = np.asarray(p)
    if p.ndim != 1:
        raise ValueError(f"{what}: expected a vector, got shape {p.shape}")
    if np.any(p < 0.0):
        raise ValueError(f"{what}: negative probabilities")
    if abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"{what}: sums to {p.sum()!r}, not 1")


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """sum p_i ln(p_i / q_i), with 0 ln 0 = 0 and q floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    mask = p > 0.0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], _EPS)))))


def sharpen(p: np.ndarray, temperature: float) -> np.ndarray:
    """Renormalized p**(1/tau); tau > 1 flattens, tau < 1 peaks."""
    p = np.asarray(p, dtype=np.float64)
    powed = p ** (1.0 / temperature)
    return powed / powed.sum(axis=-1, keepdims=True)


def _entropy_term(p: np.ndarray) -> float:
    """sum p ln p with the 0 ln 0 = 0 convention."""
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask])))


def sequence_kd_loss(student_logits: Tensor, teacher_seq: np.ndarray,
                     temperature: float) -> Tensor:
    """tau^2-scaled KL between the sharpened teacher and the tempered student."""
    if student_logits.ndim != 1:
        raise ValueError(f"expected 1-D student logits, got {student_logits.shape}")
    if student_logits.shape[0] != np.asarray(teacher_seq).shape[-1]:
        raise ValueError("student and teacher class counts differ")
    target = sharpen(teacher_seq, temperature)
    log_q = T.log_softmax(student_logits * (1.0 / temperature), axis=0)
    cross = -(T.constant(target) * log_q).sum()
    return (cross + _entropy_term(target)) * temperature ** 2


def frame_kd_loss(student_frame_logits: Tensor, teacher_frame: np.ndarray,
                  temperature: float) -> Tensor:
    """Mean over frames of the per-frame sequence KD loss (vectorized)."""
    teacher_frame = np.asarray(teacher_frame, dtype=np.float64)
    if student_frame_logits.ndim != 2:
        raise ValueError(f"expected (T, V) logits, got {student_frame_logits.shape}")
    if student_frame_logits.shape != teacher_frame.shape:
        raise ValueError(f"frame KD shape mismatch: student {student_frame_logits.shape}, "
                         f"teacher {teacher_frame.shape}")
    t = teacher_frame.shape[0]
    target = sharpen(teacher_frame, temperature)
    log_q = T.log_softmax(student_frame_logits * (1.0 / temperature), axis=1)
    cross = -(T.constant(target) * log_q).sum()
    return (cross + _entropy_term(target)) * (temperature ** 2 / t)


def combined_loss(ce: Tensor, seq_kd: Tensor | None, frame_kd: Tensor | None,
                  cfg: KDConfig) -> Tensor:
    """ce + beta_seq * seq_kd + beta_frame * frame_kd (missing terms skipped)."""
    total = ce
    if seq_kd is not None and cfg.beta_seq > 0.0:
        total = total + seq_kd * cfg.beta_seq
    if frame_kd is not None and cfg.beta_frame > 0.0:
        total = total + frame_kd * cfg.beta_frame
    return total


# -- the audio teacher -----------------------------------------------------------


@dataclass
class TeacherConfig:
    hidden: int = 32
    epochs: int = 20
    lr: float = 1e-2
    batch_size: int = 16


class AudioTeacher:
    """Per-frame MLP over audio features, mean-pooled into a word classifier."""

    def __init__(self, audio_dim: int, n_classes: int, hidden: int, seed: int):
        rng = np.random.default_rng([seed, 0xA0D10])
        b1 = np.sqrt(6.0 / (audio_dim + hidden))
        b2 = np.sqrt(6.0 / (hidden + n_classes))
        self.n_classes = n_classes
        self.params = {
            "w1": Tensor(rng.uniform(-b1, b1, (audio_dim, hidden)), requires_grad=True),
            "b1": Tensor(np.zeros(hidden), requires_grad=True),
            "w2": Tensor(rng.uniform(-b2, b2, (hidden, n_classes)), requires_grad=True),
            "b2": Tensor(np.zeros(n_classes), requires_grad=True),
        }

    def frame_logits(self, audio: np.ndarray) -> Tensor:
        x = T.constant(audio)
        h = T.relu(T.add_rowvec(T.matmul(x, self.params["w1"]), self.params["b1"]))
        return T.add_rowvec(T.matmul(h, self.params["w2"]), self.params["b2"])

    def sequence_logits(self, audio: np.ndarray) -> Tensor:
        return T.mean_(self.frame_logits(audio), axis=0)

    def posteriors(self, audio: np.ndarray) -> TeacherPosteriors:
        with T.no_grad():
            logits = self.frame_logits(audio)
            frame = T.softmax(logits, axis=1).data
            seq = T.softmax(T.mean_(logits, axis=0), axis=0).data
        return TeacherPosteriors(frame=frame, sequence=seq)


def train_teacher(audio_clips: list[tuple[str, np.ndarray, int]], n_classes: int,
                  cfg: TeacherConfig, seed: int = 0,
                  ) -> tuple[AudioTeacher, dict[str, TeacherPosteriors]]:
    """Fit the teacher on (clip_id, audio (T, A), label) triples.

    Returns the model and its posteriors for every provided clip; callers
    persist them with :func:`save_posterior_cache`.
    """
    if not audio_clips:
        raise ValueError("cannot train a teacher without audio clips")
    audio_dim = audio_clips[0][1].shape[1]
    teacher = AudioTeacher(audio_dim, n_classes, cfg.hidden, seed)
    rng = np.random.default_rng([seed, 0x7EAC4])
    # plain Adam on the four parameter tensors
    state = {name: (np.zeros_like(t.data), np.zeros_like(t.data))
             for name, t in teacher.params.items()}
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(audio_clips))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            loss = None
            for idx in batch:
                _, audio, label = audio_clips[int(idx)]
                logits = teacher.sequence_logits(audio)
                onehot = np.zeros(n_classes)
                onehot[label] = 1.0
                sample = -(T.constant(onehot) * T.log_softmax(logits, axis=0)).sum()
                loss = sample if loss is None else loss + sample
            loss = loss * (1.0 / len(batch))
            for t in teacher.params.values():
                t.grad = None
            loss.backward()
            step += 1
            for name, t in teacher.params.items():
                if t.grad is None:
                    continue
                m, v = state[name]
                m[:] = 0.9 * m + 0.1 * t.grad
                v[:] = 0.999 * v + 0.001 * t.grad ** 2
                m_hat = m / (1.0 - 0.9 ** step)
                v_hat = v / (1.0 - 0.999 ** step)
                t.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    cache = {clip_id: teacher.posteriors(audio) for clip_id, audio, _ in audio_clips}
    return teacher, cache


# -- posterior cache on disk ------------------------------------------------------

def save_posterior_cache(cache: dict[str, TeacherPosteriors],
                         directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for clip_id in sorted(cache):
        post = cache[clip_id]
        vsrt.write(directory / f"{clip_id}.frame.vsrt", post.frame)
        vsrt.write(directory / f"{clip_id}.seq.vsrt", post.sequence)


def load_posterior_cache(directory: str | Path) -> dict[str, TeacherPosteriors]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"teacher posterior cache not found: {directory}")
    cache = {}
    for frame_path in sorted(directory.glob("*.frame.vsrt")):
        clip_id = frame_path.name[:-len(".frame.vsrt")]
        post = TeacherPosteriors(
            frame=vsrt.read(frame_path),
            sequence=vsrt.read(directory / f"{clip_id}.seq.vsrt"),
        )
        post.validate()
        cache[clip_id] = post
    if not cache:
        raise FileNotFoundError(f"no cached posteriors in {directory}")
    return cache
