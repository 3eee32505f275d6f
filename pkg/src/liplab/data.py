"""Synthetic word-classification video corpus with landmarks and paired audio.

Every clip is rendered from a continuous scene defined in neutral (face)
coordinates: a face plate with eye/nose marks, a class-specific bright blob
that traces the class's trajectory around the mouth during the word
interval, static speckle texture on the non-word frames, and optional
high-frequency checker distractors. A per-clip pose (rotation, shift,
uniform scale) is applied by sampling the scene through the inverse pose,
so the rendered pixels and the emitted landmark anchors agree exactly.

The paired audio stream is a per-class random signature pattern plus noise,
deliberately easy to classify: it is the teacher modality.

On disk: ``<root>/manifest.json``, and per clip
``<split>/<clip_id>.frames.vsrt``, ``.landmarks.txt``, ``.audio.vsrt``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import vsrt
from .fileio import atomic_write_text
from .geometry import (AffineTransform, BoundaryInterval, LandmarkSet,
                       NeutralTemplate, read_landmarks, write_landmarks)

ANCHOR_INDICES = (36, 45, 30)  # left eye center, right eye center, nose tip


@dataclass
class GeneratorConfig:
    classes: int = 10
    frames: int = 12
    gen_size: int = 28
    audio_dim: int = 8
    train_per_class: int = 20
    val_per_class: int = 10
    test_per_class: int = 10
    pose_rot_deg: float = 0.0
    pose_shift: float = 0.0
    pose_scale: float = 0.0     # scale drawn from [1 - x, 1 + x]
    noise_sigma: float = 0.02
    distractor_level: float = 0.0
    audio_noise: float = 0.1
    seed: int = 0


@dataclass
class Pose:
    rotation_deg: float = 0.0
    shift: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def validate(self) -> None:
        if abs(self.rotation_deg) > 45.0:
            raise ValueError(f"pose rotation {self.rotation_deg} exceeds 45 degrees")
        if self.scale <= 0.0:
            raise ValueError("pose scale must be positive")

    def transform(self, size: int) -> AffineTransform:
        """Rotation and scale about the canvas center, then the shift."""
        self.validate()
        center = (size - 1) / 2.0
        theta = np.deg2rad(self.rotation_deg)
        cos_t, sin_t = np.cos(theta) * self.scale, np.sin(theta) * self.scale
        lin = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
        offset = np.array([center + self.shift[0], center + self.shift[1]])
        trans = offset - lin @ np.array([center, center])
        return AffineTransform(np.column_stack([lin, trans]))

    def is_identity(self) -> bool:
        return (self.rotation_deg == 0.0 and self.shift == (0.0, 0.0)
                and self.scale == 1.0)


@dataclass
class VideoClip:
    clip_id: str
    frames: np.ndarray                 # (T, H, W) in [0, 1]
    label: int
    boundary: BoundaryInterval
    landmarks: list[LandmarkSet]       # one per frame
    audio: np.ndarray                  # (T, A)


@dataclass
class DatasetManifest:
    version: int
    classes: int
    frames: int
    height: int
    width: int
    audio_dim: int
    seed: int
    splits: dict[str, list[dict]]      # split -> [{"clip_id", "label"}, ...]

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "classes": self.classes,
            "frames": self.frames,
            "height": self.height,
            "width": self.width,
            "audio_dim": self.audio_dim,
            "seed": self.seed,
            "splits": self.splits,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(version=raw["version"], classes=raw["classes"], frames=raw["frames"],
                   height=raw["height"], width=raw["width"], audio_dim=raw["audio_dim"],
                   seed=raw["seed"], splits=raw["splits"])


@dataclass
class Corpus:
    root: Path
    manifest: DatasetManifest
    splits: dict[str, list[VideoClip]]


def clip_seed(corpus_seed: int, clip_id: str) -> list[int]:
    """Stable per-clip seed material (sha256; Python's hash() is salted)."""
    digest = hashlib.sha256(f"{corpus_seed}:{clip_id}".encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


# -- scene definition -----------------------------------------------------------

def _gauss(dx, dy, sigma):
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def class_trajectory(class_id: int, n_classes: int, u: float, size: int) -> tuple[float, float]:
    """Position of the word blob at progress u in [0, 1].

    Classes differ in starting phase, sweep direction, and orbit radius, so
    trajectories stay pairwise distinct on the canvas.
    """
    phase = 2.0 * np.pi * class_id / n_classes
    direction = 1.0 if class_id % 2 == 0 else -1.0
    radius_scale = 0.75 + 0.25 * (class_id % 3)
    angle = phase + direction * np.pi * u
    cx = 0.50 * size + 0.16 * size * radius_scale * np.cos(angle)
    cy = 0.78 * size + 0.10 * size * radius_scale * np.sin(angle)
    return cx, cy


AMP_LEVELS = (0.20, 0.45, 0.70)


def class_blobs(class_id: int, n_classes: int, u: float, size: int
                ) -> list[tuple[float, float, float, float]]:
    """Blob set drawn at word progress u: list of (x, y, amplitude, sigma).

    Blob position alone would vanish under the frontend's global average
    pooling and the time axis is averaged away behind the recurrence, so
    every class is a unique (blob count, blob size, brightness) triple: a
    code that survives both spatial pooling and time pooling. The blobs
    still orbit the mouth so there is genuine motion for the attention
    block to exploit. Loudness matters: at the pinned learning rate the
    optimizer moves each weight very little, so the classes have to be
    separable from (nearly) random features.
    """
    count = 1 + class_id % 2
    sigma = (0.080 + 0.050 * ((class_id // 2) % 2)) * size
    amp = AMP_LEVELS[(class_id // 4) % 3]
    base_x, base_y = class_trajectory(class_id, n_classes, u, size)
    center_x, center_y = 0.50 * size, 0.72 * size
    off_x, off_y = base_x - 0.50 * size, base_y - 0.78 * size
    blobs = []
    for j in range(count):
        rot = 2.0 * np.pi * j / count
        cos_r, sin_r = np.cos(rot), np.sin(rot)
        dx = cos_r * off_x - sin_r * off_y
        dy = sin_r * off_x + cos_r * off_y
        blobs.append((float(center_x + dx), float(center_y + 0.6 * dy), amp, sigma))
    return blobs


def _render_scene(xn: np.ndarray, yn: np.ndarray, size: int, class_id: int,
                  n_classes: int, in_word: bool, u: float,
                  speckles: list[tuple[float, float, float]],
                  distractors: list[tuple[float, float, float]]) -> np.ndarray:
    s = float(size)
    value = np.full(xn.shape, 0.10)
    # face plate
    d = np.sqrt(((xn - 0.50 * s) / (0.38 * s)) ** 2 + ((yn - 0.55 * s) / (0.46 * s)) ** 2)
    value += 0.22 / (1.0 + np.exp(-(1.0 - d) * 8.0))
    # eye and nose marks (dark)
    for mx, my, sig, amp in ((0.30 * s, 0.35 * s, 0.035 * s, 0.28),
                             (0.70 * s, 0.35 * s, 0.035 * s, 0.28),
                             (0.50 * s, 0.60 * s, 0.030 * s, 0.22)):
        value -= amp * _gauss(xn - mx, yn - my, sig)
    if in_word:
        for bx, by, amp, sigma in class_blobs(class_id, n_classes, u, size):
            value += amp * _gauss(xn - bx, yn - by, sigma)
    else:
        for px, py, amp in speckles:
            value += amp * _gauss(xn - px, yn - py, 0.04 * s)
    for px, py, amp in distractors:
        # checker-modulated patches with a DC part: the mean shift corrupts
        # pooled intensity statistics, while the high-frequency texture makes
        # them separable from the smooth word blobs for a learned gate
        patch = _gauss(xn - px, yn - py, 0.07 * s)
        checker = np.cos(2.0 * np.pi * (xn - px) / 2.4) * np.cos(2.0 * np.pi * (yn - py) / 2.4)
        value += amp * patch * (0.6 + 0.4 * checker)
    return value


def neutral_landmarks(size: int) -> np.ndarray:
    """Deterministic 68-point neutral face; anchors sit exactly on the template."""
    s = float(size)
    pts = np.zeros((68, 2))
    # jaw line (0-16): lower arc of the face oval
    jaw_angles = np.linspace(np.deg2rad(160.0), np.deg2rad(380.0), 17)
    pts[0:17, 0] = 0.50 * s + 0.40 * s * np.cos(jaw_angles)
    pts[0:17, 1] = 0.55 * s + 0.46 * s * np.sin(jaw_angles)
    # brows (17-26)
    lb = np.linspace(0.18 * s, 0.42 * s, 5)
    rb = np.linspace(0.58 * s, 0.82 * s, 5)
    dip = 0.02 * s * np.array([0.0, -0.6, -1.0, -0.6, 0.0])
    pts[17:22] = np.column_stack([lb, 0.27 * s + dip])
    pts[22:27] = np.column_stack([rb, 0.27 * s + dip])
    # nose bridge and base (27-35); 30 is the tip anchor
    pts[27:30] = np.column_stack([np.full(3, 0.50 * s),
                                  np.linspace(0.40 * s, 0.54 * s, 3)])
    pts[30] = (0.50 * s, 0.60 * s)
    base = np.linspace(0.44 * s, 0.56 * s, 5)
    pts[31:36] = np.column_stack([base, np.full(5, 0.645 * s)])
    # eyes (36-47); 36 and 45 are the eye-center anchors
    def eye(center_x):
        hexagon = np.array([(-0.05, 0.0), (-0.025, -0.02), (0.025, -0.02),
                            (0.05, 0.0), (0.025, 0.02), (-0.025, 0.02)]) * s
        return hexagon + np.array([center_x, 0.35 * s])
    pts[36] = (0.30 * s, 0.35 * s)
    pts[37:42] = eye(0.30 * s)[1:]
    right = eye(0.70 * s)
    pts[42:45] = right[:3]
    pts[45] = (0.70 * s, 0.35 * s)
    pts[46:48] = right[4:]
    # mouth (48-67)
    mouth_angles = np.linspace(0.0, 2.0 * np.pi, 20, endpoint=False)
    pts[48:68, 0] = 0.50 * s + 0.14 * s * np.cos(mouth_angles)
    pts[48:68, 1] = 0.78 * s + 0.06 * s * np.sin(mouth_angles)
    return pts


def audio_signature(cfg: GeneratorConfig, class_id: int) -> np.ndarray:
    """Per-class (T, A) audio pattern, fixed by the corpus seed."""
    rng = np.random.default_rng([cfg.seed, 0x5167, class_id])
    return rng.uniform(-1.0, 1.0, (cfg.frames, cfg.audio_dim))


def generate_clip(cfg: GeneratorConfig, class_id: int, pose: Pose,
                  clip_id: str, seed_material: list[int] | int) -> VideoClip:
    """Render one clip deterministically from (class, pose, seed)."""
    if not 0 <= class_id < cfg.classes:
        raise ValueError(f"class id {class_id} out of range for {cfg.classes} classes")
    pose.validate()
    rng = np.random.default_rng(seed_material)
    size = cfg.gen_size
    boundary = BoundaryInterval.centered(cfg.frames)

    # clip-static speckle texture for the non-word frames
    speckles = [(float(rng.uniform(0.2 * size, 0.8 * size)),
                 float(rng.uniform(0.25 * size, 0.85 * size)),
                 float(rng.choice([-0.10, 0.10])))
                for _ in range(4)]

    transform = pose.transform(size)
    inverse = transform.inverse()
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    xn = inverse.m[0, 0] * xs + inverse.m[0, 1] * ys + inverse.m[0, 2]
    yn = inverse.m[1, 0] * xs + inverse.m[1, 1] * ys + inverse.m[1, 2]

    frames = np.empty((cfg.frames, size, size))
    word_len = boundary.end - boundary.start
    for t in range(cfg.frames):
        distractors = []
        if cfg.distractor_level > 0.0:
            for _ in range(3):
                distractors.append((float(rng.uniform(0.1 * size, 0.9 * size)),
                                    float(rng.uniform(0.1 * size, 0.9 * size)),
                                    float(rng.choice([-1.0, 1.0]) * cfg.distractor_level)))
        in_word = boundary.start <= t <= boundary.end
        u = (t - boundary.start) / word_len if word_len > 0 else 0.0
        frames[t] = _render_scene(xn, yn, size, class_id, cfg.classes,
                                  in_word, u, speckles, distractors)
    if cfg.noise_sigma > 0.0:
        frames = frames + cfg.noise_sigma * rng.standard_normal(frames.shape)
    frames = np.clip(frames, 0.0, 1.0)

    posed_points = transform.apply(neutral_landmarks(size))
    landmarks = [LandmarkSet(posed_points.copy(), ANCHOR_INDICES)
                 for _ in range(cfg.frames)]

    audio = audio_signature(cfg, class_id)
    if cfg.audio_noise > 0.0:
        audio = audio + cfg.audio_noise * rng.standard_normal(audio.shape)

    return VideoClip(clip_id=clip_id, frames=frames, label=class_id,
                     boundary=boundary, landmarks=landmarks, audio=audio)


def sample_pose(cfg: GeneratorConfig, rng: np.random.Generator) -> Pose:
    if cfg.pose_rot_deg == 0.0 and cfg.pose_shift == 0.0 and cfg.pose_scale == 0.0:
        return Pose()
    return Pose(
        rotation_deg=float(rng.uniform(-cfg.pose_rot_deg, cfg.pose_rot_deg)),
        shift=(float(rng.uniform(-cfg.pose_shift, cfg.pose_shift)),
               float(rng.uniform(-cfg.pose_shift, cfg.pose_shift))),
        scale=float(rng.uniform(1.0 - cfg.pose_scale, 1.0 + cfg.pose_scale)),
    )


def generate_dataset(cfg: GeneratorConfig, root: str | Path) -> DatasetManifest:
    """Write the full corpus; same config and seed give identical bytes."""
    root = Path(root)
    counts = {"train": cfg.train_per_class, "val": cfg.val_per_class,
              "test": cfg.test_per_class}
    splits: dict[str, list[dict]] = {}
    for split, per_class in counts.items():
        if per_class < 1:
            raise ValueError(f"{split}: per-class count must be >= 1")
        split_dir = root / split
        split_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for class_id in range(cfg.classes):
            for idx in range(per_class):
                cid = f"{split}_{class_id:03d}_{idx:04d}"
                material = clip_seed(cfg.seed, cid)
                pose = sample_pose(cfg, np.random.default_rng(material + [1]))
                clip = generate_clip(cfg, class_id, pose, cid, material)
                vsrt.write(split_dir / f"{cid}.frames.vsrt", clip.frames)
                vsrt.write(split_dir / f"{cid}.audio.vsrt", clip.audio)
                write_landmarks(split_dir / f"{cid}.landmarks.txt", clip.landmarks)
                entries.append({"clip_id": cid, "label": class_id})
        splits[split] = entries
    manifest = DatasetManifest(version=1, classes=cfg.classes, frames=cfg.frames,
                               height=cfg.gen_size, width=cfg.gen_size,
                               audio_dim=cfg.audio_dim, seed=cfg.seed, splits=splits)
    atomic_write_text(root / "manifest.json", manifest.to_json())
    return manifest


def load_dataset(root: str | Path) -> Corpus:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json under {root}")
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    boundary = BoundaryInterval.centered(manifest.frames)
    splits: dict[str, list[VideoClip]] = {}
    for split, entries in manifest.splits.items():
        clips = []
        for entry in entries:
            cid = entry["clip_id"]
            base = root / split / cid
            frames = vsrt.read(base.parent / f"{cid}.frames.vsrt")
            audio = vsrt.read(base.parent / f"{cid}.audio.vsrt")
            landmarks = read_landmarks(base.parent / f"{cid}.landmarks.txt",
                                       ANCHOR_INDICES)
            clips.append(VideoClip(clip_id=cid, frames=frames, label=entry["label"],
                                   boundary=boundary, landmarks=landmarks, audio=audio))
        splits[split] = clips
    return Corpus(root=root, manifest=manifest, splits=splits)


# -- oracles -----------------------------------------------------------------------

def class_template_clip(cfg: GeneratorConfig, class_id: int) -> np.ndarray:
    """Noiseless, zero-pose, texture-free rendering of a class.

    Clips carry clip-specific speckle on their non-word frames; the template
    omits it, which penalizes every class equally in the matcher below and
    leaves the decision to the word frames.
    """
    size = cfg.gen_size
    boundary = BoundaryInterval.centered(cfg.frames)
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    frames = np.empty((cfg.frames, size, size))
    word_len = boundary.end - boundary.start
    for t in range(cfg.frames):
        in_word = boundary.start <= t <= boundary.end
        u = (t - boundary.start) / word_len if word_len > 0 else 0.0
        frames[t] = _render_scene(xs, ys, size, class_id, cfg.classes,
                                  in_word, u, [], [])
    return np.clip(frames, 0.0, 1.0)


def nearest_template_classify(frames: np.ndarray,
                              templates: list[np.ndarray]) -> int:
    """Brute-force matcher: argmin over classes of the L2 distance."""
    dists = [float(np.sum((frames - tpl) ** 2)) for tpl in templates]
    return int(np.argmin(dists))
