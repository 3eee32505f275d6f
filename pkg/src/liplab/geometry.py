"""Landmark-based lip alignment and frame preprocessing.

Alignment estimates the affine transform that carries the three anchor
landmarks (left eye, right eye, nose) onto a neutral template and warps the
frame with it, cancelling head pose so the model sees lip motion only.

Warp convention, locked by the tests: ``warp_affine(image, t)`` writes
``output(p) = bilinear_sample(input, t^{-1}(p))`` with zero padding outside
the source. Pixel centers sit on integer coordinates, x along columns and
y along rows. Resizing maps corner pixel centers onto corner pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes, atomic_write_text


class CollinearAnchors(ValueError):
    """The three anchor points are (numerically) collinear."""


class NonInvertibleTransform(ValueError):
    """The affine transform's linear part is singular."""


@dataclass(frozen=True)
class AffineTransform:
    """2x3 matrix mapping homogeneous (x, y, 1) to (x', y')."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (2, 3):
            raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (N, 2) array of (x, y) points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.m[:, :2].T + self.m[:, 2]

    def det(self) -> float:
        a, b = self.m[0, 0], self.m[0, 1]
        c, d = self.m[1, 0], self.m[1, 1]
        return a * d - b * c

    def inverse(self) -> "AffineTransform":
        det = self.det()
        if abs(det) < 1e-12:
            raise NonInvertibleTransform(f"determinant {det:.3e} too close to zero")
        a, b, tx = self.m[0]
        c, d, ty = self.m[1]
        inv_lin = np.array([[d, -b], [-c, a]]) / det
        inv_t = -inv_lin @ np.array([tx, ty])
        return AffineTransform(np.column_stack([inv_lin, inv_t]))


@dataclass
class LandmarkSet:
    """68 facial landmark points with the indices of the 3 alignment anchors."""

    points: np.ndarray
    anchor_indices: tuple[int, int, int] = (36, 45, 30)  # left eye, right eye, nose

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 2):
            raise ValueError(f"landmark set must be 68x2, got {pts.shape}")
        self.points = pts

    def anchors(self) -> np.ndarray:
        return self.points[list(self.anchor_indices)]


@dataclass(frozen=True)
class NeutralTemplate:
    """Target anchor coordinates in the output frame, pixel units."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (3, 2):
            raise ValueError(f"template must be 3x2, got {pts.shape}")
        if triangle_area(pts) < 1e-9:
            raise CollinearAnchors("neutral template anchors are collinear")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls, out_size: int) -> "NeutralTemplate":
        # symmetric, face-plausible defaults: eyes on one row, nose below center
        s = float(out_size)
        return cls(np.array([
            [0.30 * s, 0.35 * s],
            [0.70 * s, 0.35 * s],
            [0.50 * s, 0.60 * s],
        ]))


@dataclass(frozen=True)
class BoundaryInterval:
    """Inclusive [start, end] frame range containing the spoken word."""

    start: int
    end: int

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid boundary interval [{self.start}, {self.end}]")

    def validate(self, n_frames: int) -> None:
        if self.end >= n_frames:
            raise ValueError(f"boundary end {self.end} out of range for {n_frames} frames")

    @classmethod
    def centered(cls, n_frames: int, length: int | None = None) -> "BoundaryInterval":
        """Word-at-the-middle interval; default length is ceil(T/2)."""
        if length is None:
            length = (n_frames + 1) // 2
        if not 1 <= length <= n_frames:
            raise ValueError(f"word length {length} does not fit in {n_frames} frames")
        start = (n_frames - length) // 2
        return cls(start, start + length - 1)


def triangle_area(points: np.ndarray) -> float:
    p = np.asarray(points, dtype=np.float64)
    v1, v2 = p[1] - p[0], p[2] - p[0]
    return 0.5 * abs(v1[0] * v2[1] - v1[1] * v2[0])


def estimate_affine(src: np.ndarray, dst: np.ndarray) -> AffineTransform:
    """Solve for the affine transform mapping each src point exactly onto dst.

    Three point pairs give six equations in six unknowns; the x and y rows
    decouple into two 3x3 systems sharing the [x, y, 1] design matrix, solved
    by LU with partial pivoting.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != (3, 2) or dst.shape != (3, 2):
        raise ValueError(f"estimate_affine needs 3x2 src/dst, got {src.shape}, {dst.shape}")
    if triangle_area(src) < 1e-9:
        raise CollinearAnchors(f"source anchors are collinear (area {triangle_area(src):.3e})")
    design = np.column_stack([src, np.ones(3)])
    coeffs = np.linalg.solve(design, dst)  # columns: x' and y' coefficients
    return AffineTransform(coeffs.T)


def _bilinear_sample(image: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample image at float coordinates with zero padding outside."""
    h, w = image.shape
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    def fetch(xi, yi):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        vals = image[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(valid, vals, 0.0)

    v00 = fetch(x0, y0)
    v01 = fetch(x0 + 1, y0)
    v10 = fetch(x0, y0 + 1)
    v11 = fetch(x0 + 1, y0 + 1)
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    return (1.0 - fy) * top + fy * bot


def warp_affine(image: np.ndarray, transform: AffineTransform,
                out_h: int, out_w: int) -> np.ndarray:
    """Warp so that content at input point p lands at output point t(p)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"warp_affine expects a 2-D image, got shape {image.shape}")
    inv = transform.inverse()
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    sx = inv.m[0, 0] * xs + inv.m[0, 1] * ys + inv.m[0, 2]
    sy = inv.m[1, 0] * xs + inv.m[1, 1] * ys + inv.m[1, 2]
    return _bilinear_sample(image, sx, sy)


def resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize mapping corner pixel centers onto corner pixel centers."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    sx_scale = (w - 1) / (out_w - 1) if out_w > 1 else 0.0
    sy_scale = (h - 1) / (out_h - 1) if out_h > 1 else 0.0
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    return _bilinear_sample(image, xs * sx_scale, ys * sy_scale)


def align_lips(frame: np.ndarray, landmarks: LandmarkSet,
               template: NeutralTemplate, out_size: int) -> np.ndarray:
    """De-orient a frame: warp its anchor landmarks onto the neutral template."""
    transform = estimate_affine(landmarks.anchors(), template.points)
    return warp_affine(frame, transform, out_size, out_size)


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma: 0.299 R + 0.587 G + 0.114 B."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"to_grayscale expects HxWx3, got {frame.shape}")
    return frame @ np.array([0.299, 0.587, 0.114])


def resize_crop(clip: np.ndarray, crop: int, mode: str = "center",
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Crop every frame of a (T, H, W) clip with one shared offset.

    ``center`` uses the middle offset ((H-crop)//2, (W-crop)//2); ``random``
    draws integer offsets uniformly from [0, H-crop] x [0, W-crop] with the
    supplied generator. A single offset per clip keeps temporal coherence.
    """
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 3:
        raise ValueError(f"resize_crop expects (T, H, W), got {clip.shape}")
    t, h, w = clip.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than frame {h}x{w}")
    if mode == "center":
        oy, ox = (h - crop) // 2, (w - crop) // 2
    elif mode == "random":
        if rng is None:
            raise ValueError("random crop needs an explicit Generator")
        oy = int(rng.integers(0, h - crop + 1))
        ox = int(rng.integers(0, w - crop + 1))
    else:
        raise ValueError(f"unknown crop mode {mode!r}")
    return clip[:, oy:oy + crop, ox:ox + crop].copy()


def append_word_boundary(features: np.ndarray, boundary: BoundaryInterval) -> np.ndarray:
    """Concatenate the binary word-boundary indicator as one extra channel."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim < 2:
        raise ValueError(f"features must be (T, C, ...), got {features.shape}")
    t = features.shape[0]
    boundary.validate(t)
    indicator = np.zeros((t, 1) + features.shape[2:])
    indicator[boundary.start:boundary.end + 1] = 1.0
    return np.concatenate([features, indicator], axis=1)


# -- small file formats used by the CLI ------------------------------------------

def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM of an image with values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("PGM dump expects a 2-D image")
    quantized = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    h, w = quantized.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + quantized.tobytes())


def write_landmarks(path: str | Path, per_frame: list[LandmarkSet]) -> None:
    """One text line per frame: 68 x,y pairs, comma separated."""
    lines = []
    for lm in per_frame:
        flat = lm.points.reshape(-1)
        lines.append(",".join(repr(float(v)) for v in flat))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_landmarks(path: str | Path,
                   anchor_indices: tuple[int, int, int] = (36, 45, 30)) -> list[LandmarkSet]:
    sets = []
    for line_no, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        values = [float(v) for v in line.split(",")]
        if len(values) != 136:
            raise ValueError(f"line {line_no}: expected 136 values, got {len(values)}")
        sets.append(LandmarkSet(np.array(values).reshape(68, 2), anchor_indices))
    return sets
