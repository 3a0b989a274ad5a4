"""Synthetic moving-rectangle clips with entry, exit and occlusion events.

Each object is a filled axis-aligned rectangle with a class-specific gray
intensity, moving at constant velocity and reflecting off the image borders.
Occlusion draws a darker occluder patch over the object while its annotation
is blanked, so the visual evidence genuinely disappears for those frames.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .codec import Box
from .errors import ConfigurationError, DataError
from .windows import TrackAnnotation, VideoAnnotations, load_annotations, save_annotations

OCCLUDER_INTENSITY = 0.30
OCCLUDER_PAD = 3  # pixels beyond the object box on each side


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    frame_count: int = 8
    max_objects: int = 3
    num_classes: int = 2
    velocity_range: tuple[float, float] = (0.5, 2.5)
    enter_prob: float = 0.15
    exit_prob: float = 0.15
    occlude_prob: float = 0.25
    min_size_frac: float = 0.14
    max_size_frac: float = 0.32
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigurationError(f"image size must be >= 16, got {self.image_size}")
        if self.frame_count < 2:
            raise ConfigurationError(f"frame count must be >= 2, got {self.frame_count}")
        for name in ("enter_prob", "exit_prob", "occlude_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
        if self.num_classes < 1:
            raise ConfigurationError("need at least one class")


@dataclass
class RenderedClip:
    frames: np.ndarray  # (F, D, D) float32 in [0, 1]
    annotations: VideoAnnotations


def class_intensities(num_classes: int) -> np.ndarray:
    """Distinct fill intensity per class, all well above the occluder gray."""
    return np.linspace(0.55, 0.95, num_classes)


@dataclass
class _ObjectTrack:
    class_index: int
    width: int
    height: int
    entry: int
    exit: int
    occluded: set[int]
    positions: list[tuple[int, int]]  # top-left pixel per frame, frame 1 at index 0


def _simulate_object(rng: np.random.Generator, cfg: SceneConfig) -> _ObjectTrack:
    d = cfg.image_size
    lo = max(2, int(round(cfg.min_size_frac * d)))
    hi = max(lo + 1, int(round(cfg.max_size_frac * d)))
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = float(rng.uniform(0, d - w))
    y = float(rng.uniform(0, d - h))
    speed = float(rng.uniform(*cfg.velocity_range))
    angle = float(rng.uniform(0, 2 * np.pi))
    vx, vy = speed * np.cos(angle), speed * np.sin(angle)

    entry, exit_ = 1, cfg.frame_count
    if cfg.frame_count >= 3 and rng.random() < cfg.enter_prob:
        entry = int(rng.integers(2, cfg.frame_count))
    if rng.random() < cfg.exit_prob and entry <= cfg.frame_count - 1:
        exit_ = int(rng.integers(entry, cfg.frame_count))

    occluded: set[int] = set()
    span = exit_ - entry + 1
    if span >= 3 and rng.random() < cfg.occlude_prob:
        occ_len = int(rng.integers(1, min(3, span - 2) + 1))
        occ_start = int(rng.integers(entry + 1, exit_ - occ_len + 1))
        occluded = set(range(occ_start, occ_start + occ_len))

    positions = []
    for _ in range(cfg.frame_count):
        positions.append((int(round(x)), int(round(y))))
        x += vx
        y += vy
        # elastic reflection keeps the box fully inside the image
        if x < 0:
            x, vx = -x, -vx
        elif x > d - w:
            x, vx = 2 * (d - w) - x, -vx
        if y < 0:
            y, vy = -y, -vy
        elif y > d - h:
            y, vy = 2 * (d - h) - y, -vy
    return _ObjectTrack(
        class_index=int(rng.integers(0, cfg.num_classes)),
        width=w,
        height=h,
        entry=entry,
        exit=exit_,
        occluded=occluded,
        positions=positions,
    )


def generate_clip(config: SceneConfig) -> RenderedClip:
    """Render a fully labeled clip; bitwise deterministic for a fixed seed."""
    rng = np.random.default_rng(config.seed)
    d, f_count = config.image_size, config.frame_count
    n_objects = 0 if config.max_objects == 0 else int(rng.integers(1, config.max_objects + 1))
    objects = [_simulate_object(rng, config) for _ in range(n_objects)]
    fills = class_intensities(config.num_classes)

    frames = np.zeros((f_count, d, d), dtype=np.float32)
    ann = VideoAnnotations(
        frame_count=f_count,
        class_names=[f"class_{k}" for k in range(config.num_classes)],
    )
    for i, obj in enumerate(objects):
        ann.tracks[str(i)] = TrackAnnotation(class_index=obj.class_index)

    for frame in range(1, f_count + 1):
        img = frames[frame - 1]
        visible = [o for o in objects if o.entry <= frame <= o.exit]
        for i, obj in enumerate(objects):
            if not obj.entry <= frame <= obj.exit:
                continue
            x, y = obj.positions[frame - 1]
            img[y : y + obj.height, x : x + obj.width] = fills[obj.class_index]
            if frame not in obj.occluded:
                ann.tracks[str(i)].boxes[frame] = Box(
                    ty=y / d, lx=x / d, by=(y + obj.height) / d, rx=(x + obj.width) / d
                )
        # occluders go on top so the hidden objects leave no visual trace
        for obj in visible:
            if frame in obj.occluded:
                x, y = obj.positions[frame - 1]
                x0, y0 = max(0, x - OCCLUDER_PAD), max(0, y - OCCLUDER_PAD)
                x1 = min(d, x + obj.width + OCCLUDER_PAD)
                y1 = min(d, y + obj.height + OCCLUDER_PAD)
                img[y0:y1, x0:x1] = OCCLUDER_INTENSITY

    ann.tracks = {k: v for k, v in ann.tracks.items() if v.boxes}
    return RenderedClip(frames=frames, annotations=ann)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255) from a float image in [0, 1]."""
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(arr.tobytes())
    except OSError as e:
        raise DataError(f"cannot write frame image {path}: {e}") from e


def read_pgm(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"cannot read frame image {path}: {e}") from e
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise DataError(f"{path}: not a maxval-255 binary PGM")
    w, h = (int(v) for v in parts[1].split())
    pixels = np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
    return pixels.astype(np.float32) / 255.0


def export_clip(clip: RenderedClip, directory) -> None:
    """Write frame_%04d.pgm images plus annotations.csv and annotations.json."""
    os.makedirs(directory, exist_ok=True)
    for frame in range(1, clip.annotations.frame_count + 1):
        write_pgm(os.path.join(directory, f"frame_{frame:04d}.pgm"), clip.frames[frame - 1])
    save_annotations(
        clip.annotations,
        os.path.join(directory, "annotations.csv"),
        os.path.join(directory, "annotations.json"),
    )


def load_clip(directory) -> RenderedClip:
    ann = load_annotations(
        os.path.join(directory, "annotations.csv"),
        os.path.join(directory, "annotations.json"),
    )
    frames = np.stack(
        [
            read_pgm(os.path.join(directory, f"frame_{frame:04d}.pgm"))
            for frame in range(1, ann.frame_count + 1)
        ]
    )
    return RenderedClip(frames=frames, annotations=ann)
