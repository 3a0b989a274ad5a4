"""Shared random-instance generators for property tests."""

import numpy as np

from tokentrack.codec import Box, TrackletAnnotation
from tokentrack.merge_eval import Detection


def random_box(rng, min_size=0.0):
    x0, x1 = np.sort(rng.uniform(0, 1, 2))
    y0, y1 = np.sort(rng.uniform(0, 1, 2))
    if x1 - x0 < min_size:
        x1 = min(1.0, x0 + min_size)
    if y1 - y0 < min_size:
        y1 = min(1.0, y0 + min_size)
    return Box(ty=float(y0), lx=float(x0), by=float(y1), rx=float(x1))


def random_tracklets(rng, n_objects, window_len, num_classes, missing_prob=0.3):
    tracklets = []
    for _ in range(n_objects):
        present = rng.random(window_len) >= missing_prob
        if not present.any():
            present[int(rng.integers(window_len))] = True
        slots = tuple(random_box(rng) if p else None for p in present)
        tracklets.append(
            TrackletAnnotation(slots=slots, class_index=int(rng.integers(num_classes)))
        )
    return tracklets


def random_detections(rng, count, num_classes=2, frames=(1,), box_pool=None):
    """Single-frame detections, optionally drawn from a pool to force overlaps."""
    dets = []
    for i in range(count):
        if box_pool is not None and rng.random() < 0.5:
            base = box_pool[int(rng.integers(len(box_pool)))]
            jitter = rng.uniform(-0.03, 0.03, 4)
            box = Box(
                ty=float(np.clip(base.ty + jitter[0], 0, 1)),
                lx=float(np.clip(base.lx + jitter[1], 0, 1)),
                by=float(np.clip(max(base.by + jitter[2], base.ty + jitter[0] + 0.01), 0, 1)),
                rx=float(np.clip(max(base.rx + jitter[3], base.lx + jitter[1] + 0.01), 0, 1)),
            )
        else:
            box = random_box(rng, min_size=0.05)
        frame = int(frames[int(rng.integers(len(frames)))])
        dets.append(
            Detection(
                boxes={frame: box},
                class_index=int(rng.integers(num_classes)),
                score=float(rng.random()),
                source_window=int(rng.integers(5)),
            )
        )
    return dets


def random_tracklet_detections(rng, count, num_classes=2, max_frames=4):
    dets = []
    for _ in range(count):
        start = int(rng.integers(1, 4))
        length = int(rng.integers(1, max_frames + 1))
        boxes = {}
        for f in range(start, start + length):
            if rng.random() < 0.8:
                boxes[f] = random_box(rng, min_size=0.05)
        if not boxes:
            boxes[start] = random_box(rng, min_size=0.05)
        dets.append(
            Detection(
                boxes=boxes,
                class_index=int(rng.integers(num_classes)),
                score=float(rng.random()),
                source_window=int(rng.integers(5)),
            )
        )
    return dets
