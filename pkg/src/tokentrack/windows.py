"""Temporal window enumeration and per-window tracklet extraction.

A window of length N with gap G covers frames a, a+G, ..., a+(N-1)G; anchors
advance by the stride T.  Frame indices are 1-based everywhere, matching the
annotation CSV format.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

from .codec import Box, TrackletAnnotation
from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class WindowSpec:
    """N frames per window, anchor stride T, in-window frame gap G."""

    window_len: int
    stride: int = 1
    gap: int = 1
    full_span: bool = False

    def __post_init__(self):
        if self.window_len < 1:
            raise ConfigurationError(f"window length must be >= 1, got {self.window_len}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.gap < 1:
            raise ConfigurationError(f"gap must be >= 1, got {self.gap}")

    @property
    def span(self) -> int:
        """Number of consecutive frames a window stretches over: (N-1)G + 1."""
        return (self.window_len - 1) * self.gap + 1

    def target_len(self) -> int:
        """Frames per training target: the window frames, or the whole span."""
        return self.span if self.full_span else self.window_len


@dataclass(frozen=True)
class TemporalWindow:
    """Strictly increasing frame indices with constant gap."""

    frames: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def first(self) -> int:
        return self.frames[0]

    @property
    def last(self) -> int:
        return self.frames[-1]

    def span_frames(self) -> tuple[int, ...]:
        """All consecutive frames from first to last, inclusive."""
        return tuple(range(self.first, self.last + 1))


@dataclass
class TrackAnnotation:
    """One track's class and per-frame boxes (keys are 1-based frame indices)."""

    class_index: int
    boxes: dict[int, Box] = field(default_factory=dict)


@dataclass
class VideoAnnotations:
    frame_count: int
    tracks: dict[object, TrackAnnotation] = field(default_factory=dict)
    class_names: list[str] | None = None

    def validate(self) -> None:
        for tid, track in self.tracks.items():
            for f in track.boxes:
                if not 1 <= f <= self.frame_count:
                    raise DataError(f"track {tid} references frame {f} outside [1, {self.frame_count}]")


def enumerate_windows(frame_count: int, spec: WindowSpec) -> list[TemporalWindow]:
    """All windows for a video: anchors 1, 1+T, ... while the span fits.

    If the last fitting anchor does not reach the video end, one overlapping
    tail window anchored at F - span + 1 is appended so every frame is covered.
    Returns an empty list (with a warning) when the video is shorter than the span.
    """
    span = spec.span
    if frame_count < span:
        warnings.warn(
            f"video shorter than window span ({frame_count} < {span}); no windows",
            stacklevel=2,
        )
        return []
    windows = []
    anchor = 1
    while anchor + span - 1 <= frame_count:
        windows.append(_window_at(anchor, spec))
        anchor += spec.stride
    if windows[-1].last < frame_count:
        windows.append(_window_at(frame_count - span + 1, spec))
    return windows


def _window_at(anchor: int, spec: WindowSpec) -> TemporalWindow:
    return TemporalWindow(
        tuple(anchor + i * spec.gap for i in range(spec.window_len))
    )


def coverage(frame_count: int, spec: WindowSpec) -> list[int]:
    """Per-frame window-membership counts; index 0 is frame 1."""
    counts = [0] * frame_count
    for w in enumerate_windows(frame_count, spec):
        for f in w.frames:
            counts[f - 1] += 1
    return counts


def extract_window_tracklets(
    annotations: VideoAnnotations, window: TemporalWindow, full_span: bool = False
) -> list[TrackletAnnotation]:
    """Per-track slot sequences over a window's frames (or its full span).

    Emits one tracklet per track present in at least one slot frame; absent
    frames become absent slots.  Track iteration order is the insertion order
    of the annotation map, so output is deterministic.
    """
    slot_frames = window.span_frames() if full_span else window.frames
    out = []
    for tid, track in annotations.tracks.items():
        slots = tuple(track.boxes.get(f) for f in slot_frames)
        if all(s is None for s in slots):
            continue
        out.append(
            TrackletAnnotation(slots=slots, class_index=track.class_index, track_id=tid)
        )
    return out


CSV_HEADER = ["frame", "track_id", "class", "lx", "ty", "rx", "by"]


def save_annotations(annotations: VideoAnnotations, csv_path, sidecar_path) -> None:
    """Write the annotation CSV plus a {frame_count, class_names} JSON sidecar.

    Floats are written with repr precision so a round-trip is exact.
    """
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for tid, track in annotations.tracks.items():
            for frame in sorted(track.boxes):
                b = track.boxes[frame]
                writer.writerow(
                    [frame, tid, track.class_index, repr(b.lx), repr(b.ty), repr(b.rx), repr(b.by)]
                )
    sidecar = {"frame_count": annotations.frame_count, "class_names": annotations.class_names}
    with open(sidecar_path, "w") as f:
        json.dump(sidecar, f, indent=2)
        f.write("\n")


def load_annotations(csv_path, sidecar_path) -> VideoAnnotations:
    with open(sidecar_path) as f:
        sidecar = json.load(f)
    ann = VideoAnnotations(
        frame_count=sidecar["frame_count"], class_names=sidecar.get("class_names")
    )
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataError(f"{csv_path}: unexpected CSV header {header}")
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DataError(f"{csv_path}:{row_num}: expected {len(CSV_HEADER)} fields")
            frame, tid, cls = int(row[0]), row[1], int(row[2])
            lx, ty, rx, by = (float(v) for v in row[3:7])
            track = ann.tracks.setdefault(tid, TrackAnnotation(class_index=cls))
            if track.class_index != cls:
                raise DataError(f"{csv_path}:{row_num}: track {tid} changes class")
            track.boxes[frame] = Box(ty=ty, lx=lx, by=by, rx=rx)
    ann.validate()
    return ann
