"""Cross-window merging by non-maximum suppression and recall-precision metrics.

Conventions pinned here because the underlying papers defer to prior work:

* RP-AUC sweeps the score threshold over every distinct detection score,
  computes (recall, precision) at each, anchors the polyline at recall 0 with
  the highest-threshold precision, and integrates by the trapezoidal rule
  over recall.  Zero ground truth is undefined and returns None, not 0.
* cRP-AUC is RP-AUC with class-agnostic matching forced on.
* NMS ties break by score, then lower source window, then input order.
* Tracklet IoU is the mean per-frame IoU over frames where at least one of
  the two is present (a one-sided frame contributes 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .codec import Box
from .errors import ContractViolation, DataError
from .windows import TemporalWindow, VideoAnnotations, WindowSpec

GRANULARITIES = ("per-frame", "tracklet")


@dataclass
class Detection:
    """A decoded tracklet (or single box) with class and confidence.

    ``boxes`` maps frame index to Box: 0-based window slots for raw per-window
    output, 1-based absolute frames once merged onto the video timeline.
    """

    boxes: dict[int, Box]
    class_index: int
    score: float
    source_window: int = -1

    def frames(self) -> list[int]:
        return sorted(self.boxes)


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.5
    class_agnostic: bool = False
    granularity: str = "per-frame"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ContractViolation("IoU threshold must be in (0, 1]")
        if self.granularity not in GRANULARITIES:
            raise ContractViolation(f"granularity must be one of {GRANULARITIES}")


@dataclass
class PRCurve:
    """(threshold, precision, recall) triples, thresholds descending."""

    points: list[tuple[float, float, float]] = field(default_factory=list)


def iou_2d(a: Box, b: Box) -> float:
    iw = min(a.rx, b.rx) - max(a.lx, b.lx)
    ih = min(a.by, b.by) - max(a.ty, b.ty)
    inter = max(0.0, iw) * max(0.0, ih)
    area_a = (a.rx - a.lx) * (a.by - a.ty)
    area_b = (b.rx - b.lx) * (b.by - b.ty)
    union = area_a + area_b - inter
    if union <= 0.0:
        # degenerate zero-area boxes: identical counts as a perfect match
        return 1.0 if a == b else 0.0
    return inter / union


def iou_tracklet(a: Detection, b: Detection) -> float:
    frames = set(a.boxes) | set(b.boxes)
    if not frames:
        return 0.0
    total = 0.0
    for f in frames:
        if f in a.boxes and f in b.boxes:
            total += iou_2d(a.boxes[f], b.boxes[f])
    return total / len(frames)


def _pair_iou(a: Detection, b: Detection, granularity: str) -> float:
    if granularity == "tracklet":
        return iou_tracklet(a, b)
    fa, fb = a.frames(), b.frames()
    if len(fa) != 1 or len(fb) != 1:
        raise ContractViolation("per-frame granularity expects single-frame detections")
    if fa[0] != fb[0]:
        return 0.0
    return iou_2d(a.boxes[fa[0]], b.boxes[fb[0]])


def _rank_order(detections: list[Detection]) -> list[int]:
    """Indices by descending score; ties by lower source window, then input order."""
    return sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].score, detections[i].source_window, i),
    )


def nms(
    detections: list[Detection],
    iou_threshold: float = 0.5,
    granularity: str = "tracklet",
    class_agnostic: bool = False,
) -> list[Detection]:
    """Greedy suppression: keep the best, drop overlaps strictly above threshold."""
    order = _rank_order(detections)
    kept: list[int] = []
    suppressed = [False] * len(detections)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(i)
        for j in order[pos + 1 :]:
            if suppressed[j]:
                continue
            if not class_agnostic and detections[j].class_index != detections[i].class_index:
                continue
            if _pair_iou(detections[i], detections[j], granularity) > iou_threshold:
                suppressed[j] = True
    return [detections[i] for i in kept]


def reanchor_detection(det: Detection, window: TemporalWindow, spec: WindowSpec) -> Detection:
    """Map 0-based window slots to 1-based absolute frame indices."""
    slot_frames = window.span_frames() if spec.full_span else window.frames
    boxes = {}
    for slot, box in det.boxes.items():
        if not 0 <= slot < len(slot_frames):
            raise ContractViolation(
                f"detection references slot {slot} outside its {len(slot_frames)}-frame window"
            )
        boxes[slot_frames[slot]] = box
    return Detection(
        boxes=boxes,
        class_index=det.class_index,
        score=det.score,
        source_window=det.source_window,
    )


def merge_windows(
    window_detections: list[list[Detection]],
    windows: list[TemporalWindow],
    spec: WindowSpec,
    policy: str = "per-frame",
    iou_threshold: float = 0.5,
    class_agnostic: bool = False,
) -> list[Detection]:
    """Combine redundant outputs from overlapping windows into one timeline.

    The per-frame policy pools every box per absolute frame and suppresses
    duplicates frame by frame, which lets windows fill in each other's misses.
    The tracklet policy suppresses whole re-anchored tracklets instead.
    """
    if len(window_detections) != len(windows):
        raise ContractViolation("one detection list per enumerated window required")
    if policy not in GRANULARITIES:
        raise ContractViolation(f"merge policy must be one of {GRANULARITIES}")
    pooled: list[Detection] = []
    for w_index, (dets, window) in enumerate(zip(window_detections, windows)):
        for det in dets:
            anchored = reanchor_detection(det, window, spec)
            if anchored.source_window < 0:
                anchored.source_window = w_index
            pooled.append(anchored)

    if policy == "tracklet":
        return nms(pooled, iou_threshold, "tracklet", class_agnostic)

    by_frame: dict[int, list[Detection]] = {}
    for det in pooled:
        for frame, box in det.boxes.items():
            by_frame.setdefault(frame, []).append(
                Detection(
                    boxes={frame: box},
                    class_index=det.class_index,
                    score=det.score,
                    source_window=det.source_window,
                )
            )
    merged: list[Detection] = []
    for frame in sorted(by_frame):
        merged.extend(nms(by_frame[frame], iou_threshold, "per-frame", class_agnostic))
    return merged


# ---------------------------------------------------------------------------
# matching and metrics


def annotations_to_ground_truth(
    annotations: VideoAnnotations, granularity: str = "per-frame"
) -> list[Detection]:
    """Ground-truth instances in the same shape as detections (scores unused)."""
    out = []
    for track in annotations.tracks.values():
        if granularity == "tracklet":
            out.append(Detection(boxes=dict(track.boxes), class_index=track.class_index, score=1.0))
        else:
            for frame, box in sorted(track.boxes.items()):
                out.append(
                    Detection(boxes={frame: box}, class_index=track.class_index, score=1.0)
                )
    return out


@dataclass
class MatchResult:
    is_tp: list[bool]  # aligned with the input detection order
    gt_matched: list[bool]


def match_detections(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> MatchResult:
    """Greedy matching by descending score; each GT matches at most once."""
    is_tp = [False] * len(detections)
    gt_matched = [False] * len(ground_truth)
    for i in _rank_order(detections):
        det = detections[i]
        best_iou, best_gt = 0.0, -1
        for g, gt in enumerate(ground_truth):
            if gt_matched[g]:
                continue
            if not config.class_agnostic and gt.class_index != det.class_index:
                continue
            iou = _pair_iou(det, gt, config.granularity)
            if iou > best_iou:
                best_iou, best_gt = iou, g
        if best_gt >= 0 and best_iou >= config.iou_threshold:
            is_tp[i] = True
            gt_matched[best_gt] = True
    return MatchResult(is_tp=is_tp, gt_matched=gt_matched)


def scored_labels(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> list[tuple[float, bool]]:
    """(score, is_tp) per detection in rank order; the input to the curve builders."""
    labels = match_detections(detections, ground_truth, config)
    return [(detections[i].score, labels.is_tp[i]) for i in _rank_order(detections)]


def curve_from_labels(labels: list[tuple[float, bool]], total_gt: int) -> PRCurve:
    """Cumulative precision/recall sampled at every distinct score (descending).

    ``labels`` must already be sorted by descending score; entries pooled from
    several videos may be merge-sorted, ties in any order.
    """
    curve = PRCurve()
    tp = fp = 0
    for rank, (score, is_tp) in enumerate(labels):
        if is_tp:
            tp += 1
        else:
            fp += 1
        if rank + 1 == len(labels) or labels[rank + 1][0] != score:
            precision = tp / (tp + fp)
            recall = tp / total_gt if total_gt else 0.0
            curve.points.append((score, precision, recall))
    return curve


def auc_from_curve(curve: PRCurve) -> float:
    """Trapezoid over recall, anchored at recall 0 with the first precision."""
    if not curve.points:
        return 0.0
    prev_r, prev_p = 0.0, curve.points[0][1]
    area = 0.0
    for _, precision, recall in curve.points:
        area += (recall - prev_r) * (precision + prev_p) / 2.0
        prev_r, prev_p = recall, precision
    return area


def ap_from_labels(labels: list[tuple[float, bool]], total_gt: int) -> float:
    """All-points interpolated AP from rank-ordered (score, is_tp) labels."""
    if not labels or total_gt == 0:
        return 0.0
    precisions, recalls = [], []
    tp = fp = 0
    for _, is_tp in labels:
        if is_tp:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / total_gt)
    for k in range(len(precisions) - 2, -1, -1):
        precisions[k] = max(precisions[k], precisions[k + 1])
    area, prev_r = 0.0, 0.0
    for p, r in zip(precisions, recalls):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return area


def pr_curve(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> PRCurve:
    """Precision/recall at every distinct score threshold (descending)."""
    return curve_from_labels(
        scored_labels(detections, ground_truth, config), len(ground_truth)
    )


def rp_auc(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> float | None:
    """Trapezoidal area under the recall-precision polyline; None when no GT."""
    if not ground_truth:
        return None
    if not detections:
        return 0.0
    return auc_from_curve(pr_curve(detections, ground_truth, config))


def crp_auc(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> float | None:
    """Class-agnostic RP-AUC: localization quality with misclassification forgiven."""
    agnostic = MatchConfig(
        iou_threshold=config.iou_threshold,
        class_agnostic=True,
        granularity=config.granularity,
    )
    return rp_auc(detections, ground_truth, agnostic)


def average_precision(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> float | None:
    """All-points interpolated AP at the config's single IoU threshold."""
    if not ground_truth:
        return None
    if not detections:
        return 0.0
    return ap_from_labels(
        scored_labels(detections, ground_truth, config), len(ground_truth)
    )


def detection_counts(
    detections: list[Detection], ground_truth: list[Detection], config: MatchConfig
) -> dict[str, int]:
    labels = match_detections(detections, ground_truth, config)
    tp = sum(labels.is_tp)
    return {"tp": tp, "fp": len(detections) - tp, "fn": len(ground_truth) - tp}


# ---------------------------------------------------------------------------
# detection interchange (JSON lines)


def detection_record(video_id: str, timeline: list[int], det: Detection) -> dict:
    """One JSONL row; timeline lists the frames the detection covers."""
    boxes = []
    for f in timeline:
        b = det.boxes.get(f)
        boxes.append(None if b is None else [b.lx, b.ty, b.rx, b.by])
    return {
        "video_id": video_id,
        "frames": list(timeline),
        "boxes": boxes,
        "class": det.class_index,
        "score": det.score,
        "source_window": det.source_window,
    }


def write_detections(path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_detections(path) -> dict[str, list[Detection]]:
    """Detections grouped by video id, in file order."""
    by_video: dict[str, list[Detection]] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: bad JSON ({e})") from e
            boxes = {}
            for frame, vals in zip(rec["frames"], rec["boxes"]):
                if vals is not None:
                    lx, ty, rx, by = vals
                    boxes[frame] = Box(ty=ty, lx=lx, by=by, rx=rx)
            det = Detection(
                boxes=boxes,
                class_index=rec["class"],
                score=rec["score"],
                source_window=rec.get("source_window", -1),
            )
            by_video.setdefault(rec["video_id"], []).append(det)
    return by_video
