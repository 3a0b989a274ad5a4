"""End-to-end plumbing: datasets on disk, batches, training loop, inference, reports.

Every source of randomness is derived from (seed, step) or (seed, index)
pairs, so any step of a run can be reproduced without replaying the steps
before it; resuming from a checkpoint continues the exact same trace.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import codec
from .codec import TokenSequence, Vocabulary, token_weights
from .errors import DataError, NumericError
from .merge_eval import (
    Detection,
    MatchConfig,
    ap_from_labels,
    auc_from_curve,
    annotations_to_ground_truth,
    curve_from_labels,
    detection_counts,
    detection_record,
    match_detections,
    merge_windows,
)
from .model import (
    AdamState,
    Batch,
    DecodeStrategy,
    ModelConfig,
    adam_update,
    autoregressive_decode,
    init_params,
    load_checkpoint,
    model_forward,
    param_tensors,
    save_checkpoint,
    sequence_loss,
    warmup_lr,
)
from .synth import load_clip
from .windows import TemporalWindow, VideoAnnotations, WindowSpec, enumerate_windows, extract_window_tracklets


@dataclass
class ClipData:
    video_id: str
    frames: np.ndarray  # (F, D, D) float32 in [0, 1]
    annotations: VideoAnnotations


def load_dataset(root) -> list[ClipData]:
    """All clip directories under root, sorted by name."""
    clips = []
    for name in sorted(os.listdir(root)):
        path = os.path.join(root, name)
        if not os.path.isdir(path) or not os.path.exists(os.path.join(path, "annotations.csv")):
            continue
        loaded = load_clip(path)
        clips.append(ClipData(video_id=name, frames=loaded.frames, annotations=loaded.annotations))
    if not clips:
        raise DataError(f"no clip directories with annotations found under {root}")
    return clips


@dataclass
class WindowExample:
    clip_index: int
    window_index: int
    window: TemporalWindow
    tracklets: list


def build_examples(clips: list[ClipData], spec: WindowSpec) -> list[WindowExample]:
    out = []
    for ci, clip in enumerate(clips):
        for wi, window in enumerate(enumerate_windows(clip.annotations.frame_count, spec)):
            tracklets = extract_window_tracklets(clip.annotations, window, spec.full_span)
            out.append(WindowExample(clip_index=ci, window_index=wi, window=window, tracklets=tracklets))
    return out


def encode_example(
    example: WindowExample, vocab: Vocabulary, spec: WindowSpec, order_seed: int, cls_eq: bool
) -> TokenSequence:
    target_len = spec.target_len()
    if vocab.mode == codec.MODE_2D:
        seq = codec.encode_video(example.tracklets, vocab, target_len, order_seed)
    else:
        seq = codec.encode_video_1d(example.tracklets, vocab, target_len, order_seed)
    seq.weights = token_weights(seq.tokens, vocab, target_len, equalize=cls_eq)
    return seq


def window_images(clip: ClipData, window: TemporalWindow) -> np.ndarray:
    return clip.frames[[f - 1 for f in window.frames]]


def max_target_length(examples: list[WindowExample], spec: WindowSpec, mode: str) -> int:
    per_box = 4 if mode == codec.MODE_2D else 2
    per_obj = per_box * spec.target_len() + 1
    most = max((len(ex.tracklets) for ex in examples), default=0)
    return most * per_obj + 1


def make_batch(
    examples: list[WindowExample],
    clips: list[ClipData],
    vocab: Vocabulary,
    spec: WindowSpec,
    config: ModelConfig,
    step: int,
    seed: int,
    cls_eq: bool = False,
    resample_order: bool = True,
) -> Batch:
    """Sample one training batch; a pure function of (seed, step).

    With resample_order the object order inside each target is redrawn every
    time the example is seen; without it the order is a fixed function of the
    example index (useful for overfit checks that compare decoded tokens).
    """
    rng = np.random.default_rng([seed, step])
    picks = rng.integers(0, len(examples), size=config.batch_size)
    images, sequences = [], []
    for k in picks:
        ex = examples[int(k)]
        if resample_order:
            order_seed = int(rng.integers(0, 2**31))
        else:
            order_seed = 1000003 * seed + int(k)
        sequences.append(encode_example(ex, vocab, spec, order_seed, cls_eq))
        images.append(window_images(clips[ex.clip_index], ex.window))

    longest = max(len(s) for s in sequences)
    if longest > config.max_seq_len:
        raise DataError(
            f"training target of {longest} tokens exceeds max sequence length {config.max_seq_len}"
        )
    targets = np.full((config.batch_size, longest), vocab.pad, dtype=np.int64)
    weights = np.zeros((config.batch_size, longest), dtype=np.float64)
    for row, seq in enumerate(sequences):
        targets[row, : len(seq)] = seq.tokens
        weights[row, : len(seq)] = seq.weights
    return Batch(
        images=np.stack(images).astype(config.dtype),
        targets=targets,
        weights=weights,
        pad_id=vocab.pad,
    )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    losses: list[float]
    checkpoint_path: str
    log_path: str


def _checkpoint_tensors(params, opt_state: AdamState):
    tensors = dict(params)
    for name, arr in opt_state.m.items():
        tensors[f"adam.m.{name}"] = arr
    for name, arr in opt_state.v.items():
        tensors[f"adam.v.{name}"] = arr
    return tensors


def _split_checkpoint_tensors(tensors):
    params, m, v = {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("adam.m."):
            m[name[len("adam.m.") :]] = arr.copy()
        elif name.startswith("adam.v."):
            v[name[len("adam.v.") :]] = arr.copy()
        else:
            params[name] = arr.copy()
    return params, m, v


def run_training(
    clips: list[ClipData],
    vocab: Vocabulary,
    spec: WindowSpec,
    config: ModelConfig,
    steps: int,
    base_lr: float = 1e-3,
    seed: int = 0,
    cls_eq: bool = False,
    freeze_backbone: bool = False,
    resample_order: bool = True,
    checkpoint_path: str | None = None,
    log_path: str | None = None,
    checkpoint_every: int = 500,
    resume_from: str | None = None,
    params: dict | None = None,
    quiet: bool = True,
) -> tuple[dict, TrainResult]:
    """Deterministic training loop with CSV logging and periodic checkpoints.

    On a non-finite loss the last periodic checkpoint is left in place and the
    NumericError propagates after a diagnostics dump next to it.
    """
    examples = build_examples(clips, spec)
    if not examples:
        raise DataError("dataset produced no temporal windows to train on")
    needed = max_target_length(examples, spec, vocab.mode)
    if needed > config.max_seq_len:
        raise DataError(
            f"worst-case target needs {needed} tokens but max sequence length is {config.max_seq_len}"
        )

    start_step = 0
    if resume_from is not None:
        ckpt_config, tensors, meta = load_checkpoint(resume_from)
        if ckpt_config != config:
            raise DataError("checkpoint config does not match the requested run config")
        params, m, v = _split_checkpoint_tensors(tensors)
        opt_state = AdamState(step=meta["adam_step"], m=m, v=v)
        start_step = meta["step"]
    else:
        if params is None:
            params = init_params(config)
        opt_state = AdamState.for_params(params)

    frozen = tuple(n for n in params if n.startswith("backbone.")) if freeze_backbone else ()

    log_rows = []
    losses = []
    for step in range(start_step, steps):
        lr = warmup_lr(step, base_lr, steps)
        batch = make_batch(
            examples, clips, vocab, spec, config, step, seed, cls_eq, resample_order
        )
        t0 = time.perf_counter()
        loss = _train_step_frozen(batch, params, opt_state, config, lr, frozen)
        dt = time.perf_counter() - t0
        tokens_per_sec = batch.targets.size / dt if dt > 0 else 0.0
        losses.append(loss)
        log_rows.append(f"{step},{loss:.6f},{lr:.6g},{tokens_per_sec:.1f}")
        if not quiet and (step % 100 == 0 or step + 1 == steps):
            print(f"step {step} loss {loss:.4f} lr {lr:.2g}")
        if checkpoint_path and ((step + 1) % checkpoint_every == 0 or step + 1 == steps):
            meta = {"step": step + 1, "adam_step": opt_state.step, "seed": seed}
            save_checkpoint(checkpoint_path, config, _checkpoint_tensors(params, opt_state), meta)
    if log_path:
        with open(log_path, "a" if resume_from else "w") as f:
            if not resume_from:
                f.write("step,loss,lr,tokens_per_sec\n")
            f.write("\n".join(log_rows) + ("\n" if log_rows else ""))
    return params, TrainResult(
        losses=losses, checkpoint_path=checkpoint_path or "", log_path=log_path or ""
    )


def _train_step_frozen(batch, params, opt_state, config, lr, frozen_prefixes):
    from .model.training import train_step

    if not frozen_prefixes:
        return train_step(batch, params, opt_state, config, lr)
    pt = param_tensors(params)
    logits = model_forward(pt, batch.images, batch.decoder_inputs(), config)
    loss = sequence_loss(logits, batch.targets, batch.weights)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} at optimizer step {opt_state.step}")
    loss.backward()
    grads = {}
    for name, t in pt.items():
        if any(name.startswith(p) for p in frozen_prefixes):
            grads[name] = np.zeros_like(params[name])
        else:
            grads[name] = t.grad
    adam_update(params, grads, opt_state, lr)
    return value


# ---------------------------------------------------------------------------
# inference


@dataclass
class InferenceResult:
    merged: dict[str, list[Detection]]  # video id -> merged timeline detections
    raw: dict[str, list[list[Detection]]]  # video id -> per-window detections
    window_map: dict[str, list[TemporalWindow]]
    diagnostics: list[str]


def decode_window_detections(
    sequences, vocab: Vocabulary, target_len: int, score_mode: str = "class"
) -> tuple[list[list[Detection]], list[str]]:
    """Parse decoded token sequences into per-window detections with scores."""
    per_window = []
    diagnostics = []
    for w_index, seq in enumerate(sequences):
        dets = []
        objects, diags = codec.parse_video_tokens(seq.tokens, vocab, target_len)
        diagnostics.extend(f"window {w_index}: {d}" for d in diags)
        if seq.truncated:
            diagnostics.append(f"window {w_index}: decode hit the length limit without EOS")
        for obj in objects:
            if score_mode == "class":
                score = seq.probs[obj.class_token_pos]
            else:  # geometric mean over the object's tokens
                span = seq.probs[obj.token_start : obj.class_token_pos + 1]
                score = float(np.exp(np.mean(np.log(np.maximum(span, 1e-12)))))
            boxes = {i: b for i, b in enumerate(obj.tracklet.slots) if b is not None}
            dets.append(
                Detection(
                    boxes=boxes,
                    class_index=obj.tracklet.class_index,
                    score=score,
                    source_window=w_index,
                )
            )
        per_window.append(dets)
    return per_window, diagnostics


def infer_dataset(
    clips: list[ClipData],
    params: dict,
    config: ModelConfig,
    vocab: Vocabulary,
    spec: WindowSpec,
    strategy: DecodeStrategy = DecodeStrategy(),
    merge_policy: str = "per-frame",
    merge_iou: float = 0.5,
    merge_class_agnostic: bool = False,
    score_mode: str = "class",
    decode_batch: int = 32,
) -> InferenceResult:
    """Window-by-window autoregressive decoding followed by cross-window merging."""
    target_len = spec.target_len()
    merged, raw, window_map = {}, {}, {}
    diagnostics: list[str] = []
    for clip in clips:
        windows = enumerate_windows(clip.annotations.frame_count, spec)
        window_map[clip.video_id] = windows
        sequences = []
        for start in range(0, len(windows), decode_batch):
            chunk = windows[start : start + decode_batch]
            images = np.stack([window_images(clip, w) for w in chunk]).astype(config.dtype)
            sequences.extend(
                autoregressive_decode(params, images, config, vocab.eos, vocab.pad, strategy)
            )
        per_window, diags = decode_window_detections(sequences, vocab, target_len, score_mode)
        diagnostics.extend(f"{clip.video_id}: {d}" for d in diags)
        raw[clip.video_id] = per_window
        merged[clip.video_id] = merge_windows(
            per_window, windows, spec, merge_policy, merge_iou, merge_class_agnostic
        )
    return InferenceResult(merged=merged, raw=raw, window_map=window_map, diagnostics=diagnostics)


def detection_records(result: InferenceResult) -> list[dict]:
    """JSONL rows for merged detections (absolute frame timelines)."""
    rows = []
    for video_id in sorted(result.merged):
        for det in result.merged[video_id]:
            rows.append(detection_record(video_id, det.frames(), det))
    return rows


def raw_detection_records(result: InferenceResult, spec: WindowSpec) -> list[dict]:
    """JSONL rows for unmerged per-window detections, re-anchored to frames."""
    from .merge_eval import reanchor_detection

    rows = []
    for video_id in sorted(result.raw):
        windows = result.window_map[video_id]
        for dets, window in zip(result.raw[video_id], windows):
            timeline = list(window.span_frames() if spec.full_span else window.frames)
            for det in dets:
                anchored = reanchor_detection(det, window, spec)
                rows.append(detection_record(video_id, timeline, anchored))
    return rows


# ---------------------------------------------------------------------------
# evaluation


def evaluate_detections(
    detections_by_video: dict[str, list[Detection]],
    clips: list[ClipData],
    config: MatchConfig,
) -> dict:
    """Dataset-level metric report, pooling matches across videos."""
    agnostic = MatchConfig(
        iou_threshold=config.iou_threshold, class_agnostic=True, granularity=config.granularity
    )
    ap_config = MatchConfig(
        iou_threshold=0.5, class_agnostic=config.class_agnostic, granularity=config.granularity
    )
    labels, labels_agnostic, labels_ap = [], [], []
    total_gt = 0
    counts = {"tp": 0, "fp": 0, "fn": 0}
    for clip in clips:
        gts = annotations_to_ground_truth(clip.annotations, config.granularity)
        dets = detections_by_video.get(clip.video_id, [])
        total_gt += len(gts)
        for key, cfg in (("std", config), ("agn", agnostic), ("ap", ap_config)):
            res = match_detections(dets, gts, cfg)
            pairs = sorted(
                ((dets[i].score, res.is_tp[i]) for i in range(len(dets))),
                key=lambda p: -p[0],
            )
            {"std": labels, "agn": labels_agnostic, "ap": labels_ap}[key].extend(pairs)
        c = detection_counts(dets, gts, config)
        for k in counts:
            counts[k] += c[k]

    labels.sort(key=lambda p: -p[0])
    labels_agnostic.sort(key=lambda p: -p[0])
    labels_ap.sort(key=lambda p: -p[0])
    rp = auc_from_curve(curve_from_labels(labels, total_gt)) if total_gt else None
    crp = auc_from_curve(curve_from_labels(labels_agnostic, total_gt)) if total_gt else None
    ap = ap_from_labels(labels_ap, total_gt) if total_gt else None
    return {
        "rp_auc": rp,
        "crp_auc": crp,
        "ap@0.5": ap,
        "counts": counts,
        "curve": curve_from_labels(labels, total_gt).points,
    }


def write_report(report: dict, path, pr_csv_path=None) -> None:
    body = {k: v for k, v in report.items() if k != "curve"}
    with open(path, "w") as f:
        json.dump(body, f, indent=2)
        f.write("\n")
    if pr_csv_path:
        with open(pr_csv_path, "w") as f:
            f.write("threshold,precision,recall\n")
            for threshold, precision, recall in report["curve"]:
                f.write(f"{threshold!r},{precision!r},{recall!r}\n")
