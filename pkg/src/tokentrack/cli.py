"""Command-line pipelines: synth, tokenize, train, infer, eval.

Configuration comes from an INI file with sections named after the modules
([vocab], [windows], [synth], [model], [train], [infer], [eval], [run]);
command-line flags override file values.  All randomness flows from a single
seed (--seed, then [run] seed, then $TOKENTRACK_SEED, then 0), and commands
compose through files only.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys

from . import codec
from .codec import VocabConfig, build_vocabulary, token_weights
from .errors import (
    ConfigurationError,
    ContractViolation,
    DataError,
    EncodingError,
    NumericError,
    RangeError,
)
from .merge_eval import MatchConfig, read_detections, write_detections
from .model import FUSION_MODES, DecodeStrategy, ModelConfig, load_checkpoint
from .pipeline import (
    detection_records,
    evaluate_detections,
    infer_dataset,
    load_dataset,
    raw_detection_records,
    run_training,
    write_report,
)
from .synth import SceneConfig, export_clip, generate_clip
from .windows import WindowSpec, enumerate_windows, extract_window_tracklets

SEED_ENV_VAR = "TOKENTRACK_SEED"


class _Cfg:
    """Typed access to one INI file; missing sections fall back to defaults."""

    def __init__(self, path=None):
        self.parser = configparser.ConfigParser()
        if path is not None:
            if not os.path.exists(path):
                raise ConfigurationError(f"config file {path} not found")
            self.parser.read(path)

    def get(self, section, key, default=None, kind=str):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key)
        try:
            if kind is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return kind(raw)
        except ValueError as e:
            raise ConfigurationError(f"[{section}] {key} = {raw!r}: {e}") from e


def _resolve_seed(args, cfg: _Cfg) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    file_seed = cfg.get("run", "seed", None, int)
    if file_seed is not None:
        return file_seed
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _vocab_config(cfg: _Cfg, mode=None) -> VocabConfig:
    return VocabConfig(
        bins=cfg.get("vocab", "bins", 64, int),
        num_classes=cfg.get("vocab", "classes", 2, int),
        reserved=cfg.get("vocab", "reserved", 3, int),
        mode=mode or cfg.get("vocab", "mode", codec.MODE_2D),
    )


def _window_spec(cfg: _Cfg, args=None) -> WindowSpec:
    stride = getattr(args, "stride", None) if args else None
    gap = getattr(args, "gap", None) if args else None
    full_span = bool(getattr(args, "full_span", False)) if args else False
    return WindowSpec(
        window_len=cfg.get("windows", "window_len", 2, int),
        stride=stride if stride is not None else cfg.get("windows", "stride", 1, int),
        gap=gap if gap is not None else cfg.get("windows", "gap", 1, int),
        full_span=full_span or cfg.get("windows", "full_span", False, bool),
    )


def _scene_config(cfg: _Cfg, seed: int) -> SceneConfig:
    return SceneConfig(
        image_size=cfg.get("synth", "image_size", 64, int),
        frame_count=cfg.get("synth", "frame_count", 8, int),
        max_objects=cfg.get("synth", "max_objects", 3, int),
        num_classes=cfg.get("synth", "classes", cfg.get("vocab", "classes", 2, int), int),
        velocity_range=(
            cfg.get("synth", "velocity_min", 0.5, float),
            cfg.get("synth", "velocity_max", 2.5, float),
        ),
        enter_prob=cfg.get("synth", "enter_prob", 0.15, float),
        exit_prob=cfg.get("synth", "exit_prob", 0.15, float),
        occlude_prob=cfg.get("synth", "occlude_prob", 0.25, float),
        seed=seed,
    )


def _model_config(cfg: _Cfg, vocab, spec: WindowSpec, fusion=None, seed=0) -> ModelConfig:
    # cross-field consistency: V comes from the vocabulary, N from the window spec
    return ModelConfig(
        vocab_size=vocab.size,
        image_size=cfg.get("synth", "image_size", 64, int),
        patch_size=cfg.get("model", "patch_size", 8, int),
        d_model=cfg.get("model", "d_model", 64, int),
        d_backbone=cfg.get("model", "d_backbone", 32, int),
        enc_layers=cfg.get("model", "enc_layers", 2, int),
        dec_layers=cfg.get("model", "dec_layers", 2, int),
        heads=cfg.get("model", "heads", 4, int),
        window_len=spec.window_len,
        fusion=fusion or cfg.get("model", "fusion", "middle-pairwise"),
        max_seq_len=cfg.get("model", "max_seq_len", 64, int),
        batch_size=cfg.get("model", "batch_size", 8, int),
        mlp_ratio=cfg.get("model", "mlp_ratio", 4, int),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _Cfg(args.config)
    seed = _resolve_seed(args, cfg)
    count = args.clips if args.clips is not None else cfg.get("synth", "clips", 10, int)
    os.makedirs(args.out, exist_ok=True)
    if count == 0:
        print("warning: clip count is 0; wrote an empty dataset", file=sys.stderr)
        return 0
    for i in range(count):
        scene = _scene_config(cfg, seed + i)
        clip = generate_clip(scene)
        export_clip(clip, os.path.join(args.out, f"clip_{i:04d}"))
    print(f"wrote {count} clips to {args.out}")
    return 0


def _check_classes(data_root: str, num_classes: int) -> None:
    """Class-range validation with CSV row numbers, per clip."""
    for name in sorted(os.listdir(data_root)):
        path = os.path.join(data_root, name, "annotations.csv")
        if not os.path.exists(path):
            continue
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader, None)
            for row_num, row in enumerate(reader, start=2):
                if int(row[2]) >= num_classes:
                    raise DataError(
                        f"{path}:{row_num}: class {row[2]} outside vocabulary with C={num_classes}"
                    )


def cmd_tokenize(args) -> int:
    cfg = _Cfg(args.config)
    seed = _resolve_seed(args, cfg)
    static = args.mode == "static"
    vocab = build_vocabulary(_vocab_config(cfg, mode=codec.MODE_2D if static else args.mode))
    spec = _window_spec(cfg, args)
    if static:
        spec = WindowSpec(window_len=1, stride=spec.stride, gap=1)
    _check_classes(args.data, vocab.config.num_classes)
    clips = load_dataset(args.data)

    manifest_path = args.manifest or os.path.splitext(args.out)[0] + ".vocab.json"
    vocab.save_manifest(manifest_path)
    rows = 0
    with open(args.out, "w") as out:
        for clip in clips:
            windows = enumerate_windows(clip.annotations.frame_count, spec)
            for w_index, window in enumerate(windows):
                tracklets = extract_window_tracklets(clip.annotations, window, spec.full_span)
                order_seed = seed * 1000003 + rows
                if static:
                    objects = [
                        codec.ObjectAnnotation(box=t.slots[0], class_index=t.class_index)
                        for t in tracklets
                    ]
                    seq = codec.encode_static(objects, vocab, order_seed)
                    weights = token_weights(seq.tokens, vocab, 1, equalize=args.cls_eq)
                else:
                    target_len = spec.target_len()
                    encode = codec.encode_video if vocab.mode == codec.MODE_2D else codec.encode_video_1d
                    seq = encode(tracklets, vocab, target_len, order_seed)
                    weights = token_weights(seq.tokens, vocab, target_len, equalize=args.cls_eq)
                record = {
                    "video_id": clip.video_id,
                    "window_frames": list(window.frames),
                    "tokens": seq.tokens,
                    "weights": weights,
                }
                out.write(json.dumps(record) + "\n")
                rows += 1
    print(f"wrote {rows} token rows to {args.out} (vocabulary manifest: {manifest_path})")
    return 0


def cmd_train(args) -> int:
    cfg = _Cfg(args.config)
    seed = _resolve_seed(args, cfg)
    vocab = build_vocabulary(_vocab_config(cfg))
    spec = _window_spec(cfg, args)
    config = _model_config(cfg, vocab, spec, fusion=args.fusion, seed=seed)
    clips = load_dataset(args.data)
    steps = args.steps if args.steps is not None else cfg.get("train", "steps", 2000, int)
    lr = args.lr if args.lr is not None else cfg.get("train", "lr", 1e-3, float)
    log_path = args.log or args.out + ".log.csv"

    try:
        _, result = run_training(
            clips,
            vocab,
            spec,
            config,
            steps=steps,
            base_lr=lr,
            seed=seed,
            cls_eq=args.cls_eq or cfg.get("train", "cls_eq", False, bool),
            freeze_backbone=args.freeze_backbone or cfg.get("train", "freeze_backbone", False, bool),
            checkpoint_path=args.out,
            log_path=log_path,
            checkpoint_every=cfg.get("train", "checkpoint_every", 500, int),
            resume_from=args.resume,
            quiet=args.quiet,
        )
    except NumericError as e:
        dump = args.out + ".diagnostics.json"
        with open(dump, "w") as f:
            json.dump({"error": str(e)}, f, indent=2)
        print(f"training aborted: {e}; last good checkpoint retained, see {dump}", file=sys.stderr)
        raise
    # the checkpoint needs the vocabulary to be self-contained for inference
    _attach_vocab(args.out, vocab)
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {steps} steps; final loss {final:.4f}; checkpoint {args.out}; log {log_path}")
    return 0


def _attach_vocab(ckpt_path: str, vocab) -> None:
    from .model.checkpoint import save_checkpoint

    config, tensors, meta = load_checkpoint(ckpt_path)
    meta["vocab"] = vocab.manifest()
    save_checkpoint(ckpt_path, config, tensors, meta)


def cmd_infer(args) -> int:
    cfg = _Cfg(args.config)
    config, tensors, meta = load_checkpoint(args.checkpoint)
    if "vocab" not in meta:
        raise DataError(f"{args.checkpoint}: checkpoint carries no vocabulary manifest")
    vocab = codec.Vocabulary.from_manifest(meta["vocab"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}

    file_n = cfg.get("windows", "window_len", None, int)
    if file_n is not None and file_n != config.window_len:
        raise ConfigurationError(
            f"requested window length {file_n} but the checkpoint was trained with N={config.window_len}"
        )
    spec = WindowSpec(
        window_len=config.window_len,
        stride=args.stride if args.stride is not None else cfg.get("windows", "stride", 1, int),
        gap=args.gap if args.gap is not None else cfg.get("windows", "gap", 1, int),
        full_span=args.full_span or cfg.get("windows", "full_span", False, bool),
    )
    clips = load_dataset(args.data)
    strategy = DecodeStrategy(
        kind=args.strategy,
        top_p=args.top_p,
        temperature=args.temperature,
        seed=_resolve_seed(args, cfg),
    )
    result = infer_dataset(
        clips,
        params,
        config,
        vocab,
        spec,
        strategy=strategy,
        merge_policy=args.merge_policy,
        merge_iou=args.merge_iou,
        score_mode=args.score_mode,
    )
    write_detections(args.out, detection_records(result))
    n_merged = sum(len(v) for v in result.merged.values())
    print(f"wrote {n_merged} merged detections to {args.out}")
    if args.dump_raw:
        write_detections(args.dump_raw, raw_detection_records(result, spec))
        print(f"wrote raw per-window detections to {args.dump_raw}")
    for diag in result.diagnostics[:10]:
        print(f"note: {diag}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    cfg = _Cfg(args.config)
    match = MatchConfig(
        iou_threshold=args.iou if args.iou is not None else cfg.get("eval", "iou", 0.5, float),
        class_agnostic=args.class_agnostic or cfg.get("eval", "class_agnostic", False, bool),
        granularity=args.granularity or cfg.get("eval", "granularity", "per-frame"),
    )
    clips = load_dataset(args.data)
    detections = read_detections(args.detections)
    report = evaluate_detections(detections, clips, match)
    write_report(report, args.out, args.pr_csv)
    shown = {k: v for k, v in report.items() if k != "curve"}
    print(json.dumps(shown, indent=2))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokentrack",
        description="Token-based video object detection pipelines on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help=f"seed (overrides config and ${SEED_ENV_VAR})")

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--clips", type=int, help="number of clips")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tokenize", help="dump token sequences for every temporal window")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--manifest", help="vocabulary manifest path (default: alongside --out)")
    p.add_argument("--mode", choices=["static", "2d", "1d"], default="2d")
    p.add_argument("--full-span", action="store_true", dest="full_span")
    p.add_argument("--cls-eq", action="store_true", dest="cls_eq")
    p.add_argument("--stride", type=int)
    p.add_argument("--gap", type=int)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train", help="train a detection model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--fusion", choices=list(FUSION_MODES))
    p.add_argument("--cls-eq", action="store_true", dest="cls_eq")
    p.add_argument("--freeze-backbone", action="store_true", dest="freeze_backbone")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stride", type=int)
    p.add_argument("--gap", type=int)
    p.add_argument("--full-span", action="store_true", dest="full_span")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="decode windows and merge detections")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="detections JSONL path")
    p.add_argument("--stride", type=int, help="inference stride T override")
    p.add_argument("--gap", type=int)
    p.add_argument("--full-span", action="store_true", dest="full_span")
    p.add_argument("--dump-raw", dest="dump_raw", help="also write unmerged per-window detections")
    p.add_argument("--strategy", choices=["greedy", "nucleus"], default="greedy")
    p.add_argument("--top-p", type=float, default=0.9, dest="top_p")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--merge-policy", choices=["per-frame", "tracklet"], default="per-frame")
    p.add_argument("--merge-iou", type=float, default=0.5)
    p.add_argument("--score-mode", choices=["class", "geometric"], default="class")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score detections against ground truth")
    common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metric report JSON path")
    p.add_argument("--pr-csv", dest="pr_csv", help="optional PR-curve CSV path")
    p.add_argument("--iou", type=float)
    p.add_argument("--granularity", choices=["per-frame", "tracklet"])
    p.add_argument("--class-agnostic", action="store_true", dest="class_agnostic")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DataError, EncodingError, RangeError, ContractViolation, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
