"""Conversion between box/tracklet annotations and discrete token sequences.

A token id space (``Vocabulary``) is laid out as coordinate tokens first,
then one token per class, then the reserved tokens EOS, PAD and NA.  In 2D
mode a box takes four coordinate tokens (ty, lx, by, rx); in 1D mode the two
corners are flattened into single tokens so a box takes two.  An object over
an N-frame window is N frame groups followed by its class token; a frame the
object is missing from is a group of NA tokens.
"""

from __future__ import annotations

import json
import math
import random
import warnings
from dataclasses import dataclass, field

from .errors import ConfigurationError, DegenerateInputWarning, EncodingError, RangeError

MODE_2D = "2d"
MODE_1D = "1d"

# reserved-token order inside the reserved block
_EOS_OFFSET = 0
_PAD_OFFSET = 1
_NA_OFFSET = 2


@dataclass(frozen=True)
class VocabConfig:
    """Vocabulary shape: H coordinate bins per axis, C classes, r reserved tokens."""

    bins: int
    num_classes: int
    reserved: int = 3
    mode: str = MODE_2D

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigurationError(f"need at least 2 coordinate bins, got {self.bins}")
        if self.num_classes < 1:
            raise ConfigurationError(f"need at least 1 class, got {self.num_classes}")
        if self.reserved < 3:
            raise ConfigurationError(
                f"need at least 3 reserved tokens (EOS/PAD/NA), got {self.reserved}"
            )
        if self.mode not in (MODE_2D, MODE_1D):
            raise ConfigurationError(f"mode must be '2d' or '1d', got {self.mode!r}")

    @property
    def coord_tokens(self) -> int:
        """Number of coordinate token ids: H in 2D mode, H^2 in 1D mode."""
        return self.bins if self.mode == MODE_2D else self.bins * self.bins

    @property
    def vocab_size(self) -> int:
        return self.coord_tokens + self.num_classes + self.reserved


@dataclass(frozen=True)
class Vocabulary:
    """Immutable id layout derived from a VocabConfig.

    Ids are contiguous: ``[0, coord_tokens)`` are coordinates,
    ``[coord_tokens, coord_tokens + C)`` are classes, the rest is reserved.
    """

    config: VocabConfig

    @property
    def size(self) -> int:
        return self.config.vocab_size

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def bins(self) -> int:
        return self.config.bins

    @property
    def coord_start(self) -> int:
        return 0

    @property
    def coord_end(self) -> int:
        return self.config.coord_tokens

    @property
    def class_start(self) -> int:
        return self.coord_end

    @property
    def class_end(self) -> int:
        return self.class_start + self.config.num_classes

    @property
    def eos(self) -> int:
        return self.class_end + _EOS_OFFSET

    @property
    def pad(self) -> int:
        return self.class_end + _PAD_OFFSET

    @property
    def na(self) -> int:
        return self.class_end + _NA_OFFSET

    def class_token(self, class_index: int) -> int:
        if not 0 <= class_index < self.config.num_classes:
            raise RangeError(f"class index {class_index} outside [0, {self.config.num_classes})")
        return self.class_start + class_index

    def class_index(self, token: int) -> int:
        if not self.is_class(token):
            raise RangeError(f"token {token} is not a class token")
        return token - self.class_start

    def is_coord(self, token: int) -> bool:
        return self.coord_start <= token < self.coord_end

    def is_class(self, token: int) -> bool:
        return self.class_start <= token < self.class_end

    def is_reserved(self, token: int) -> bool:
        return self.class_end <= token < self.size

    def manifest(self) -> dict:
        """Self-describing JSON manifest for token dumps."""
        return {
            "H": self.config.bins,
            "C": self.config.num_classes,
            "r": self.config.reserved,
            "mode": self.config.mode,
            "ranges": {
                "coord": [self.coord_start, self.coord_end],
                "class": [self.class_start, self.class_end],
                "reserved": [self.class_end, self.size],
                "eos": self.eos,
                "pad": self.pad,
                "na": self.na,
            },
        }

    @staticmethod
    def from_manifest(manifest: dict) -> "Vocabulary":
        cfg = VocabConfig(
            bins=manifest["H"],
            num_classes=manifest["C"],
            reserved=manifest["r"],
            mode=manifest["mode"],
        )
        return build_vocabulary(cfg)

    def save_manifest(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.manifest(), f, indent=2)
            f.write("\n")

    @staticmethod
    def load_manifest(path) -> "Vocabulary":
        with open(path) as f:
            return Vocabulary.from_manifest(json.load(f))


def build_vocabulary(config: VocabConfig) -> Vocabulary:
    """Lay out token ids for a config (coordinates, then classes, then reserved)."""
    return Vocabulary(config)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with normalized corners: top-left (lx, ty), bottom-right (rx, by)."""

    ty: float
    lx: float
    by: float
    rx: float

    def is_valid(self) -> bool:
        return 0.0 <= self.lx <= self.rx <= 1.0 and 0.0 <= self.ty <= self.by <= 1.0

    def corners(self) -> tuple[float, float, float, float]:
        return (self.ty, self.lx, self.by, self.rx)


@dataclass(frozen=True)
class ObjectAnnotation:
    box: Box
    class_index: int


@dataclass(frozen=True)
class TrackletAnnotation:
    """One object's per-frame optional boxes over a temporal window.

    ``slots[i] is None`` means the object has no box in the window's i-th frame.
    """

    slots: tuple
    class_index: int
    track_id: object = None

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))

    @property
    def num_present(self) -> int:
        return sum(1 for s in self.slots if s is not None)

    def presence(self) -> tuple[bool, ...]:
        return tuple(s is not None for s in self.slots)


@dataclass
class TokenSequence:
    """Parallel lists of token ids and per-token training weights."""

    tokens: list[int]
    weights: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.weights:
            self.weights = [1.0] * len(self.tokens)
        if len(self.tokens) != len(self.weights):
            raise ConfigurationError("tokens and weights must have the same length")

    def __len__(self) -> int:
        return len(self.tokens)


def quantize(x: float, bins: int) -> int:
    """Map a normalized coordinate to a bin index via round-half-away-from-zero.

    Inputs outside [0, 1] are clamped with a DegenerateInputWarning rather than
    rejected; real annotations commonly overshoot image bounds by a pixel.
    """
    if x < 0.0 or x > 1.0:
        warnings.warn(
            f"coordinate {x} outside [0, 1]; clamping", DegenerateInputWarning, stacklevel=2
        )
        x = min(max(x, 0.0), 1.0)
    b = math.floor(x * (bins - 1) + 0.5)
    return min(max(b, 0), bins - 1)


def dequantize(bin_index: int, bins: int) -> float:
    """Inverse of quantize: bin center bin/(H-1), exact at both boundaries."""
    if not 0 <= bin_index < bins:
        raise RangeError(f"bin {bin_index} outside [0, {bins})")
    return bin_index / (bins - 1)


def flatten_coord(y_bin: int, x_bin: int, bins: int) -> int:
    """Row-major flattening of a (y, x) bin pair into a single index in [0, H^2)."""
    if not 0 <= y_bin < bins:
        raise RangeError(f"y bin {y_bin} outside [0, {bins})")
    if not 0 <= x_bin < bins:
        raise RangeError(f"x bin {x_bin} outside [0, {bins})")
    return y_bin * bins + x_bin


def unflatten_coord(index: int, bins: int) -> tuple[int, int]:
    """Inverse of flatten_coord."""
    if not 0 <= index < bins * bins:
        raise RangeError(f"flat index {index} outside [0, {bins * bins})")
    return divmod(index, bins)


def _permuted(items: list, order_seed: int) -> list:
    order = list(range(len(items)))
    random.Random(order_seed).shuffle(order)
    return [items[i] for i in order]


def _box_tokens_2d(box: Box, bins: int) -> list[int]:
    return [quantize(c, bins) for c in box.corners()]


def _box_tokens_1d(box: Box, bins: int) -> list[int]:
    tl = flatten_coord(quantize(box.ty, bins), quantize(box.lx, bins), bins)
    br = flatten_coord(quantize(box.by, bins), quantize(box.rx, bins), bins)
    return [tl, br]


def _check_class(class_index: int, vocab: Vocabulary) -> None:
    if not 0 <= class_index < vocab.config.num_classes:
        raise EncodingError(
            f"class index {class_index} outside [0, {vocab.config.num_classes})"
        )


def encode_static(
    objects: list[ObjectAnnotation], vocab: Vocabulary, order_seed: int = 0
) -> TokenSequence:
    """Encode single-image objects as [ty, lx, by, rx, cls] per object plus EOS.

    Object order is a seed-determined permutation so training can resample it
    per epoch.  Total length is exactly 5n + 1.
    """
    if vocab.mode != MODE_2D:
        raise EncodingError("encode_static requires a 2D-mode vocabulary")
    tokens: list[int] = []
    for obj in _permuted(list(objects), order_seed):
        _check_class(obj.class_index, vocab)
        tokens.extend(_box_tokens_2d(obj.box, vocab.bins))
        tokens.append(vocab.class_token(obj.class_index))
    tokens.append(vocab.eos)
    return TokenSequence(tokens)


def _encode_tracklets(
    tracklets: list[TrackletAnnotation],
    vocab: Vocabulary,
    window_len: int,
    order_seed: int,
    group_size: int,
    box_tokens,
) -> TokenSequence:
    tokens: list[int] = []
    for tr in _permuted(list(tracklets), order_seed):
        if len(tr.slots) != window_len:
            raise EncodingError(
                f"tracklet has {len(tr.slots)} slots, window expects {window_len}"
            )
        if tr.num_present == 0:
            raise EncodingError("tracklet with all slots absent cannot be encoded")
        _check_class(tr.class_index, vocab)
        for slot in tr.slots:
            if slot is None:
                tokens.extend([vocab.na] * group_size)
            else:
                tokens.extend(box_tokens(slot, vocab.bins))
        tokens.append(vocab.class_token(tr.class_index))
    tokens.append(vocab.eos)
    return TokenSequence(tokens)


def encode_video(
    tracklets: list[TrackletAnnotation],
    vocab: Vocabulary,
    window_len: int,
    order_seed: int = 0,
) -> TokenSequence:
    """Encode tracklets as N groups of 4 coordinate tokens plus a class token each.

    Missing frames emit 4 NA tokens.  Total length is exactly n(4N + 1) + 1.
    """
    if vocab.mode != MODE_2D:
        raise EncodingError("encode_video requires a 2D-mode vocabulary")
    return _encode_tracklets(tracklets, vocab, window_len, order_seed, 4, _box_tokens_2d)


def encode_video_1d(
    tracklets: list[TrackletAnnotation],
    vocab: Vocabulary,
    window_len: int,
    order_seed: int = 0,
) -> TokenSequence:
    """1D-mode video encoding: 2 flattened corner tokens per frame, n(2N + 1) + 1 total."""
    if vocab.mode != MODE_1D:
        raise EncodingError("encode_video_1d requires a 1D-mode vocabulary")
    return _encode_tracklets(tracklets, vocab, window_len, order_seed, 2, _box_tokens_1d)


@dataclass(frozen=True)
class DecodedObject:
    """One parsed object plus where it sat in the token stream."""

    tracklet: TrackletAnnotation
    token_start: int
    class_token_pos: int


def _decode_frame_group(group: list[int], vocab: Vocabulary, diagnostics: list[str], pos: int):
    """Return a Box, or None for a missing frame; append diagnostics for anomalies."""
    if any(t == vocab.na for t in group):
        # NA is all-or-nothing per frame; a mixed group is treated as fully missing
        if not all(t == vocab.na for t in group):
            diagnostics.append(f"mixed NA/coordinate frame group at token {pos}")
        return None
    if not all(vocab.is_coord(t) for t in group):
        diagnostics.append(f"non-coordinate token in coordinate position at token {pos}")
        raise _SkipObject
    if vocab.mode == MODE_2D:
        ty, lx, by, rx = (dequantize(t, vocab.bins) for t in group)
    else:
        ty_b, lx_b = unflatten_coord(group[0], vocab.bins)
        by_b, rx_b = unflatten_coord(group[1], vocab.bins)
        ty, lx = dequantize(ty_b, vocab.bins), dequantize(lx_b, vocab.bins)
        by, rx = dequantize(by_b, vocab.bins), dequantize(rx_b, vocab.bins)
    if rx < lx or by < ty:
        diagnostics.append(f"inverted box corners at token {pos}; slot dropped")
        return None
    return Box(ty=ty, lx=lx, by=by, rx=rx)


class _SkipObject(Exception):
    pass


def parse_video_tokens(
    tokens: list[int], vocab: Vocabulary, window_len: int
) -> tuple[list[DecodedObject], list[str]]:
    """Greedy parse of raw model output into objects with token positions.

    Never raises on malformed input: anomalies are reported as diagnostics and
    structurally invalid objects are skipped.
    """
    group_size = 4 if vocab.mode == MODE_2D else 2
    obj_len = group_size * window_len + 1
    decoded: list[DecodedObject] = []
    diagnostics: list[str] = []

    pos = 0
    n = len(tokens)
    while pos < n:
        if tokens[pos] == vocab.eos:
            break
        chunk = tokens[pos : pos + obj_len]
        if len(chunk) < obj_len or vocab.eos in chunk:
            diagnostics.append(f"truncated object fragment at token {pos} dropped")
            break
        try:
            slots = []
            for g in range(window_len):
                group = chunk[g * group_size : (g + 1) * group_size]
                slots.append(_decode_frame_group(group, vocab, diagnostics, pos + g * group_size))
            cls_tok = chunk[-1]
            if not vocab.is_class(cls_tok):
                diagnostics.append(f"invalid class token {cls_tok} at token {pos + obj_len - 1}")
                raise _SkipObject
            if all(s is None for s in slots):
                diagnostics.append(f"object at token {pos} has no present frames; skipped")
                raise _SkipObject
            tracklet = TrackletAnnotation(
                slots=tuple(slots), class_index=vocab.class_index(cls_tok)
            )
            decoded.append(
                DecodedObject(
                    tracklet=tracklet, token_start=pos, class_token_pos=pos + obj_len - 1
                )
            )
        except _SkipObject:
            pass
        pos += obj_len
    return decoded, diagnostics


def decode_video(
    tokens: list[int], vocab: Vocabulary, window_len: int
) -> tuple[list[TrackletAnnotation], list[str]]:
    """Inverse of encode_video / encode_video_1d over arbitrary model output."""
    decoded, diagnostics = parse_video_tokens(tokens, vocab, window_len)
    return [d.tracklet for d in decoded], diagnostics


def token_weights(
    tokens: list[int], vocab: Vocabulary, window_len: int, equalize: bool = False
) -> list[float]:
    """Per-token training weights for an encoded sequence.

    Without equalization every non-PAD token has weight 1.  With equalization a
    class token carries the combined weight of its object's coordinate tokens:
    4N in 2D mode, 2N in 1D mode.
    """
    class_weight = 1.0
    if equalize:
        per_box = 4 if vocab.mode == MODE_2D else 2
        class_weight = float(per_box * window_len)
    out = []
    for t in tokens:
        if t == vocab.pad:
            out.append(0.0)
        elif vocab.is_class(t):
            out.append(class_weight)
        else:
            out.append(1.0)
    return out
