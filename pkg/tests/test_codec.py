import math

import numpy as np
import pytest

from conftest import random_box, random_tracklets
from tokentrack import codec
from tokentrack.codec import (
    Box,
    ObjectAnnotation,
    TokenSequence,
    TrackletAnnotation,
    VocabConfig,
    build_vocabulary,
    decode_video,
    dequantize,
    encode_static,
    encode_video,
    encode_video_1d,
    flatten_coord,
    quantize,
    token_weights,
    unflatten_coord,
)
from tokentrack.errors import ConfigurationError, DegenerateInputWarning, EncodingError, RangeError


def vocab_2d(bins=2000, classes=1, reserved=3):
    return build_vocabulary(VocabConfig(bins=bins, num_classes=classes, reserved=reserved))


def vocab_1d(bins=160, classes=2, reserved=3):
    return build_vocabulary(
        VocabConfig(bins=bins, num_classes=classes, reserved=reserved, mode=codec.MODE_1D)
    )


# ---------------------------------------------------------------------------
# vocabulary


def test_vocab_size_paper_default():
    # H=2K with V=3K implies a 999-token reserved block for C=1
    v = vocab_2d(bins=2000, classes=1, reserved=999)
    assert v.size == 3000


def test_vocab_size_smallest_legal():
    assert vocab_2d(bins=2, classes=1, reserved=3).size == 6


def test_vocab_size_1d_law():
    # V = H^2 + C + r evaluated at H=160, C=2, r=3
    assert vocab_1d(bins=160, classes=2, reserved=3).size == 160 * 160 + 2 + 3


def test_vocab_ranges_partition():
    for v in (vocab_2d(bins=7, classes=3, reserved=4), vocab_1d(bins=5, classes=2, reserved=5)):
        kinds = [(v.is_coord(t), v.is_class(t), v.is_reserved(t)) for t in range(v.size)]
        assert all(sum(k) == 1 for k in kinds)
        assert v.coord_end - v.coord_start == v.config.coord_tokens
        assert {v.eos, v.pad, v.na} <= set(range(v.class_end, v.size))


def test_vocab_class_token_roundtrip():
    v = vocab_2d(bins=10, classes=5)
    for c in range(5):
        assert v.class_index(v.class_token(c)) == c


@pytest.mark.parametrize("bad", [dict(bins=1), dict(num_classes=0), dict(reserved=2)])
def test_vocab_invalid_config(bad):
    kwargs = dict(bins=10, num_classes=2, reserved=3)
    kwargs.update(bad)
    with pytest.raises(ConfigurationError):
        VocabConfig(**kwargs)


def test_vocab_manifest_roundtrip(tmp_path):
    v = vocab_1d(bins=31, classes=4, reserved=6)
    path = tmp_path / "vocab.json"
    v.save_manifest(path)
    loaded = codec.Vocabulary.load_manifest(path)
    assert loaded == v
    assert loaded.manifest() == v.manifest()


# ---------------------------------------------------------------------------
# quantization


def test_quantize_boundaries():
    assert quantize(0.0, 2000) == 0
    assert quantize(1.0, 2000) == 1999


def test_quantize_round_half_away():
    # round(0.3 * 1999) = round(599.7) = 600
    assert quantize(0.3, 2000) == 600
    # exact halves round away from zero
    assert quantize(0.5, 4) == 2  # 0.5 * 3 = 1.5 -> 2


def test_quantize_out_of_range_clamps_with_warning():
    with pytest.warns(DegenerateInputWarning):
        assert quantize(1.2, 100) == 99
    with pytest.warns(DegenerateInputWarning):
        assert quantize(-0.1, 100) == 0


def test_dequantize_examples():
    assert dequantize(0, 2000) == 0.0
    assert dequantize(1999, 2000) == 1.0
    assert dequantize(600, 2000) == pytest.approx(600 / 1999)
    with pytest.raises(RangeError):
        dequantize(2000, 2000)


def test_quantize_dequantize_error_bound():
    rng = np.random.default_rng(7)
    for bins in (160, 2000):
        xs = rng.random(500)
        for x in xs:
            err = abs(dequantize(quantize(float(x), bins), bins) - x)
            assert err <= 1 / (2 * (bins - 1)) + 1e-12


def test_flatten_coord_examples():
    assert flatten_coord(0, 0, 160) == 0
    assert flatten_coord(3, 5, 160) == 3 * 160 + 5
    assert flatten_coord(159, 159, 160) == 160 * 160 - 1
    with pytest.raises(RangeError):
        flatten_coord(160, 0, 160)


def test_flatten_unflatten_bijection():
    bins = 23
    seen = set()
    for y in range(bins):
        for x in range(bins):
            idx = flatten_coord(y, x, bins)
            assert unflatten_coord(idx, bins) == (y, x)
            seen.add(idx)
    assert seen == set(range(bins * bins))


# ---------------------------------------------------------------------------
# encoding


def test_encode_static_empty():
    v = vocab_2d()
    seq = encode_static([], v)
    assert seq.tokens == [v.eos]


def test_encode_static_length_law():
    v = vocab_2d()
    objs = [ObjectAnnotation(box=Box(0.1, 0.1, 0.2, 0.2), class_index=0) for _ in range(2)]
    assert len(encode_static(objs, v).tokens) == 11


def test_encode_static_known_tokens():
    v = vocab_2d(bins=2000, classes=1)
    obj = ObjectAnnotation(box=Box(ty=0.1, lx=0.2, by=0.3, rx=0.4), class_index=0)
    seq = encode_static([obj], v)
    assert seq.tokens == [200, 400, 600, 800, v.class_token(0), v.eos]


def test_encode_static_bad_class():
    v = vocab_2d(classes=1)
    obj = ObjectAnnotation(box=Box(0.1, 0.1, 0.2, 0.2), class_index=1)
    with pytest.raises(EncodingError):
        encode_static([obj], v)


def test_encode_video_nine_tokens_for_n2():
    v = vocab_2d()
    tr = TrackletAnnotation(
        slots=(Box(0.1, 0.1, 0.2, 0.2), Box(0.15, 0.15, 0.25, 0.25)), class_index=0
    )
    seq = encode_video([tr], v, window_len=2)
    assert len(seq.tokens) == 10  # 9 object tokens + EOS
    assert seq.tokens[-1] == v.eos
    assert seq.tokens[-2] == v.class_token(0)


def test_encode_video_leave_scene_na_pattern():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    tr = TrackletAnnotation(slots=(b, b, None), class_index=0)
    seq = encode_video([tr], v, window_len=3)
    coords = [quantize(c, v.bins) for c in b.corners()]
    assert seq.tokens == coords + coords + [v.na] * 4 + [v.class_token(0), v.eos]


def test_encode_video_occlusion_pattern():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    tr = TrackletAnnotation(slots=(b, b, None, None, b), class_index=0)
    tokens = encode_video([tr], v, window_len=5).tokens
    coords = [quantize(c, v.bins) for c in b.corners()]
    assert tokens == coords * 2 + [v.na] * 8 + coords + [v.class_token(0), v.eos]


def test_encode_video_enter_scene_pattern():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    tr = TrackletAnnotation(slots=(None, None, b, b), class_index=0)
    tokens = encode_video([tr], v, window_len=4).tokens
    coords = [quantize(c, v.bins) for c in b.corners()]
    assert tokens == [v.na] * 8 + coords * 2 + [v.class_token(0), v.eos]


def test_encode_video_all_absent_rejected():
    v = vocab_2d()
    with pytest.raises(EncodingError):
        encode_video([TrackletAnnotation(slots=(None, None), class_index=0)], v, 2)


def test_encode_video_wrong_slot_count():
    v = vocab_2d()
    tr = TrackletAnnotation(slots=(Box(0.1, 0.1, 0.2, 0.2),), class_index=0)
    with pytest.raises(EncodingError):
        encode_video([tr], v, window_len=2)


def test_encode_video_1d_leave_scene():
    v = vocab_1d(bins=160, classes=1)
    b = Box(ty=0.1, lx=0.2, by=0.3, rx=0.4)
    tr = TrackletAnnotation(slots=(b, b, None), class_index=0)
    tokens = encode_video_1d([tr], v, window_len=3).tokens
    tl = flatten_coord(quantize(0.1, 160), quantize(0.2, 160), 160)
    br = flatten_coord(quantize(0.3, 160), quantize(0.4, 160), 160)
    assert tokens == [tl, br, tl, br, v.na, v.na, v.class_token(0), v.eos]


def test_encode_video_1d_lengths():
    v = vocab_1d()
    assert encode_video_1d([], v, 3).tokens == [v.eos]
    b = Box(0.1, 0.1, 0.2, 0.2)
    tr = TrackletAnnotation(slots=(b, b), class_index=0)
    assert len(encode_video_1d([tr], v, 2).tokens) == 6  # 2*2+1 plus EOS


def test_length_laws_randomized():
    rng = np.random.default_rng(11)
    v2 = vocab_2d(bins=64, classes=3)
    v1 = vocab_1d(bins=16, classes=3)
    for _ in range(300):
        n = int(rng.integers(0, 21))
        window_len = int(rng.choice([1, 2, 3, 5, 8]))
        tracklets = random_tracklets(rng, n, window_len, 3)
        assert len(encode_video(tracklets, v2, window_len).tokens) == n * (4 * window_len + 1) + 1
        assert len(encode_video_1d(tracklets, v1, window_len).tokens) == n * (2 * window_len + 1) + 1
        objs = [
            ObjectAnnotation(box=random_box(rng), class_index=int(rng.integers(3)))
            for _ in range(n)
        ]
        assert len(encode_static(objs, v2).tokens) == 5 * n + 1


# ---------------------------------------------------------------------------
# decoding


def tracklet_key(tr, places=9):
    # absent slots become empty tuples so keys stay sortable
    return (
        tuple(() if s is None else tuple(round(c, places) for c in s.corners()) for s in tr.slots),
        tr.class_index,
    )


def test_decode_empty():
    v = vocab_2d()
    tracklets, diags = decode_video([v.eos], v, 2)
    assert tracklets == [] and diags == []


def test_decode_roundtrip_leave_scene():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    original = TrackletAnnotation(slots=(b, b, None), class_index=0)
    seq = encode_video([original], v, 3)
    out, diags = decode_video(seq.tokens, v, 3)
    assert diags == []
    assert len(out) == 1
    assert out[0].presence() == (True, True, False)
    assert out[0].class_index == 0


def test_decode_invalid_class_token_skips_object():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    seq = encode_video([TrackletAnnotation(slots=(b, b), class_index=0)], v, 2)
    tokens = list(seq.tokens)
    tokens[8] = 5  # replace the class token with a coordinate token
    out, diags = decode_video(tokens, v, 2)
    assert out == []
    assert any("class token" in d for d in diags)


def test_decode_truncated_fragment_dropped():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    seq = encode_video([TrackletAnnotation(slots=(b, b), class_index=0)], v, 2)
    tokens = seq.tokens[:-1]  # drop EOS: complete object, no fragment
    out, diags = decode_video(tokens, v, 2)
    assert len(out) == 1
    tokens = seq.tokens[:5]  # mid-object cut
    out, diags = decode_video(tokens, v, 2)
    assert out == []
    assert any("truncated" in d for d in diags)


def test_decode_mixed_na_group_is_missing_frame():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    seq = encode_video([TrackletAnnotation(slots=(b, b), class_index=0)], v, 2)
    tokens = list(seq.tokens)
    tokens[4] = v.na  # corrupt one coordinate of frame 2
    out, diags = decode_video(tokens, v, 2)
    assert len(out) == 1
    assert out[0].presence() == (True, False)
    assert any("mixed" in d for d in diags)


def test_decode_inverted_box_drops_slot():
    v = vocab_2d(bins=100)
    tokens = [50, 80, 60, 10, v.class_token(0), v.eos]  # rx bin < lx bin
    out, diags = decode_video(tokens, v, 1)
    assert out == []
    assert any("inverted" in d for d in diags)


def test_decode_roundtrip_randomized_both_modes():
    rng = np.random.default_rng(23)
    for vocab, enc in ((vocab_2d(bins=160, classes=3), encode_video),
                       (vocab_1d(bins=160, classes=3), encode_video_1d)):
        tol = 1 / (2 * (vocab.bins - 1))
        for _ in range(100):
            n = int(rng.integers(0, 6))
            window_len = int(rng.choice([1, 2, 4]))
            tracklets = random_tracklets(rng, n, window_len, 3)
            seq = enc(tracklets, vocab, window_len, order_seed=int(rng.integers(1 << 30)))
            out, diags = decode_video(seq.tokens, vocab, window_len)
            assert diags == []
            assert len(out) == n
            assert sorted(t.presence() for t in tracklets) == sorted(t.presence() for t in out)
            assert sorted(t.class_index for t in tracklets) == sorted(t.class_index for t in out)
            # pair originals with decoded tracklets via the expected quantized key
            def expected_key(tr):
                return (
                    tuple(
                        ()
                        if s is None
                        else tuple(
                            round(dequantize(quantize(c, vocab.bins), vocab.bins), 9)
                            for c in s.corners()
                        )
                        for s in tr.slots
                    ),
                    tr.class_index,
                )

            by_key_in = sorted(tracklets, key=expected_key)
            by_key_out = sorted(out, key=tracklet_key)
            for a, b in zip(by_key_in, by_key_out):
                assert expected_key(a) == tracklet_key(b)
                for sa, sb in zip(a.slots, b.slots):
                    if sa is not None:
                        for ca, cb in zip(sa.corners(), sb.corners()):
                            assert abs(ca - cb) <= tol + 1e-12


def test_decode_order_seed_invariance():
    rng = np.random.default_rng(5)
    v = vocab_2d(bins=200, classes=2)
    tracklets = random_tracklets(rng, 5, 3, 2)
    seen = set()
    for seed in range(4):
        seq = encode_video(tracklets, v, 3, order_seed=seed)
        out, _ = decode_video(seq.tokens, v, 3)
        seen.add(frozenset(tracklet_key(t) for t in out))
    assert len(seen) == 1


# ---------------------------------------------------------------------------
# weights


def test_weights_equalized_video():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    seq = encode_video([TrackletAnnotation(slots=(b, b), class_index=0)], v, 2)
    w = token_weights(seq.tokens, v, 2, equalize=True)
    assert w == [1.0] * 8 + [8.0, 1.0]  # class token carries 4N = 8


def test_weights_equalized_static():
    v = vocab_2d()
    obj = ObjectAnnotation(box=Box(0.1, 0.2, 0.3, 0.4), class_index=0)
    seq = encode_static([obj], v)
    w = token_weights(seq.tokens, v, 1, equalize=True)
    assert w == [1.0, 1.0, 1.0, 1.0, 4.0, 1.0]


def test_weights_off_all_ones_pad_zero():
    v = vocab_2d()
    b = Box(0.1, 0.2, 0.3, 0.4)
    seq = encode_video([TrackletAnnotation(slots=(b, None), class_index=0)], v, 2)
    tokens = seq.tokens + [v.pad, v.pad]
    w = token_weights(tokens, v, 2, equalize=False)
    assert w == [1.0] * len(seq.tokens) + [0.0, 0.0]


def test_weights_equalized_balance_per_object():
    rng = np.random.default_rng(3)
    v = vocab_1d(bins=16, classes=2)
    for _ in range(50):
        window_len = int(rng.choice([1, 2, 3, 5]))
        tracklets = random_tracklets(rng, int(rng.integers(1, 5)), window_len, 2)
        seq = encode_video_1d(tracklets, v, window_len)
        w = token_weights(seq.tokens, v, window_len, equalize=True)
        per_obj = 2 * window_len + 1
        for k in range(len(tracklets)):
            chunk = w[k * per_obj : (k + 1) * per_obj]
            assert chunk[-1] == sum(chunk[:-1])


def test_token_sequence_invariant():
    with pytest.raises(ConfigurationError):
        TokenSequence(tokens=[1, 2], weights=[1.0])
