import pytest

from tokentrack.codec import Box
from tokentrack.errors import ConfigurationError, DataError
from tokentrack.windows import (
    TemporalWindow,
    TrackAnnotation,
    VideoAnnotations,
    WindowSpec,
    coverage,
    enumerate_windows,
    extract_window_tracklets,
    load_annotations,
    save_annotations,
)


def frames_of(windows):
    return [w.frames for w in windows]


def test_enumerate_basic_sliding():
    spec = WindowSpec(window_len=3, stride=1, gap=1)
    assert frames_of(enumerate_windows(6, spec)) == [
        (1, 2, 3),
        (2, 3, 4),
        (3, 4, 5),
        (4, 5, 6),
    ]


def test_enumerate_strided_gapped():
    spec = WindowSpec(window_len=6, stride=3, gap=2)
    assert frames_of(enumerate_windows(14, spec)) == [
        (1, 3, 5, 7, 9, 11),
        (4, 6, 8, 10, 12, 14),
    ]


def test_enumerate_wide_gap():
    spec = WindowSpec(window_len=3, stride=1, gap=6)
    assert frames_of(enumerate_windows(14, spec)) == [(1, 7, 13), (2, 8, 14)]


def test_enumerate_tail_window():
    spec = WindowSpec(window_len=3, stride=3, gap=1)
    assert frames_of(enumerate_windows(7, spec)) == [(1, 2, 3), (4, 5, 6), (5, 6, 7)]


def test_enumerate_too_short_warns_empty():
    spec = WindowSpec(window_len=5, stride=1, gap=2)  # span 9
    with pytest.warns(UserWarning, match="shorter than window span"):
        assert enumerate_windows(8, spec) == []


def test_window_spec_validation():
    with pytest.raises(ConfigurationError):
        WindowSpec(window_len=0)
    with pytest.raises(ConfigurationError):
        WindowSpec(window_len=2, stride=0)
    with pytest.raises(ConfigurationError):
        WindowSpec(window_len=2, gap=0)


def test_window_spans_inside_video():
    for f_count, spec in [
        (20, WindowSpec(3, 2, 2)),
        (11, WindowSpec(4, 3, 1)),
        (30, WindowSpec(5, 7, 2)),
    ]:
        windows = enumerate_windows(f_count, spec)
        assert all(1 <= w.first and w.last <= f_count for w in windows)
        assert windows[-1].last == f_count  # tail reaches the end
        for w in windows:
            diffs = {b - a for a, b in zip(w.frames, w.frames[1:])}
            assert diffs == {spec.gap}
            assert len(w.frames) == spec.window_len


def test_coverage_ramps():
    counts = coverage(10, WindowSpec(3, 1, 1))
    assert counts == [1, 2, 3, 3, 3, 3, 3, 3, 2, 1]


def test_coverage_tiling_partition():
    counts = coverage(6, WindowSpec(3, 3, 1))
    assert counts == [1] * 6


def test_coverage_wide_gap():
    # windows are (1,7,13) and (2,8,14): only their six member frames are covered,
    # and a second window containing frame 7 would need frame 19 > F
    counts = coverage(14, WindowSpec(3, 1, 6))
    expected = [0] * 14
    for f in (1, 7, 13, 2, 8, 14):
        expected[f - 1] = 1
    assert counts == expected


def test_coverage_interior_redundancy_property():
    # T=1, G=1: interior frames are covered exactly N times
    for n in (2, 3, 5):
        f_count = 4 * n
        counts = coverage(f_count, WindowSpec(n, 1, 1))
        for f in range(n, f_count - n + 2):
            assert counts[f - 1] == n


def box(v):
    return Box(ty=v, lx=v, by=v + 0.1, rx=v + 0.1)


def make_annotations():
    ann = VideoAnnotations(frame_count=13, class_names=["a", "b"])
    ann.tracks["long"] = TrackAnnotation(
        class_index=0, boxes={f: box(f / 20) for f in range(1, 11)}
    )
    ann.tracks["short"] = TrackAnnotation(class_index=1, boxes={1: box(0.5), 2: box(0.55)})
    ann.tracks["full"] = TrackAnnotation(
        class_index=0, boxes={f: box(f / 30) for f in range(1, 14)}
    )
    return ann


def test_extract_all_present():
    ann = make_annotations()
    out = extract_window_tracklets(ann, TemporalWindow((1, 2, 3)))
    by_id = {t.track_id: t for t in out}
    assert by_id["long"].presence() == (True, True, True)


def test_extract_leaves_scene():
    ann = make_annotations()
    out = extract_window_tracklets(ann, TemporalWindow((1, 2, 3)))
    by_id = {t.track_id: t for t in out}
    assert by_id["short"].presence() == (True, True, False)


def test_extract_absent_track_omitted():
    ann = make_annotations()
    out = extract_window_tracklets(ann, TemporalWindow((11, 12, 13)))
    ids = {t.track_id for t in out}
    assert ids == {"full"}  # "long" ends at 10, "short" at 2


def test_extract_full_span_thirteen_frames():
    ann = make_annotations()
    window = TemporalWindow((1, 7, 13))
    out = extract_window_tracklets(ann, window, full_span=True)
    by_id = {t.track_id: t for t in out}
    assert len(by_id["full"].slots) == 13
    assert by_id["full"].presence() == (True,) * 13
    # the 10-frame track exists in the span but not beyond frame 10
    assert by_id["long"].presence() == (True,) * 10 + (False,) * 3


def test_extract_never_all_absent():
    ann = make_annotations()
    for start in range(1, 11):
        window = TemporalWindow((start, start + 1, start + 2))
        for t in extract_window_tracklets(ann, window):
            assert t.num_present >= 1


def test_csv_roundtrip(tmp_path):
    ann = make_annotations()
    csv_path, sidecar = tmp_path / "a.csv", tmp_path / "a.json"
    save_annotations(ann, csv_path, sidecar)
    loaded = load_annotations(csv_path, sidecar)
    assert loaded.frame_count == ann.frame_count
    assert loaded.class_names == ann.class_names
    assert set(loaded.tracks) == set(ann.tracks)
    for tid in ann.tracks:
        assert loaded.tracks[tid].class_index == ann.tracks[tid].class_index
        assert loaded.tracks[tid].boxes == ann.tracks[tid].boxes


def test_csv_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("frame,track\n1,2\n")
    s = tmp_path / "bad.json"
    s.write_text('{"frame_count": 3}')
    with pytest.raises(DataError):
        load_annotations(p, s)


def test_annotations_validate_frame_range():
    ann = VideoAnnotations(frame_count=2)
    ann.tracks["t"] = TrackAnnotation(class_index=0, boxes={3: box(0.1)})
    with pytest.raises(DataError):
        ann.validate()
