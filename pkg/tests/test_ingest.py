import numpy as np
import pytest
from oracles import logistic

from gpforecast.exceptions import FormatError, TooManyBadRows
from gpforecast.ingest import (
    WINDOW_LEN,
    WINDOW_TIMES,
    ManeuverWindow,
    RawTrajectoryRow,
    denormalize,
    extract_lane_changes,
    normalize,
    parse_trajectories,
    read_key_value,
    read_window,
    synth_corpus,
    write_raw_trajectories,
    write_window,
)


def _row_line(vid, frame, x, lane, sep=" "):
    fields = ["0"] * 18
    fields[0], fields[1], fields[4], fields[13] = str(vid), str(frame), repr(x), str(lane)
    return sep.join(fields)


def test_parse_golden_fixture(tmp_path):
    path = tmp_path / "golden.csv"
    header = ",".join(f"col{i}" for i in range(18))
    path.write_text("\n".join([
        header,
        _row_line(7, 101, 12.5, 2, ","),
        _row_line(3, 50, 6.25, 1, ","),
        _row_line(7, 100, 12.0, 2, ","),
    ]) + "\n")
    parsed = parse_trajectories(path)
    assert parsed.n_malformed == 0
    assert parsed.rows == [
        RawTrajectoryRow(3, 50, 6.25, 1),
        RawTrajectoryRow(7, 100, 12.0, 2),
        RawTrajectoryRow(7, 101, 12.5, 2),
    ]


def test_parse_custom_column_map(tmp_path):
    path = tmp_path / "small.txt"
    path.write_text("1 10 2 5.5\n1 11 2 5.75\n")
    parsed = parse_trajectories(path, {"vehicle_id": 0, "frame_id": 1, "lane_id": 2, "lateral_pos": 3})
    assert parsed.rows[1] == RawTrajectoryRow(1, 11, 5.75, 2)


def test_parse_tolerates_one_bad_line_in_1000(tmp_path):
    lines = [_row_line(1, 1000 + i, 10.0 + 0.01 * i, 2) for i in range(999)]
    lines.insert(500, "1 garbage")
    path = tmp_path / "traj.txt"
    path.write_text("\n".join(lines) + "\n")
    parsed = parse_trajectories(path)
    assert len(parsed.rows) == 999
    assert parsed.n_malformed == 1


def test_parse_too_many_bad_rows(tmp_path):
    lines = [_row_line(1, i, 1.0, 2) for i in range(98)] + ["x y z"] * 2
    path = tmp_path / "bad.txt"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(TooManyBadRows):
        parse_trajectories(path)


def test_parse_empty_file(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.raises(FormatError):
        parse_trajectories(path)


def test_parse_too_few_columns(tmp_path):
    path = tmp_path / "narrow.csv"
    path.write_text("1,2,3\n4,5,6\n")
    with pytest.raises(FormatError):
        parse_trajectories(path)


def _track(vid, ys, lanes, start=100):
    return [RawTrajectoryRow(vid, start + i, float(y), int(l)) for i, (y, l) in enumerate(zip(ys, lanes))]


def test_single_lane_vehicle_yields_nothing():
    assert extract_lane_changes(_track(1, np.zeros(80), [3] * 80)) == []


def test_clean_sigmoid_transition_yields_one_window():
    # 81 frames, lane change reported at frame index 40 (t = 4.0 s), logistic centred there
    n, k = 81, 40
    ts = np.arange(n) / 10
    ys = [24.0 + logistic(t, D=10.0, k=4.0, t0=4.0) for t in ts]
    lanes = [2] * k + [3] * (n - k)
    (w,) = extract_lane_changes(_track(5, ys, lanes))
    expected = logistic(5.5, t0=4.0) - logistic(2.5, t0=4.0)  # 10 * (s(6) - s(-6))
    assert w.displacement == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(9.9505, abs=1e-4)
    assert (w.lane_from, w.lane_to, w.direction, w.vehicle_id) == (2, 3, 1, 5)
    np.testing.assert_array_equal(w.t, WINDOW_TIMES)
    assert w.y[0] == pytest.approx(ys[k - 15])
    w.validate()


def test_transition_without_left_context():
    ys = np.linspace(0, 10, 60)
    lanes = [1] * 10 + [2] * 50
    assert extract_lane_changes(_track(1, ys, lanes)) == []


def test_second_transition_in_window_rejected():
    ys = np.linspace(0, 10, 60)
    lanes = [1] * 20 + [2] * 5 + [3] * 35
    assert extract_lane_changes(_track(1, ys, lanes)) == []


def test_gap_in_frames_rejected():
    rows = _track(1, np.linspace(0, 10, 60), [1] * 30 + [2] * 30)
    del rows[25]
    assert extract_lane_changes(rows) == []


def test_displacement_band_enforced():
    ys = np.concatenate([np.zeros(30), np.full(30, 3.0)])
    assert extract_lane_changes(_track(1, ys, [1] * 30 + [2] * 30)) == []
    assert len(extract_lane_changes(_track(1, ys, [1] * 30 + [2] * 30), band=(2.0, 4.0))) == 1


def test_normalize_examples():
    ys = 24.3 - 10.0 * WINDOW_TIMES / 3.0
    w = ManeuverWindow("r2l", WINDOW_TIMES, ys, direction=-1)
    n = normalize(w)
    assert n.y[0] == 0.0 and n.displacement == pytest.approx(10.0)
    assert n.direction == -1
    np.testing.assert_allclose(denormalize(n), ys, atol=1e-12)
    assert normalize(n) is n
    np.testing.assert_array_equal(normalize(normalize(w)).y, n.y)
    already = ManeuverWindow("ok", WINDOW_TIMES, 10 * WINDOW_TIMES / 3)
    assert normalize(already) is already


def test_window_validation_errors():
    with pytest.raises(ValueError):
        ManeuverWindow("short", WINDOW_TIMES[:30], np.zeros(30)).validate()
    with pytest.raises(ValueError):
        ManeuverWindow("flat", WINDOW_TIMES, np.zeros(WINDOW_LEN)).validate()


def test_synth_deterministic():
    a = synth_corpus(40, seed=7)
    b = synth_corpus(40, seed=7)
    assert [w.maneuver_id for w in a] == [w.maneuver_id for w in b]
    assert all(x.y.tobytes() == y.y.tobytes() for x, y in zip(a, b))
    assert synth_corpus(3, seed=8)[0].y.tobytes() != a[0].y.tobytes()


def test_synth_noise_free_displacement():
    corpus = synth_corpus(5, seed=1, noise_sigma=0.0, shape_jitter=0.0)
    expected = logistic(3.0) - logistic(0.0)
    for w in corpus:
        np.testing.assert_array_equal(w.y, corpus[0].y)
        assert w.displacement == pytest.approx(expected, rel=1e-12)
    assert abs(expected - 10.0) / 10.0 < 0.01


def test_synth_passes_validation_and_extraction(tmp_path):
    corpus = synth_corpus(40, seed=7, noise_sigma=0.3, shape_jitter=0.3)
    for w in corpus:
        w.validate()
    path = tmp_path / "raw.txt"
    write_raw_trajectories(corpus, path)
    out = extract_lane_changes(parse_trajectories(path).rows)
    assert len(out) == len(corpus)
    for a, b in zip(corpus, out):
        np.testing.assert_allclose(b.y, a.y, atol=1e-9)
        np.testing.assert_allclose(b.t, a.t, atol=1e-9)


def test_round_trip_of_normalized_windows(tmp_path):
    corpus = [normalize(w) for w in synth_corpus(5, seed=2)]
    path = tmp_path / "raw.txt"
    write_raw_trajectories(corpus, path)
    out = [normalize(w) for w in extract_lane_changes(parse_trajectories(path).rows)]
    for a, b in zip(corpus, out):
        np.testing.assert_allclose(b.y, a.y, atol=1e-9)


def test_window_file_round_trip(tmp_path):
    w = normalize(ManeuverWindow("v3_f120", WINDOW_TIMES, 30.0 - 3.1 * WINDOW_TIMES, -1, 3, 4, 3))
    path = tmp_path / "w.txt"
    write_window(w, path)
    text = path.read_text().splitlines()
    assert text[:3] == ["id=v3_f120", "direction=-1", f"displacement_ft={w.displacement:.10g}"]
    assert len([ln for ln in text if "=" not in ln]) == WINDOW_LEN
    assert text[-1].startswith("3.0 ")
    back = read_window(path)
    assert back.maneuver_id == w.maneuver_id and back.direction == -1
    assert (back.vehicle_id, back.lane_from, back.lane_to) == (3, 4, 3)
    np.testing.assert_allclose(back.y, w.y, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(denormalize(back), 30.0 - 3.1 * WINDOW_TIMES, atol=1e-9)


def test_read_key_value(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nbudget = 20\n\nmodels=gp  # trailing\n")
    assert read_key_value(path) == {"budget": "20", "models": "gp"}
    path.write_text("novalue\n")
    with pytest.raises(FormatError):
        read_key_value(path)
