from __future__ import annotations

import numpy as np
import pytest

from avdkit import ScoreStream, read_scores, write_scores


def test_times_grid():
    s = ScoreStream(0.5, 0.25, [0.1, 0.2, 0.3])
    assert len(s) == 3
    np.testing.assert_allclose(s.times(), [0.5, 0.75, 1.0])


def test_scores_coerced_to_float64():
    s = ScoreStream(0.0, 0.1, np.array([0, 1], dtype=np.float32))
    assert s.scores.dtype == np.float64


def test_rejects_bad_streams():
    with pytest.raises(ValueError):
        ScoreStream(0.0, 0.0, [0.5])
    with pytest.raises(ValueError):
        ScoreStream(0.0, -0.1, [0.5])
    with pytest.raises(ValueError):
        ScoreStream(float("nan"), 0.1, [0.5])
    with pytest.raises(ValueError):
        ScoreStream(0.0, 0.1, [[0.5]])
    with pytest.raises(ValueError):
        ScoreStream(0.0, 0.1, [1.5])
    with pytest.raises(ValueError):
        ScoreStream(0.0, 0.1, [-0.1])


def test_equality_is_by_value():
    a = ScoreStream(0.0, 0.1, [0.2, 0.8])
    b = ScoreStream(0.0, 0.1, np.array([0.2, 0.8]))
    c = ScoreStream(0.0, 0.1, [0.2, 0.7])
    assert a == b
    assert a != c
    assert a != "not a stream"


def test_round_trip(tmp_path):
    # values on the 6-decimal grid survive the fixed-point serialization
    stream = ScoreStream(0.25, 0.05, [0.0, 0.123456, 1.0, 0.5])
    path = tmp_path / "scores.csv"
    write_scores(stream, path)
    back = read_scores(path)
    assert back == stream
    assert path.read_text().splitlines()[0] == "time_s,score"


def test_round_trip_empty_and_single_row(tmp_path):
    path = tmp_path / "empty.csv"
    write_scores(ScoreStream(0.0, 0.01, np.empty(0)), path)
    back = read_scores(path, default_step_s=0.02)
    assert len(back) == 0
    assert back.step_s == 0.02

    path2 = tmp_path / "one.csv"
    write_scores(ScoreStream(1.0, 0.01, [0.5]), path2)
    back2 = read_scores(path2, default_step_s=0.04)
    assert back2.start_time_s == 1.0
    assert back2.step_s == 0.04
    assert back2.scores.tolist() == [0.5]


def test_read_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time_s,score\n0.0,0.5\n0.1\n")
    with pytest.raises(ValueError, match=r"bad.csv:3"):
        read_scores(path)

    path.write_text("time_s,score\n0.0,zebra\n")
    with pytest.raises(ValueError, match=r"bad.csv:2.*non-numeric"):
        read_scores(path)

    path.write_text("wrong,header\n0.0,0.5\n")
    with pytest.raises(ValueError, match="header"):
        read_scores(path)
