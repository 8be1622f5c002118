import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import eer_oracle
from tabletsig.errors import EmptyScoreSet
from tabletsig.evaluation import (
    compute_eer, export_det, far_frr_curve, format_eer_report, parse_eer_report, read_det,
)

scores = st.lists(st.integers(-40, 40).map(lambda v: v / 8), min_size=1, max_size=25)


def test_perfect_separation():
    c = far_frr_curve([0.9, 0.8], [0.1, 0.2])
    assert np.any((c.far == 0) & (c.frr == 0))
    assert compute_eer([0.9, 0.8], [0.1, 0.2]).eer == 0.0


def test_single_shared_score_boundaries():
    c = far_frr_curve([0.5], [0.5])
    assert c.thresholds.tolist() == [-math.inf, 0.5, math.inf]
    assert (c.far[1], c.frr[1]) == (1.0, 0.0)
    assert (c.far[2], c.frr[2]) == (0.0, 1.0)


def test_inverted_classifier():
    assert compute_eer([0.2], [0.8]).eer == 1.0


def test_interleaved_example():
    g, i = [1, 3, 5, 7], [2, 4, 6, 8]
    assert compute_eer(g, i).eer == eer_oracle.eer(g, i)


def test_empty_sets_rejected():
    with pytest.raises(EmptyScoreSet):
        far_frr_curve([], [1.0])
    with pytest.raises(EmptyScoreSet):
        far_frr_curve([1.0], [])


@settings(max_examples=150, deadline=None)
@given(scores, scores)
def test_curve_matches_sweep(gen, imp):
    c = far_frr_curve(gen, imp)
    thr, far, frr = eer_oracle.sweep(gen, imp)
    assert c.thresholds.tolist() == thr and c.far.tolist() == far and c.frr.tolist() == frr
    assert np.all(np.diff(c.thresholds) > 0)
    assert np.all(np.diff(c.far) <= 0) and np.all(np.diff(c.frr) >= 0)
    assert (c.far[0], c.frr[0], c.far[-1], c.frr[-1]) == (1.0, 0.0, 0.0, 1.0)
    assert (c.n_genuine, c.n_impostor) == (len(gen), len(imp))


@settings(max_examples=150, deadline=None)
@given(scores, scores)
def test_eer_matches_oracle_exactly(gen, imp):
    assert compute_eer(gen, imp).eer == eer_oracle.eer(gen, imp)


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_increasing_transform_invariance(gen, imp):
    f = lambda v: math.atan(v) * 3 + 1  # noqa: E731
    a = compute_eer(gen, imp).eer
    b = compute_eer([f(v) for v in gen], [f(v) for v in imp]).eer
    assert a == b


@settings(max_examples=100, deadline=None)
@given(scores, scores)
def test_swap_reflects_eer(gen, imp):
    assert abs(compute_eer(imp, gen).eer - (1 - compute_eer(gen, imp).eer)) <= 1e-12


@given(scores)
def test_equal_multisets_give_half(vals):
    assert abs(compute_eer(vals, list(vals)).eer - 0.5) <= 1e-12


def test_eer_threshold_lies_between_crossing_points():
    rng = np.random.default_rng(1)
    g, i = rng.normal(1, 1, 200), rng.normal(-1, 1, 300)
    res = compute_eer(g, i)
    assert 0 < res.eer < 0.5
    far = np.mean(i >= res.threshold_at_eer)
    frr = np.mean(g < res.threshold_at_eer)
    assert abs(far - res.eer) < 0.02 and abs(frr - res.eer) < 0.02


def test_det_export_round_trip(tmp_path):
    c = far_frr_curve([0.5], [0.5])
    export_det(c, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "threshold,far,frr" and len(lines) == 4
    back = read_det(tmp_path / "d.csv")
    assert back.same_points(c)
    rng = np.random.default_rng(2)
    c = far_frr_curve(rng.normal(size=50), rng.normal(size=70))
    export_det(c, tmp_path / "e.csv")
    back = read_det(tmp_path / "e.csv")
    assert back.same_points(c) and np.all(np.diff(back.far) <= 0)


def test_report_format():
    text = format_eer_report([("interop_a_A", "skilled", 0.0827), ("interop_a_A", "random", 0.032)])
    assert "8.27" in text and "3.20" in text
    assert parse_eer_report(text) == [("interop_a_A", "skilled", 8.27), ("interop_a_A", "random", 3.2)]
