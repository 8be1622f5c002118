import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmm_oracles import brute_force_score, brute_force_two_means, random_model
from tabletsig.errors import DimensionMismatch, EmptyTrainingSet, ModelFormatError, SequenceTooShort
from tabletsig.hmm import (
    TrainConfig, format_model, init_model, kmeans, load_model, log_likelihood, parse_model, save_model,
    score_batch, train_baum_welch, train_model,
)


def _gauss_logpdf(X, mu, var):
    return -0.5 * (np.log(2 * math.pi * var) + (X - mu) ** 2 / var).sum(axis=1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2), st.integers(1, 8), st.integers(1, 4))
def test_forward_matches_path_enumeration(seed, S, M, N, D):
    rng = np.random.default_rng(seed)
    model = random_model(rng, S, M, D)
    X = rng.normal(0, 1.5, (N, D))
    ref = brute_force_score(model, X)
    assert abs(log_likelihood(model, X) - ref) <= 1e-9 * max(1.0, abs(ref))


def test_forward_with_far_outliers():
    # outliers push the scaled forward pass toward underflow
    rng = np.random.default_rng(11)
    model = random_model(rng, 3, 2, 5)
    X = rng.normal(0, 1, (8, 5))
    X[3] += 40.0
    ref = brute_force_score(model, X)
    assert abs(log_likelihood(model, X) - ref) <= 1e-9 * abs(ref)


def test_single_gaussian_score_is_mean_logdensity():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 14))
    model = train_model([X], TrainConfig(n_states=1, n_mixtures=1))
    ref = _gauss_logpdf(X, model.means[0, 0], model.variances[0, 0]).mean()
    assert abs(log_likelihood(model, X) - ref) <= 1e-9 * abs(ref)


def test_repeated_frame_score_independent_of_length():
    rng = np.random.default_rng(2)
    model = random_model(rng, 1, 2, 3)
    x = rng.normal(size=(1, 3))
    scores = [log_likelihood(model, np.repeat(x, k, axis=0)) for k in (1, 2, 7, 50)]
    assert np.allclose(scores, scores[0], rtol=1e-12, atol=0)


def test_one_state_one_mixture_closed_form():
    rng = np.random.default_rng(3)
    seqs = [rng.normal(rng.normal(size=6), 2.0, (rng.integers(20, 60), 6)) for _ in range(4)]
    pooled = np.concatenate(seqs)
    cfg = TrainConfig(n_states=1, n_mixtures=1, variance_floor_factor=0.0)
    model, trace = train_baum_welch(init_model(seqs, cfg), seqs, cfg)
    assert np.max(np.abs(model.means[0, 0] - pooled.mean(axis=0))) <= 1e-9
    assert np.max(np.abs(model.variances[0, 0] - pooled.var(axis=0))) <= 1e-9
    # already at the fixed point: the first M-step changes nothing measurable
    assert abs(trace[1] - trace[0]) <= 1e-9 * abs(trace[0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_em_is_monotone(seed):
    rng = np.random.default_rng(seed)
    S, M, D = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
    truth = random_model(rng, S, M, D, spread=3.0)
    seqs = []
    for _ in range(int(rng.integers(2, 6))):
        n = int(rng.integers(S * 8, S * 30))
        states = np.minimum(np.arange(n) * S // n, S - 1)
        comp = [rng.choice(M, p=truth.weights[s]) for s in states]
        seqs.append(np.array([rng.normal(truth.means[s, c], np.sqrt(truth.variances[s, c]))
                              for s, c in zip(states, comp)]))
    cfg = TrainConfig(n_states=S, n_mixtures=M, max_iterations=15, ll_tolerance=1e-12, seed=seed % 1000)
    model, trace = train_baum_welch(init_model(seqs, cfg), seqs, cfg)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]).clip(1.0))
    model.check()


def test_structure_preserved_after_training():
    rng = np.random.default_rng(4)
    seqs = [rng.normal(size=(80, 14)) + np.linspace(0, 3, 80)[:, None] for _ in range(5)]
    cfg = TrainConfig(n_states=3, n_mixtures=4, max_iterations=30, ll_tolerance=1e-12)
    model, _ = train_baum_welch(init_model(seqs, cfg), seqs, cfg)
    model.check()
    assert np.all(np.triu(model.trans, 2) == 0) and np.all(np.tril(model.trans, -1) == 0)


def test_constant_dimension_is_floored():
    rng = np.random.default_rng(5)
    seqs = [np.column_stack([rng.normal(size=(50, 3)), np.zeros(50)]) for _ in range(3)]
    model = train_model(seqs, TrainConfig(n_states=2, n_mixtures=2))
    model.check()
    assert np.all(np.isfinite(model.means)) and np.all(model.variances[..., 3] > 0)
    assert np.isfinite(log_likelihood(model, seqs[0]))


def test_init_single_cluster_is_pooled_moments():
    rng = np.random.default_rng(6)
    seqs = [rng.normal(size=(30, 4)) for _ in range(3)]
    model = init_model(seqs, TrainConfig(n_states=1, n_mixtures=1, variance_floor_factor=1e-2))
    pooled = np.concatenate(seqs)
    assert np.allclose(model.means[0, 0], pooled.mean(axis=0), atol=1e-12)
    assert np.allclose(model.variances[0, 0], np.maximum(pooled.var(axis=0), model.var_floor), atol=1e-12)
    assert np.allclose(model.trans, [[1.0]])


def test_init_transitions():
    seqs = [np.random.default_rng(7).normal(size=(40, 2))]
    model = init_model(seqs, TrainConfig(n_states=3, n_mixtures=1))
    assert np.allclose(model.trans, [[0.9, 0.1, 0], [0, 0.9, 0.1], [0, 0, 1.0]], rtol=0, atol=1e-15)
    model.check()


def test_kmeans_two_clusters_match_exhaustive_search():
    rng = np.random.default_rng(8)
    X = np.concatenate([rng.normal(0, 0.3, (5, 3)), rng.normal(6, 0.3, (5, 3))])
    centroids, _ = kmeans(X, 2, np.random.default_rng(0))
    ref = brute_force_two_means(X)
    order = np.argsort(centroids[:, 0])
    assert np.max(np.abs(centroids[order] - ref[np.argsort(ref[:, 0])])) <= 1e-6


def test_kmeans_ties_and_duplicates_are_deterministic():
    X = np.zeros((6, 2))
    c1, l1 = kmeans(X, 3, np.random.default_rng(0))
    c2, l2 = kmeans(X, 3, np.random.default_rng(0))
    assert np.array_equal(c1, c2) and np.array_equal(l1, l2)
    # equidistant points go to the lowest index, then the empty clusters steal one point each
    assert np.bincount(l1, minlength=3).tolist() == [4, 1, 1]
    assert np.all(c1 == 0)


def test_training_is_bit_deterministic():
    rng = np.random.default_rng(9)
    seqs = [rng.normal(size=(60, 14)) for _ in range(5)]
    cfg = TrainConfig(seed=3)
    assert format_model(train_model(seqs, cfg)) == format_model(train_model(seqs, cfg))


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    seqs = [rng.normal(size=(60, 14)) for _ in range(5)]
    model = train_model(seqs, TrainConfig())
    save_model(model, tmp_path / "m.hmm")
    back = load_model(tmp_path / "m.hmm")
    tests = [rng.normal(size=(int(rng.integers(5, 90)), 14)) for _ in range(10)]
    assert np.array_equal(score_batch(model, tests), score_batch(back, tests))
    assert format_model(back) == format_model(model)
    back.check()


def test_model_reader_rejects_garbage():
    text = format_model(random_model(np.random.default_rng(0), 2, 1, 2))
    with pytest.raises(ModelFormatError):
        parse_model(text.replace("tabletsig-hmm 1", "tabletsig-hmm 9"))
    with pytest.raises(ModelFormatError):
        parse_model("\n".join(text.splitlines()[:-1]))
    with pytest.raises(ModelFormatError):
        parse_model(text + "bogus 1 2\n")


def test_errors():
    model = random_model(np.random.default_rng(0), 2, 1, 3)
    with pytest.raises(DimensionMismatch):
        log_likelihood(model, np.zeros((4, 2)))
    with pytest.raises(EmptyTrainingSet):
        train_model([], TrainConfig())
    with pytest.raises(SequenceTooShort):
        init_model([np.zeros((1, 3))], TrainConfig(n_states=2))
    with pytest.raises(DimensionMismatch):
        init_model([np.zeros((5, 3)), np.zeros((5, 2))], TrainConfig())
