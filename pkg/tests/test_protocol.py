import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabletsig.errors import EmptyGroup, IncompleteCorpus
from tabletsig.protocol import (
    CASUAL_IMPOSTOR, FUSION_VARIANTS, GENUINE_LABEL, INTEROP_VARIANTS, REAL_IMPOSTOR, CorpusLayout,
    ScoreMatrix, all_enrolment_specs, expected_counts, max_fuse, monosensor_enrolment_sets,
    multisensor_enrolment_sets, probe_ids, read_scores_csv, run_fusion_experiment, run_interop_experiment,
)


def random_matrix(layout, seed=0):
    """Every model against every probe signature, filled with random scores."""
    models = [s.model_id for s in all_enrolment_specs(layout)]
    sigs = [sid for u in layout.users for s in layout.sensors for part in probe_ids(layout, u, s) for sid in part]
    values = np.random.default_rng(seed).normal(size=(len(models), len(sigs)))
    return ScoreMatrix(models, sigs, values)


def _user(sig_or_model):
    return int(sig_or_model[1:4])


def test_window_counts_standard_layout():
    layout = CorpusLayout()
    assert len(monosensor_enrolment_sets(layout, "A")) == 12
    assert len(multisensor_enrolment_sets(layout)) == 24


def test_window_counts_small_session():
    assert len(monosensor_enrolment_sets(CorpusLayout(genuine_per_session=3), "A")) == 2


@pytest.mark.parametrize("g", [3, 4, 5, 6, 8])
def test_windows_match_brute_force_enumeration(g):
    layout = CorpusLayout(genuine_per_session=g)
    idx = range(1, g + 1)
    triples = [c[0] for c in itertools.combinations(idx, 3) if c[2] - c[0] == 2]
    pairs = [c[0] for c in itertools.combinations(idx, 2) if c[1] - c[0] == 1]
    got = {(s.w3, s.w2) for s in monosensor_enrolment_sets(layout, "B")}
    assert got == set(itertools.product(triples, pairs))
    for spec in monosensor_enrolment_sets(layout, "B"):
        assert spec.slot_sensors == ("B", "B")
        ids = spec.training_ids()
        assert len(ids) == 5 and all(i.startswith("u001_B_g") for i in ids)


def test_multisensor_halves_are_disjoint():
    specs = multisensor_enrolment_sets(CorpusLayout())
    first = {(s.slot_sensors, s.w3, s.w2) for s in specs[:12]}
    second = {(s.slot_sensors, s.w3, s.w2) for s in specs[12:]}
    assert not first & second
    assert {s.slot_sensors for s in specs} == {("A", "B"), ("B", "A")}


def test_model_ids_unique_per_user():
    layout = CorpusLayout(n_users=2)
    specs = all_enrolment_specs(layout)
    ids = [s.model_id for s in specs if s.user_id == 1]
    assert len(ids) == len(set(ids)) == 12 + 12 + 24
    assert len(specs) == 48 * 2


def test_max_fuse():
    assert max_fuse([0.3, 0.7]) == 0.7
    assert max_fuse([-2.5]) == -2.5
    with pytest.raises(EmptyGroup):
        max_fuse([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10), st.randoms())
def test_max_fuse_permutation_invariant(vals, r):
    shuffled = list(vals)
    r.shuffle(shuffled)
    assert max_fuse(vals) == max_fuse(shuffled) == max(vals)


@pytest.mark.parametrize("n_users", [2, 3, 5])
@pytest.mark.parametrize("kind, variant", [("interop", v) for v in INTEROP_VARIANTS]
                         + [("fusion", v) for v in FUSION_VARIANTS])
def test_counts_match_formulas(n_users, kind, variant):
    layout = CorpusLayout(n_users=n_users)
    m = random_matrix(layout)
    run = run_interop_experiment if kind == "interop" else run_fusion_experiment
    ss = run(m, layout, variant, "A")
    want = expected_counts(layout, kind, variant)
    assert {lab: ss.count(lab) for lab in want} == want


def test_smoke_corpus_numbers():
    layout = CorpusLayout(n_users=3)
    ss = run_interop_experiment(random_matrix(layout), layout, "same_sensor", "B")
    assert (ss.count(GENUINE_LABEL), ss.count(REAL_IMPOSTOR), ss.count(CASUAL_IMPOSTOR)) == (180, 540, 1080)


def test_closed_form_counts_full_layout():
    layout = CorpusLayout()
    assert expected_counts(layout, "interop", "same_sensor") == \
        {GENUINE_LABEL: 3180, REAL_IMPOSTOR: 9540, CASUAL_IMPOSTOR: 496080}
    assert expected_counts(layout, "interop", "multisensor_enrol") == \
        {GENUINE_LABEL: 6360, REAL_IMPOSTOR: 19080, CASUAL_IMPOSTOR: 992160}
    assert expected_counts(layout, "fusion", "multi_instance_one_sensor") == \
        {GENUINE_LABEL: 1272, REAL_IMPOSTOR: 3816, CASUAL_IMPOSTOR: 198432}


@pytest.mark.parametrize("kind, variant", [("interop", v) for v in INTEROP_VARIANTS]
                         + [("fusion", v) for v in FUSION_VARIANTS])
def test_identity_rules(kind, variant):
    layout = CorpusLayout(n_users=3)
    run = run_interop_experiment if kind == "interop" else run_fusion_experiment
    ss = run(random_matrix(layout), layout, variant, "B")
    for model, test, lab in zip(ss.model_ids, ss.test_ids, ss.labels):
        owner = _user(model)
        assert all(_user(m) == owner for m in model.split("+"))
        users = {_user(t) for t in test.split("+")}
        assert len(users) == 1
        if lab == 2:
            assert owner not in users
        else:
            assert users == {owner}
        if lab == 0:
            assert all("_g3_" in t for t in test.split("+"))
        else:
            assert all("_f" in t for t in test.split("+"))


def test_interop_variants_pick_the_right_models():
    layout = CorpusLayout(n_users=2)
    m = random_matrix(layout)
    same = run_interop_experiment(m, layout, "same_sensor", "A")
    cross = run_interop_experiment(m, layout, "cross_sensor", "A")
    multi = run_interop_experiment(m, layout, "multisensor_enrol", "A")
    assert {x.split("_")[2] for x in same.model_ids} == {"AA"}
    assert {x.split("_")[2] for x in cross.model_ids} == {"BB"}
    assert {x.split("_")[2] for x in multi.model_ids} == {"AB", "BA"}
    assert all("_A_" in t for t in cross.test_ids)


def test_fused_scores_dominate_members():
    layout = CorpusLayout(n_users=3)
    m = random_matrix(layout, seed=4)
    for variant in ("multi_instance_one_sensor", "multi_sensor"):
        ss = run_fusion_experiment(m, layout, variant, "A")
        for model, test, score in zip(ss.model_ids, ss.test_ids, ss.scores):
            members = [m.get(mm, t) for mm, t in zip(_expand(model, test), test.split("+"))]
            assert score == max(members)


def _expand(model, test):
    # cross-sensor pairs name one model per member; same-sensor groups share one
    parts = model.split("+")
    return parts if len(parts) > 1 else parts * len(test.split("+"))


def test_same_sensor_groups_and_forgery_sessions():
    layout = CorpusLayout(n_users=2)
    ss = run_fusion_experiment(random_matrix(layout), layout, "multi_instance_one_sensor", "B")
    one = ss.model_ids[0]
    gen = sorted(t for mm, t, l in zip(ss.model_ids, ss.test_ids, ss.labels) if mm == one and l == 0)
    assert gen == ["u001_B_g3_1+u001_B_g3_2", "u001_B_g3_3+u001_B_g3_4"]
    real = [t for mm, t, l in zip(ss.model_ids, ss.test_ids, ss.labels) if mm == one and l == 1]
    assert len(real) == 6 and all(t.split("+")[0][:-1] == t.split("+")[1][:-1] for t in real)


def test_multi_sensor_pairs_share_windows():
    layout = CorpusLayout(n_users=2)
    ss = run_fusion_experiment(random_matrix(layout), layout, "multi_sensor", "A")
    for model in set(ss.model_ids):
        a, b = model.split("+")
        assert a.split("_")[2] == "AA" and b.split("_")[2] == "BB"
        assert a.split("_", 3)[3] == b.split("_", 3)[3]


def test_order_independence():
    layout = CorpusLayout(n_users=3)
    m = random_matrix(layout, seed=2)
    rng = np.random.default_rng(0)
    pr, pc = rng.permutation(len(m.model_ids)), rng.permutation(len(m.sig_ids))
    shuffled = ScoreMatrix([m.model_ids[i] for i in pr], [m.sig_ids[j] for j in pc], m.values[np.ix_(pr, pc)])
    for variant in INTEROP_VARIANTS:
        a = run_interop_experiment(m, layout, variant, "A")
        b = run_interop_experiment(shuffled, layout, variant, "A")
        assert list(a.model_ids) == list(b.model_ids) and list(a.test_ids) == list(b.test_ids)
        assert np.array_equal(a.scores, b.scores)


def test_missing_score_is_reported():
    layout = CorpusLayout(n_users=2)
    m = random_matrix(layout)
    m.values[0, 0] = np.nan
    with pytest.raises(IncompleteCorpus):
        for variant in INTEROP_VARIANTS:
            for sensor in layout.sensors:
                run_interop_experiment(m, layout, variant, sensor)


def test_csv_round_trip(tmp_path):
    layout = CorpusLayout(n_users=2)
    ss = run_fusion_experiment(random_matrix(layout), layout, "multi_sensor", "B")
    ss.to_csv(tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert text.splitlines()[0] == "experiment,model_id,test_id,label,score"
    back = read_scores_csv(tmp_path / "s.csv")
    assert back.experiment_id == "fusion_iii_B"
    assert np.array_equal(back.scores, ss.scores) and list(back.test_ids) == list(ss.test_ids)
    rows = text.splitlines()[1:]
    keys = [tuple(r.split(",")[1:3]) for r in rows]
    assert keys == sorted(keys)
