"""Enrolment strategies and the interoperability / fusion experiments.

Experiments do not score anything themselves: they read a precomputed
:class:`ScoreMatrix` (every model against every test signature it needs)
and assemble labelled :class:`ScoreSet` records from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import EmptyGroup, IncompleteCorpus, IoFailure
from .signal_model import GENUINE, SKILLED_FORGERY, signature_id

MONOSENSOR = "mono"
MULTISENSOR = "multi"

GENUINE_LABEL = "genuine"
REAL_IMPOSTOR = "real_impostor"
CASUAL_IMPOSTOR = "casual_impostor"
LABELS = (GENUINE_LABEL, REAL_IMPOSTOR, CASUAL_IMPOSTOR)

INTEROP_VARIANTS = ("same_sensor", "cross_sensor", "multisensor_enrol")
FUSION_VARIANTS = ("single_instance", "multi_instance_one_sensor", "multi_sensor")
_INTEROP_TAG = {"same_sensor": "a", "cross_sensor": "b", "multisensor_enrol": "c"}
_FUSION_TAG = {"single_instance": "i", "multi_instance_one_sensor": "ii", "multi_sensor": "iii"}

ENROL_SESSIONS = (1, 2)
TEST_SESSION = 3
# fixed pairing of the five test signatures for the same-sensor multi-instance case
SAME_SENSOR_GROUPS = ((1, 2), (3, 4))


@dataclass(frozen=True)
class CorpusLayout:
    n_users: int = 53
    sessions_per_user: int = 3
    genuine_per_session: int = 5
    forgery_sessions: int = 3
    forgeries_per_session: int = 5
    sensors: Tuple[str, str] = ("A", "B")

    def __post_init__(self):
        counts = (self.n_users, self.sessions_per_user, self.genuine_per_session,
                  self.forgery_sessions, self.forgeries_per_session)
        if min(counts) < 1:
            raise ValueError("all layout counts must be positive")

    @property
    def genuine_per_user(self) -> int:
        return self.sessions_per_user * self.genuine_per_session

    @property
    def forgeries_per_user(self) -> int:
        return self.forgery_sessions * self.forgeries_per_session

    @property
    def users(self) -> range:
        return range(1, self.n_users + 1)

    def other_sensor(self, sensor: str) -> str:
        a, b = self.sensors
        return b if sensor == a else a


@dataclass(frozen=True)
class EnrolmentSpec:
    user_id: int
    strategy: str
    slot_sensors: Tuple[str, str]  # sensor for the session-1 window, then the session-2 window
    w3: int  # first index of the three consecutive session-1 signatures
    w2: int  # first index of the two consecutive session-2 signatures

    @property
    def model_id(self) -> str:
        s1, s2 = self.slot_sensors
        return f"u{self.user_id:03d}_{self.strategy}_{s1}{s2}_w{self.w3}_{self.w2}"

    def training_ids(self) -> List[str]:
        s1, s2 = self.slot_sensors
        ids = [signature_id(self.user_id, s1, GENUINE, ENROL_SESSIONS[0], self.w3 + k) for k in range(3)]
        ids += [signature_id(self.user_id, s2, GENUINE, ENROL_SESSIONS[1], self.w2 + k) for k in range(2)]
        return ids


def _windows(layout: CorpusLayout):
    g = layout.genuine_per_session
    return [(w3, w2) for w3 in range(1, g - 1) for w2 in range(1, g)]


def monosensor_enrolment_sets(layout: CorpusLayout, sensor: str, user_id: int = 1) -> List[EnrolmentSpec]:
    return [EnrolmentSpec(user_id, MONOSENSOR, (sensor, sensor), w3, w2) for w3, w2 in _windows(layout)]


def multisensor_enrolment_sets(layout: CorpusLayout, user_id: int = 1) -> List[EnrolmentSpec]:
    a, b = layout.sensors
    return [EnrolmentSpec(user_id, MULTISENSOR, pair, w3, w2)
            for pair in ((a, b), (b, a)) for w3, w2 in _windows(layout)]


def all_enrolment_specs(layout: CorpusLayout) -> List[EnrolmentSpec]:
    """Every model the experiments need, sorted by model id."""
    specs = []
    for u in layout.users:
        for sensor in layout.sensors:
            specs += monosensor_enrolment_sets(layout, sensor, u)
        specs += multisensor_enrolment_sets(layout, u)
    return sorted(specs, key=lambda s: s.model_id)


def probe_ids(layout: CorpusLayout, user_id: int, sensor: str) -> Tuple[List[str], List[str]]:
    """(session-3 genuine ids, skilled-forgery ids) of one user on one sensor."""
    gen = [signature_id(user_id, sensor, GENUINE, TEST_SESSION, i)
           for i in range(1, layout.genuine_per_session + 1)]
    forg = [signature_id(user_id, sensor, SKILLED_FORGERY, s, i)
            for s in range(1, layout.forgery_sessions + 1)
            for i in range(1, layout.forgeries_per_session + 1)]
    return gen, forg


# --- scores -----------------------------------------------------------------------


class ScoreMatrix:
    """Dense model x signature score table; NaN marks pairs never scored."""

    def __init__(self, model_ids: Sequence[str], sig_ids: Sequence[str], values=None):
        self.model_ids = list(model_ids)
        self.sig_ids = list(sig_ids)
        self.model_index = {m: i for i, m in enumerate(self.model_ids)}
        self.sig_index = {s: j for j, s in enumerate(self.sig_ids)}
        shape = (len(self.model_ids), len(self.sig_ids))
        self.values = np.full(shape, np.nan) if values is None else np.asarray(values, dtype=float)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} != {shape}")

    def set_row(self, model_id: str, sig_ids: Sequence[str], scores) -> None:
        cols = [self.sig_index[s] for s in sig_ids]
        self.values[self.model_index[model_id], cols] = scores

    def block(self, model_ids: Sequence[str], sig_ids: Sequence[str]) -> np.ndarray:
        try:
            rows = [self.model_index[m] for m in model_ids]
            cols = [self.sig_index[s] for s in sig_ids]
        except KeyError as exc:
            raise IncompleteCorpus(f"no score available for {exc.args[0]}") from None
        out = self.values[np.ix_(rows, cols)]
        if np.isnan(out).any():
            r, c = np.argwhere(np.isnan(out))[0]
            raise IncompleteCorpus(f"missing score for model {model_ids[r]} on {sig_ids[c]}")
        return out

    def get(self, model_id: str, sig_id: str) -> float:
        return float(self.block([model_id], [sig_id])[0, 0])


@dataclass
class ScoreSet:
    experiment_id: str
    model_ids: np.ndarray  # object array of str
    test_ids: np.ndarray
    labels: np.ndarray  # int codes into LABELS
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def count(self, label: str) -> int:
        return int(np.count_nonzero(self.labels == LABELS.index(label)))

    def by_label(self, label: str) -> np.ndarray:
        return self.scores[self.labels == LABELS.index(label)]

    def sorted(self) -> "ScoreSet":
        order = sorted(range(len(self)), key=lambda i: (self.model_ids[i], self.test_ids[i]))
        order = np.array(order, dtype=np.int64)
        return ScoreSet(self.experiment_id, self.model_ids[order], self.test_ids[order],
                        self.labels[order], self.scores[order])

    def to_csv(self, path) -> None:
        exp = self.experiment_id
        rows = [f"{exp},{m},{t},{LABELS[l]},{float(s)!r}\n"
                for m, t, l, s in zip(self.model_ids, self.test_ids, self.labels.tolist(), self.scores.tolist())]
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("experiment,model_id,test_id,label,score\n")
                fh.writelines(rows)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_scores_csv(path) -> ScoreSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != "experiment,model_id,test_id,label,score":
        raise ValueError(f"unexpected score header {lines[0]!r}")
    parts = [ln.split(",") for ln in lines[1:]]
    exp = parts[0][0] if parts else Path(path).stem
    return ScoreSet(
        exp,
        np.array([p[1] for p in parts], dtype=object),
        np.array([p[2] for p in parts], dtype=object),
        np.array([LABELS.index(p[3]) for p in parts], dtype=np.int8),
        np.array([float(p[4]) for p in parts]),
    )


class _Builder:
    def __init__(self, experiment_id: str):
        self.experiment_id = experiment_id
        self.parts = []

    def add(self, model_ids, test_ids, label: str, block: np.ndarray) -> None:
        """Outer product of models x tests with their (len(models), len(tests)) scores."""
        nm, nt = block.shape
        if nm == 0 or nt == 0:
            return
        m = np.repeat(np.array(model_ids, dtype=object), nt)
        t = np.tile(np.array(test_ids, dtype=object), nm)
        lab = np.full(nm * nt, LABELS.index(label), dtype=np.int8)
        self.parts.append((m, t, lab, block.reshape(-1)))

    def build(self) -> ScoreSet:
        if not self.parts:
            empty = np.array([], dtype=object)
            return ScoreSet(self.experiment_id, empty, empty, np.array([], dtype=np.int8), np.array([]))
        cols = [np.concatenate(c) for c in zip(*self.parts)]
        if not np.all(np.isfinite(cols[3])):
            raise ValueError("non-finite score in experiment output")
        return ScoreSet(self.experiment_id, *cols).sorted()


def max_fuse(scores: Iterable[float]) -> float:
    vals = list(scores)
    if not vals:
        raise EmptyGroup("cannot fuse an empty group of scores")
    return max(vals)


def experiment_id(kind: str, variant: str, sensor: str) -> str:
    tag = _INTEROP_TAG[variant] if kind == "interop" else _FUSION_TAG[variant]
    return f"{kind}_{tag}_{sensor}"


def _models_for(layout: CorpusLayout, user: int, variant: str, test_sensor: str) -> List[str]:
    if variant == "same_sensor":
        specs = monosensor_enrolment_sets(layout, test_sensor, user)
    elif variant == "cross_sensor":
        specs = monosensor_enrolment_sets(layout, layout.other_sensor(test_sensor), user)
    elif variant == "multisensor_enrol":
        specs = multisensor_enrolment_sets(layout, user)
    else:
        raise ValueError(f"unknown interop variant {variant!r}")
    return sorted(s.model_id for s in specs)


def _impostor_ids(layout: CorpusLayout, user: int, sensor: str):
    """The target's own forgeries and the forgeries aimed at every other user."""
    real = probe_ids(layout, user, sensor)[1]
    casual = [sid for v in layout.users if v != user for sid in probe_ids(layout, v, sensor)[1]]
    return real, casual


def run_interop_experiment(scores: ScoreMatrix, layout: CorpusLayout, variant: str,
                           test_sensor: str) -> ScoreSet:
    """Session-3 signatures of ``test_sensor`` against same-, cross- or multi-sensor models."""
    if test_sensor not in layout.sensors:
        raise ValueError(f"unknown sensor {test_sensor!r}")
    b = _Builder(experiment_id("interop", variant, test_sensor))
    for u in layout.users:
        models = _models_for(layout, u, variant, test_sensor)
        gen = probe_ids(layout, u, test_sensor)[0]
        real, casual = _impostor_ids(layout, u, test_sensor)
        b.add(models, gen, GENUINE_LABEL, scores.block(models, gen))
        b.add(models, real, REAL_IMPOSTOR, scores.block(models, real))
        b.add(models, casual, CASUAL_IMPOSTOR, scores.block(models, casual))
    return b.build()


def _grouped(block: np.ndarray, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """Max-fuse columns of ``block`` within each group of column indices."""
    return np.stack([block[:, list(g)].max(axis=1) for g in groups], axis=1)


def _forgery_groups(layout: CorpusLayout, pairs) -> List[List[int]]:
    per = layout.forgeries_per_session
    return [[s * per + i - 1 for i in pair] for s in range(layout.forgery_sessions) for pair in pairs]


def _group_id(ids: Sequence[str]) -> str:
    return "+".join(ids)


def run_fusion_experiment(scores: ScoreMatrix, layout: CorpusLayout, variant: str,
                          sensor: str) -> ScoreSet:
    """Single-instance, same-sensor pair, or cross-sensor pair tests.

    Every signature is scored against the monosensor models of the sensor
    it was captured with.  For ``multi_sensor`` the pair (sensor_i,
    other_i) is scored against the two monosensor models sharing window
    indices; ``sensor`` names the anchor listed first in ids.
    """
    if sensor not in layout.sensors:
        raise ValueError(f"unknown sensor {sensor!r}")
    b = _Builder(experiment_id("fusion", variant, sensor))
    if variant == "single_instance":
        for u in layout.users:
            models = _models_for(layout, u, "same_sensor", sensor)
            gen = probe_ids(layout, u, sensor)[0]
            real, casual = _impostor_ids(layout, u, sensor)
            b.add(models, gen, GENUINE_LABEL, scores.block(models, gen))
            b.add(models, real, REAL_IMPOSTOR, scores.block(models, real))
            b.add(models, casual, CASUAL_IMPOSTOR, scores.block(models, casual))
        return b.build()

    if variant == "multi_instance_one_sensor":
        gen_groups = [[i - 1 for i in pair] for pair in SAME_SENSOR_GROUPS]
        forg_groups = _forgery_groups(layout, SAME_SENSOR_GROUPS)
        for u in layout.users:
            models = _models_for(layout, u, "same_sensor", sensor)
            gen = probe_ids(layout, u, sensor)[0]
            b.add(models, [_group_id([gen[i] for i in g]) for g in gen_groups], GENUINE_LABEL,
                  _grouped(scores.block(models, gen), gen_groups))
            real, _ = _impostor_ids(layout, u, sensor)
            b.add(models, [_group_id([real[i] for i in g]) for g in forg_groups], REAL_IMPOSTOR,
                  _grouped(scores.block(models, real), forg_groups))
            for v in layout.users:
                if v == u:
                    continue
                other = probe_ids(layout, v, sensor)[1]
                b.add(models, [_group_id([other[i] for i in g]) for g in forg_groups], CASUAL_IMPOSTOR,
                      _grouped(scores.block(models, other), forg_groups))
        return b.build()

    if variant == "multi_sensor":
        other = layout.other_sensor(sensor)
        for u in layout.users:
            specs = monosensor_enrolment_sets(layout, sensor, u)
            m_a = [s.model_id for s in specs]
            m_b = [EnrolmentSpec(u, MONOSENSOR, (other, other), s.w3, s.w2).model_id for s in specs]
            order = np.argsort([_group_id(p) for p in zip(m_a, m_b)], kind="stable")
            m_a = [m_a[i] for i in order]
            m_b = [m_b[i] for i in order]
            pair_models = [_group_id(p) for p in zip(m_a, m_b)]

            def fused(ids_a, ids_b):
                sa = scores.block(m_a, ids_a)
                sb = scores.block(m_b, ids_b)
                return [_group_id(p) for p in zip(ids_a, ids_b)], np.maximum(sa, sb)

            ga, _ = probe_ids(layout, u, sensor)
            gb, _ = probe_ids(layout, u, other)
            ids, block = fused(ga, gb)
            b.add(pair_models, ids, GENUINE_LABEL, block)
            for v in layout.users:
                ids, block = fused(probe_ids(layout, v, sensor)[1], probe_ids(layout, v, other)[1])
                b.add(pair_models, ids, REAL_IMPOSTOR if v == u else CASUAL_IMPOSTOR, block)
        return b.build()

    raise ValueError(f"unknown fusion variant {variant!r}")


# --- expected record counts ----------------------------------------------------------


def expected_counts(layout: CorpusLayout, kind: str, variant: str) -> Dict[str, int]:
    """Closed-form (genuine, real, casual) record counts of an experiment."""
    n = layout.n_users
    n_mono = len(_windows(layout))
    n_models = 2 * n_mono if (kind, variant) == ("interop", "multisensor_enrol") else n_mono
    n_gen = layout.genuine_per_session
    n_forg = layout.forgeries_per_user
    if (kind, variant) == ("fusion", "multi_instance_one_sensor"):
        n_gen = len(SAME_SENSOR_GROUPS)
        n_forg = len(SAME_SENSOR_GROUPS) * layout.forgery_sessions
    return {
        GENUINE_LABEL: n_gen * n_models * n,
        REAL_IMPOSTOR: n_forg * n_models * n,
        CASUAL_IMPOSTOR: n_forg * n_models * (n - 1) * n,
    }
