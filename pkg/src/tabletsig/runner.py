"""End-to-end orchestration: corpus generation, enrolment, experiments, reports.

Everything lives under one output directory::

    <out>/corpus/manifest.txt      <out>/corpus/<sensor>/uNNN/<g|f><session>_<index>.sig
    <out>/models/manifest.txt      <out>/models/uNNN/<strategy>_<sensors>_w<w3>_<w2>.hmm
    <out>/scores/manifest.txt      <out>/scores/<experiment>.csv
    <out>/det/<experiment>_<skilled|random>.csv
    <out>/eer_report.txt

Each stage writes a manifest whose header echoes its inputs; a stage whose
manifest header already matches is skipped.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import evaluation, protocol
from .errors import IncompleteCorpus, InvalidConfig, IoFailure, MissingModels
from .features import FeatureSequence, preprocess
from .hmm import PackedSequences, TrainConfig, load_model, save_model, score_packed, train_model
from .signal_model import read_signature, write_signature
from .synth import GenConfig, corpus_keys, generate_signature

log = logging.getLogger(__name__)

CORPUS_TAG = "tabletsig-corpus 1"
MODELS_TAG = "tabletsig-models 1"
SCORES_TAG = "tabletsig-scores 1"

_SIG_ID = re.compile(r"^u(\d{3})_([A-Za-z0-9]+)_([gf])(\d)_(\d)$")

ALL_EXPERIMENTS = tuple(
    [("interop", v) for v in protocol.INTEROP_VARIANTS] + [("fusion", v) for v in protocol.FUSION_VARIANTS]
)


@dataclass
class RunConfig:
    out: Path
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiments: Sequence = ALL_EXPERIMENTS
    workers: int = 1

    def __post_init__(self):
        self.out = Path(self.out)
        if self.workers < 1:
            raise InvalidConfig(f"worker count must be >= 1, got {self.workers}")

    @property
    def corpus_dir(self) -> Path:
        return self.out / "corpus"

    @property
    def models_dir(self) -> Path:
        return self.out / "models"

    @property
    def scores_dir(self) -> Path:
        return self.out / "scores"

    @property
    def det_dir(self) -> Path:
        return self.out / "det"

    @property
    def report_path(self) -> Path:
        return self.out / "eer_report.txt"


# --- small file helpers -----------------------------------------------------------


def signature_path(sig_id: str) -> str:
    m = _SIG_ID.match(sig_id)
    if not m:
        raise ValueError(f"malformed signature id {sig_id!r}")
    user, sensor, tag, session, index = m.groups()
    return f"{sensor}/u{user}/{tag}{session}_{index}.sig"


def model_path(model_id: str) -> str:
    user, rest = model_id.split("_", 1)
    return f"{user}/{rest}.hmm"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path: Path, tag: str, header: Dict[str, str], lines: List[str]) -> None:
    text = [f"# {tag}"] + [f"# {k}={v}" for k, v in header.items()] + sorted(lines)
    path.write_text("\n".join(text) + "\n", encoding="utf-8")


def _read_header(path: Path) -> Optional[List[str]]:
    if not path.exists():
        return None
    return [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.startswith("#")]


def _header_matches(path: Path, tag: str, header: Dict[str, str]) -> bool:
    return _read_header(path) == [f"# {tag}"] + [f"# {k}={v}" for k, v in header.items()]


def _pool(workers: int):
    if workers == 1:
        return None
    return ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("fork"))


class _nullpool:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def _map(pool, fn, items):
    return list(map(fn, items)) if pool is None else list(pool.map(fn, items))


def layout_for(gen: GenConfig) -> protocol.CorpusLayout:
    return protocol.CorpusLayout(n_users=gen.n_users, sensors=tuple(gen.sensor_ids))


# --- gen ---------------------------------------------------------------------------


def _gen_one(args):
    cfg, corpus_dir, key = args
    raw = generate_signature(cfg, *key)
    rel = signature_path(raw.sig_id)
    path = corpus_dir / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    write_signature(raw, path)
    meta = f"user={raw.user_id} session={raw.session} index={raw.index} sensor={raw.sensor_id} kind={raw.kind}"
    if raw.forger_id is not None:
        meta += f" forger={raw.forger_id}"
    return f"{rel} {meta}"


def cmd_gen(run: RunConfig) -> Dict[str, int]:
    cfg = run.gen.validate()
    for name in cfg.sensor_ids:
        if not re.fullmatch(r"[A-Za-z0-9]+", name):
            raise InvalidConfig(f"sensor name {name!r} must be alphanumeric")
    manifest = run.corpus_dir / "manifest.txt"
    header = cfg.describe()
    keys = list(corpus_keys(cfg))
    summary = {"genuine": sum(k[2] == "genuine" for k in keys)}
    summary["skilled_forgery"] = len(keys) - summary["genuine"]
    summary["files"] = len(keys)
    if _header_matches(manifest, CORPUS_TAG, header):
        log.info("corpus up to date: %s", manifest)
        return summary
    try:
        run.corpus_dir.mkdir(parents=True, exist_ok=True)
        with (_pool(run.workers) or _nullpool()) as pool:
            lines = _map(pool, _gen_one, [(cfg, run.corpus_dir, k) for k in keys])
        _write_manifest(manifest, CORPUS_TAG, header, lines)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return summary


def read_corpus_manifest(corpus_dir: Path) -> Dict[str, str]:
    """Header echo of a generated corpus (raises IncompleteCorpus if absent)."""
    path = Path(corpus_dir) / "manifest.txt"
    header = _read_header(path)
    if header is None or not header or header[0] != f"# {CORPUS_TAG}":
        raise IncompleteCorpus(f"missing corpus manifest {path}")
    return dict(ln[2:].split("=", 1) for ln in header[1:])


def gen_config_from_corpus(corpus_dir: Path) -> GenConfig:
    from .signal_model import SensorProfile

    h = read_corpus_manifest(corpus_dir)
    sensors = []
    for key, value in h.items():
        if key.startswith("sensor."):
            kw = dict(item.split("=") for item in value.split(","))
            sensors.append(SensorProfile(
                key[len("sensor."):], float(kw["mean_rate_hz"]), float(kw["period_oscillation"]),
                float(kw["period_noise"]), int(kw["pressure_levels"]), float(kw["position_noise"]), float(kw["pressure_gamma"]),
                float(kw["timestamp_skew"])))
    return GenConfig(
        master_seed=int(h["master_seed"]), n_users=int(h["n_users"]),
        genuine_jitter=float(h["genuine_jitter"]), session_shift=float(h["session_shift"]),
        forgery_jitter=float(h["forgery_jitter"]), time_warp_strength=float(h["time_warp_strength"]),
        sensors=tuple(sensors),
    )


def load_features(corpus_dir: Path, sig_ids: Sequence[str]) -> Dict[str, FeatureSequence]:
    out = {}
    for sid in sig_ids:
        path = Path(corpus_dir) / signature_path(sid)
        if not path.exists():
            raise IncompleteCorpus(f"missing signature file {path}")
        out[sid] = preprocess(read_signature(path))
    return out


# --- enroll ------------------------------------------------------------------------


def _train_user(args):
    corpus_dir, models_dir, specs, train_cfg = args
    needed = sorted({sid for s in specs for sid in s.training_ids()})
    feats = load_features(corpus_dir, needed)
    lines = []
    for spec in specs:
        model = train_model([feats[sid] for sid in spec.training_ids()], train_cfg)
        rel = model_path(spec.model_id)
        path = Path(models_dir) / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
        lines.append(f"{rel} model_id={spec.model_id} train={','.join(spec.training_ids())}")
    return lines


def _models_header(run: RunConfig) -> Dict[str, str]:
    h = {"corpus_manifest_sha256": sha256_file(run.corpus_dir / "manifest.txt")}
    h.update({k: repr(v) for k, v in asdict(run.train).items()})
    return h


def cmd_enroll(run: RunConfig) -> Dict[str, int]:
    """Train every monosensor and multisensor model of every user."""
    gen = gen_config_from_corpus(run.corpus_dir)
    layout = layout_for(gen)
    header = _models_header(run)
    manifest = run.models_dir / "manifest.txt"
    specs = protocol.all_enrolment_specs(layout)
    summary = {"models": len(specs), "users": layout.n_users}
    if _header_matches(manifest, MODELS_TAG, header):
        log.info("models up to date: %s", manifest)
        return summary
    # fail fast on a missing enrolment file before any training starts
    for sid in sorted({sid for s in specs for sid in s.training_ids()}):
        if not (run.corpus_dir / signature_path(sid)).exists():
            raise IncompleteCorpus(f"missing signature file {run.corpus_dir / signature_path(sid)}")
    by_user: Dict[int, list] = {}
    for s in specs:
        by_user.setdefault(s.user_id, []).append(s)
    tasks = [(run.corpus_dir, run.models_dir, by_user[u], run.train) for u in sorted(by_user)]
    run.models_dir.mkdir(parents=True, exist_ok=True)
    with (_pool(run.workers) or _nullpool()) as pool:
        lines = [ln for chunk in _map(pool, _train_user, tasks) for ln in chunk]
    _write_manifest(manifest, MODELS_TAG, header, lines)
    return summary


# --- scoring -------------------------------------------------------------------------

# inherited by forked workers; set only inside compute_score_matrix
_PROBES: dict = {}


def _score_user(args):
    models_dir, user, model_ids = args
    layout = _PROBES["layout"]
    own = [sid for sensor in layout.sensors for sid in protocol.probe_ids(layout, user, sensor)[0]]
    own_packed = PackedSequences.pack([_PROBES["genuine"][sid] for sid in own])
    rows = []
    for mid in model_ids:
        path = Path(models_dir) / model_path(mid)
        if not path.exists():
            raise MissingModels(f"missing model file {path}")
        model = load_model(path)
        rows.append(np.concatenate([score_packed(model, own_packed), score_packed(model, _PROBES["forgeries"])]))
    return user, model_ids, own, np.array(rows)


def compute_score_matrix(run: RunConfig, layout: protocol.CorpusLayout, model_ids: Sequence[str]) -> protocol.ScoreMatrix:
    """Score each model against its user's session-3 genuines and every forgery."""
    forg_ids = [sid for u in layout.users for s in layout.sensors for sid in protocol.probe_ids(layout, u, s)[1]]
    gen_ids = [sid for u in layout.users for s in layout.sensors for sid in protocol.probe_ids(layout, u, s)[0]]
    feats = load_features(run.corpus_dir, gen_ids + forg_ids)
    _PROBES.clear()
    _PROBES.update(
        layout=layout,
        genuine={sid: feats[sid] for sid in gen_ids},
        forgeries=PackedSequences.pack([feats[sid] for sid in forg_ids]),
    )
    by_user: Dict[int, List[str]] = {}
    for mid in model_ids:
        by_user.setdefault(int(mid[1:4]), []).append(mid)
    matrix = protocol.ScoreMatrix(sorted(model_ids), sorted(gen_ids + forg_ids))
    tasks = [(run.models_dir, u, sorted(by_user[u])) for u in sorted(by_user)]
    try:
        with (_pool(run.workers) or _nullpool()) as pool:
            for user, mids, own, rows in _map(pool, _score_user, tasks):
                for mid, row in zip(mids, rows):
                    matrix.set_row(mid, own + forg_ids, row)
    finally:
        _PROBES.clear()
    return matrix


# --- experiment / report ---------------------------------------------------------------


def _parse_selection(experiments) -> List[tuple]:
    if experiments is None:
        return list(ALL_EXPERIMENTS)
    out = []
    for item in experiments:
        if isinstance(item, tuple):
            out.append(item)
        elif item in ("interop", "fusion"):
            out += [e for e in ALL_EXPERIMENTS if e[0] == item]
        else:
            kind, _, variant = item.partition(":")
            if (kind, variant) not in ALL_EXPERIMENTS:
                raise InvalidConfig(f"unknown experiment {item!r}")
            out.append((kind, variant))
    return sorted(set(out), key=ALL_EXPERIMENTS.index)


def _needed_models(layout, selection) -> List[str]:
    need_multi = ("interop", "multisensor_enrol") in selection
    need_mono = any(e != ("interop", "multisensor_enrol") for e in selection)
    specs = protocol.all_enrolment_specs(layout)
    return [s.model_id for s in specs
            if (s.strategy == protocol.MULTISENSOR and need_multi) or (s.strategy == protocol.MONOSENSOR and need_mono)]


def run_experiments(matrix: protocol.ScoreMatrix, layout, selection):
    for kind, variant in selection:
        for sensor in layout.sensors:
            if kind == "interop":
                yield protocol.run_interop_experiment(matrix, layout, variant, sensor)
            else:
                yield protocol.run_fusion_experiment(matrix, layout, variant, sensor)


def eer_rows(ss: protocol.ScoreSet, det_dir: Optional[Path] = None):
    gen = ss.by_label(protocol.GENUINE_LABEL)
    rows = []
    for mode, label in ((evaluation.SKILLED, protocol.REAL_IMPOSTOR), (evaluation.RANDOM, protocol.CASUAL_IMPOSTOR)):
        curve = evaluation.far_frr_curve(gen, ss.by_label(label))
        if det_dir is not None:
            evaluation.export_det(curve, det_dir / f"{ss.experiment_id}_{mode}.csv")
        rows.append((ss.experiment_id, mode, evaluation.eer(curve, mode).eer))
    return rows


def cmd_experiment(run: RunConfig):
    """Score, assemble the selected experiments, export scores/DETs and the EER table."""
    gen = gen_config_from_corpus(run.corpus_dir)
    layout = layout_for(gen)
    selection = _parse_selection(run.experiments)
    models_manifest = run.models_dir / "manifest.txt"
    if _read_header(models_manifest) is None:
        raise MissingModels(f"no trained models under {run.models_dir}; run `enroll` first")
    header = {
        "models_manifest_sha256": sha256_file(models_manifest),
        "experiments": ",".join(f"{k}:{v}" for k, v in selection),
    }
    manifest = run.scores_dir / "manifest.txt"
    if _header_matches(manifest, SCORES_TAG, header) and run.report_path.exists():
        log.info("scores up to date: %s", manifest)
        return evaluation.parse_eer_report(run.report_path.read_text(encoding="utf-8"))

    matrix = compute_score_matrix(run, layout, _needed_models(layout, selection))
    run.scores_dir.mkdir(parents=True, exist_ok=True)
    run.det_dir.mkdir(parents=True, exist_ok=True)
    rows, lines = [], []
    for ss in run_experiments(matrix, layout, selection):
        ss.to_csv(run.scores_dir / f"{ss.experiment_id}.csv")
        lines.append(
            f"{ss.experiment_id}.csv rows={len(ss)} "
            + " ".join(f"{lab}={ss.count(lab)}" for lab in protocol.LABELS)
        )
        rows += eer_rows(ss, run.det_dir)
        log.info("%s: %d records", ss.experiment_id, len(ss))
    report = evaluation.format_eer_report(rows)
    run.report_path.write_text(report, encoding="utf-8")
    _write_manifest(manifest, SCORES_TAG, header, lines)
    return evaluation.parse_eer_report(report)


def cmd_report(run: RunConfig) -> str:
    """Rebuild the EER table from the score files on disk."""
    files = sorted(run.scores_dir.glob("*.csv"))
    if not files:
        raise IncompleteCorpus(f"no score files under {run.scores_dir}; run `experiment` first")
    order = {f"{k}_{protocol._INTEROP_TAG.get(v) or protocol._FUSION_TAG[v]}": i for i, (k, v) in enumerate(ALL_EXPERIMENTS)}

    def key(p):
        stem = p.stem.rsplit("_", 1)
        return (order.get(stem[0], len(order)), p.stem)

    rows = []
    for path in sorted(files, key=key):
        rows += eer_rows(protocol.read_scores_csv(path))
    report = evaluation.format_eer_report(rows)
    run.report_path.write_text(report, encoding="utf-8")
    return report
