"""FAR/FRR curves, equal error rates and DET exports.

A claim is accepted iff ``score >= threshold``.  Curves are evaluated at
every distinct observed score plus the two infinite sentinels, so the first
point is (far=1, frr=0) and the last is (far=0, frr=1).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from .errors import EmptyScoreSet, IoFailure

SKILLED = "skilled"
RANDOM = "random"


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray
    n_genuine: Optional[int] = None
    n_impostor: Optional[int] = None

    def __len__(self) -> int:
        return len(self.thresholds)

    def same_points(self, other: "DetCurve") -> bool:
        return (np.array_equal(self.thresholds, other.thresholds)
                and np.array_equal(self.far, other.far)
                and np.array_equal(self.frr, other.frr))


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold_at_eer: float
    forgery_mode: Optional[str] = None


def far_frr_curve(genuine, impostor) -> DetCurve:
    gen = np.sort(np.asarray(genuine, dtype=float).ravel())
    imp = np.sort(np.asarray(impostor, dtype=float).ravel())
    if gen.size == 0 or imp.size == 0:
        raise EmptyScoreSet(f"need genuine and impostor scores (got {gen.size} and {imp.size})")
    thr = np.concatenate([[-np.inf], np.unique(np.concatenate([gen, imp])), [np.inf]])
    far = (imp.size - np.searchsorted(imp, thr, side="left")) / imp.size
    frr = np.searchsorted(gen, thr, side="left") / gen.size
    return DetCurve(thr, far, frr, int(gen.size), int(imp.size))


def eer(curve: DetCurve, forgery_mode: Optional[str] = None) -> EerResult:
    """Point where FAR equals FRR, interpolated linearly at the sign change."""
    far, frr, thr = curve.far, curve.frr, curve.thresholds
    diff = far - frr
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0:
        return EerResult(float(far[k]), float(thr[k]), forgery_mode)
    # diff[k-1] > 0 > diff[k]; the first curve point always has diff = 1
    frac = diff[k - 1] / (diff[k - 1] - diff[k])
    value = far[k - 1] + frac * (far[k] - far[k - 1])
    lo, hi = thr[k - 1], thr[k]
    if np.isfinite(lo) and np.isfinite(hi):
        t = lo + frac * (hi - lo)
    else:
        t = hi if np.isfinite(hi) else lo
    return EerResult(float(value), float(t), forgery_mode)


def compute_eer(genuine, impostor, forgery_mode: Optional[str] = None) -> EerResult:
    return eer(far_frr_curve(genuine, impostor), forgery_mode)


def export_det(curve: DetCurve, path) -> None:
    lines = ["threshold,far,frr"]
    lines += [f"{t!r},{a!r},{r!r}" for t, a, r in zip(curve.thresholds.tolist(), curve.far.tolist(), curve.frr.tolist())]
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_det(path) -> DetCurve:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != "threshold,far,frr":
        raise ValueError(f"unexpected DET header {lines[0]!r}")
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln], dtype=float)
    rows = rows.reshape(-1, 3)
    return DetCurve(rows[:, 0], rows[:, 1], rows[:, 2])


def format_eer_report(rows: Iterable[Tuple[str, str, float]]) -> str:
    """Text table, one line per (experiment, forgery mode), EER in percent."""
    rows = list(rows)
    width = max([len("experiment")] + [len(r[0]) for r in rows])
    out = [f"{'experiment':<{width}}  forgeries  EER(%)"]
    for exp, mode, value in rows:
        out.append(f"{exp:<{width}}  {mode:<9}  {100.0 * value:6.2f}")
    return "\n".join(out) + "\n"


def parse_eer_report(text: str) -> List[Tuple[str, str, float]]:
    rows = []
    for line in text.splitlines()[1:]:
        if line.strip():
            exp, mode, pct = line.split()
            rows.append((exp, mode, float(pct)))
    return rows
