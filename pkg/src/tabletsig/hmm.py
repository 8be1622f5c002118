"""Left-to-right continuous HMM with diagonal Gaussian-mixture emissions.

Training is Baum-Welch in the log domain; scoring is the forward
log-likelihood divided by the number of frames.  The inner loops live in
numba kernels; everything else is plain numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from numba import njit

from .errors import (
    DimensionMismatch,
    EmptyTrainingSet,
    ModelFormatError,
    NumericalUnderflow,
    SequenceTooShort,
)

FORMAT_TAG = "tabletsig-hmm"
FORMAT_VERSION = 1

SELF_TRANSITION_INIT = 0.9
# absolute lower bound on the variance floor; keeps constant dimensions finite
MIN_VARIANCE = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TrainConfig:
    n_states: int = 2
    n_mixtures: int = 4
    max_iterations: int = 20
    ll_tolerance: float = 1e-4
    variance_floor_factor: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if min(self.n_states, self.n_mixtures) < 1 or self.max_iterations < 0:
            raise ValueError("n_states, n_mixtures must be >= 1 and max_iterations >= 0")
        if not self.ll_tolerance > 0:
            raise ValueError("ll_tolerance must be positive")
        if self.variance_floor_factor < 0:
            raise ValueError("variance_floor_factor must be >= 0")


@dataclass
class HmmModel:
    """Parameters of a left-to-right HMM.

    Shapes: ``start`` (S,), ``trans`` (S, S), ``weights`` (S, M),
    ``means`` and ``variances`` (S, M, D), ``var_floor`` (D,).
    """

    start: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    var_floor: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return self.weights.shape[0]

    @property
    def n_mixtures(self) -> int:
        return self.weights.shape[1]

    @property
    def n_dims(self) -> int:
        return self.means.shape[2]

    def emission_params(self):
        """(means, inverse variances, per-component log constants), cached.

        Means and inverse variances come back as (S, M, D) arrays.
        """
        if "emis" not in self._cache:
            with np.errstate(divide="ignore"):
                log_w = np.log(self.weights)
            lconst = log_w - 0.5 * (self.n_dims * _LOG_2PI + np.log(self.variances).sum(axis=2))
            self._cache["emis"] = (
                np.ascontiguousarray(self.means),
                np.ascontiguousarray(1.0 / self.variances),
                np.ascontiguousarray(lconst),
            )
        return self._cache["emis"]

    def scoring_params(self):
        """Emission parameters flattened to the (D, S*M) layout of the scorer."""
        if "scoring" not in self._cache:
            means, ivars, lconst = self.emission_params()
            C = self.n_states * self.n_mixtures
            self._cache["scoring"] = (
                np.ascontiguousarray(means.reshape(C, -1).T),
                np.ascontiguousarray(ivars.reshape(C, -1).T),
                np.ascontiguousarray(lconst.ravel()),
                self.n_states,
            )
        return self._cache["scoring"]

    def log_transitions(self):
        if "trans" not in self._cache:
            with np.errstate(divide="ignore"):
                self._cache["trans"] = (np.log(self.start), np.log(self.trans))
        return self._cache["trans"]

    def check(self, tol: float = 1e-9) -> None:
        """Assert the structural invariants (used by tests and the loader)."""
        S = self.n_states
        allowed = np.eye(S, dtype=bool) | np.eye(S, k=1, dtype=bool)
        assert np.all(self.trans[~allowed] == 0), "transition matrix not left-to-right"
        assert np.allclose(self.trans.sum(axis=1), 1.0, atol=tol, rtol=0)
        assert self.start[0] == 1.0 and np.all(self.start[1:] == 0)
        assert np.allclose(self.weights.sum(axis=1), 1.0, atol=tol, rtol=0)
        assert np.all(self.variances >= self.var_floor)


# --- numba kernels ------------------------------------------------------------


@njit(cache=True)
def _lse(a):
    m = -np.inf
    for v in a:
        if v > m:
            m = v
    if m == -np.inf:
        return m
    s = 0.0
    for v in a:
        s += math.exp(v - m)
    return m + math.log(s)


@njit(cache=True)
def _component_logdens(X, means, ivars, lconst):
    F, D = X.shape
    S, M = lconst.shape
    out = np.empty((F, S, M))
    for f in range(F):
        for s in range(S):
            for m in range(M):
                q = 0.0
                for d in range(D):
                    diff = X[f, d] - means[s, m, d]
                    q += diff * diff * ivars[s, m, d]
                out[f, s, m] = lconst[s, m] - 0.5 * q
    return out


@njit(cache=True)
def _state_logdens(X, means_t, ivars_t, lconst_flat, n_states):
    """Per-frame state log-densities; component parameters are laid out (D, S*M)."""
    F, D = X.shape
    C = lconst_flat.shape[0]
    M = C // n_states
    out = np.empty((F, n_states))
    acc = np.empty(C)
    for f in range(F):
        for c in range(C):
            acc[c] = 0.0
        for d in range(D):
            x = X[f, d]
            for c in range(C):
                diff = x - means_t[d, c]
                acc[c] += diff * diff * ivars_t[d, c]
        for s in range(n_states):
            top = -np.inf
            for c in range(s * M, (s + 1) * M):
                acc[c] = lconst_flat[c] - 0.5 * acc[c]
                if acc[c] > top:
                    top = acc[c]
            if top == -np.inf:
                out[f, s] = top
                continue
            tot = 0.0
            for c in range(s * M, (s + 1) * M):
                # exp(-40) is below the resolution of a sum that contains 1.0
                if acc[c] - top > -40.0:
                    tot += math.exp(acc[c] - top)
            out[f, s] = top + math.log(tot)
    return out


@njit(cache=True)
def _forward_log(logb, lo, hi, log_start, log_trans):
    """Log-domain forward recursion over frames [lo, hi), renormalized per frame."""
    S = logb.shape[1]
    alpha = np.empty(S)
    nxt = np.empty(S)
    tmp = np.empty(S)
    for j in range(S):
        alpha[j] = log_start[j] + logb[lo, j]
    c = _lse(alpha)
    total = c
    for j in range(S):
        alpha[j] -= c
    for t in range(lo + 1, hi):
        for j in range(S):
            for i in range(S):
                tmp[i] = alpha[i] + log_trans[i, j]
            nxt[j] = logb[t, j] + _lse(tmp)
        c = _lse(nxt)
        total += c
        for j in range(S):
            alpha[j] = nxt[j] - c
    return total


@njit(cache=True)
def _forward_packed(logb, offsets, start, trans, log_start, log_trans):
    """Total log-likelihood per packed sequence.

    Runs the scaled linear-domain recursion (emissions shifted by their
    per-frame maximum, alpha renormalized every frame); a sequence whose
    scaled mass underflows to zero is recomputed in the log domain.
    """
    n_seq = offsets.shape[0] - 1
    S = logb.shape[1]
    out = np.empty(n_seq)
    alpha = np.empty(S)
    nxt = np.empty(S)
    b = np.empty(S)
    for k in range(n_seq):
        lo = offsets[k]
        hi = offsets[k + 1]
        total = 0.0
        ok = True
        for t in range(lo, hi):
            top = -np.inf
            for j in range(S):
                if logb[t, j] > top:
                    top = logb[t, j]
            if top == -np.inf:
                ok = False
                break
            for j in range(S):
                b[j] = math.exp(logb[t, j] - top)
            if t == lo:
                for j in range(S):
                    nxt[j] = start[j] * b[j]
            else:
                for j in range(S):
                    acc = 0.0
                    for i in range(S):
                        acc += alpha[i] * trans[i, j]
                    nxt[j] = acc * b[j]
            c = 0.0
            for j in range(S):
                c += nxt[j]
            if not c > 0.0:
                ok = False
                break
            for j in range(S):
                alpha[j] = nxt[j] / c
            total += math.log(c) + top
        out[k] = total if ok else _forward_log(logb, lo, hi, log_start, log_trans)
    return out


@njit(cache=True)
def _forward_backward(logb, log_start, log_trans):
    """Log posteriors of states, summed transition posteriors and total LL."""
    T, S = logb.shape
    la = np.empty((T, S))
    lb = np.empty((T, S))
    tmp = np.empty(S)
    for j in range(S):
        la[0, j] = log_start[j] + logb[0, j]
    for t in range(1, T):
        for j in range(S):
            for i in range(S):
                tmp[i] = la[t - 1, i] + log_trans[i, j]
            la[t, j] = logb[t, j] + _lse(tmp)
    for i in range(S):
        lb[T - 1, i] = 0.0
    for t in range(T - 2, -1, -1):
        for i in range(S):
            for j in range(S):
                tmp[j] = log_trans[i, j] + logb[t + 1, j] + lb[t + 1, j]
            lb[t, i] = _lse(tmp)
    ll = _lse(la[T - 1])
    gamma = la + lb - ll
    xi = np.zeros((S, S))
    for i in range(S):
        for j in range(S):
            if log_trans[i, j] == -np.inf:
                continue
            for t in range(T - 1):
                xi[i, j] += math.exp(la[t, i] + log_trans[i, j] + logb[t + 1, j] + lb[t + 1, j] - ll)
    return gamma, xi, ll


@njit(cache=True)
def _accumulate(X, means, ivars, lconst, log_start, log_trans, occ, sum_x, xi_tot):
    """E-step for one sequence: adds sufficient statistics in place.

    Returns (log-likelihood, per-frame component responsibilities).
    """
    T, D = X.shape
    S, M = lconst.shape
    comp = _component_logdens(X, means, ivars, lconst)
    logb = np.empty((T, S))
    for t in range(T):
        for s in range(S):
            logb[t, s] = _lse(comp[t, s])
    gamma, xi, ll = _forward_backward(logb, log_start, log_trans)
    resp = np.zeros((T, S, M))
    if not np.isfinite(ll):
        return ll, resp
    for t in range(T):
        for s in range(S):
            if logb[t, s] == -np.inf:
                continue
            for m in range(M):
                r = math.exp(gamma[t, s] + comp[t, s, m] - logb[t, s])
                resp[t, s, m] = r
                occ[s, m] += r
                for d in range(D):
                    sum_x[s, m, d] += r * X[t, d]
    for i in range(S):
        for j in range(S):
            xi_tot[i, j] += xi[i, j]
    return ll, resp


@njit(cache=True)
def _accumulate_sq(X, resp, means, sq):
    T, D = X.shape
    S, M = resp.shape[1], resp.shape[2]
    for t in range(T):
        for s in range(S):
            for m in range(M):
                r = resp[t, s, m]
                if r == 0.0:
                    continue
                for d in range(D):
                    diff = X[t, d] - means[s, m, d]
                    sq[s, m, d] += r * diff * diff


@njit(cache=True)
def _lloyd(X, centroids, max_iter):
    n, D = X.shape
    k = centroids.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    new = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    counts = np.zeros(k, dtype=np.int64)
    for _ in range(max_iter):
        for i in range(n):
            bd = np.inf
            bc = 0
            for c in range(k):
                dist = 0.0
                for d in range(D):
                    diff = X[i, d] - centroids[c, d]
                    dist += diff * diff
                if dist < bd:  # strict: ties keep the lowest index
                    bd = dist
                    bc = c
            new[i] = bc
            best[i] = bd
        counts[:] = 0
        for i in range(n):
            counts[new[i]] += 1
        for c in range(k):
            if counts[c] == 0:
                # farthest point whose own cluster keeps at least one member
                far = -1
                fd = -1.0
                for i in range(n):
                    if counts[new[i]] > 1 and best[i] > fd:
                        fd = best[i]
                        far = i
                if far < 0:
                    continue
                counts[new[far]] -= 1
                new[far] = c
                best[far] = 0.0
                counts[c] = 1
        changed = False
        for i in range(n):
            if new[i] != labels[i]:
                changed = True
            labels[i] = new[i]
        if not changed:
            break
        centroids[:, :] = 0.0
        for i in range(n):
            for d in range(D):
                centroids[labels[i], d] += X[i, d]
        for c in range(k):
            for d in range(D):
                centroids[c, d] /= max(counts[c], 1)
    return centroids, labels


# --- packing & scoring ------------------------------------------------------------


@dataclass(frozen=True)
class PackedSequences:
    """Several feature matrices concatenated row-wise with frame offsets."""

    data: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, seqs: Sequence) -> "PackedSequences":
        mats = [np.asarray(getattr(s, "data", s), dtype=float) for s in seqs]
        offsets = np.zeros(len(mats) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([m.shape[0] for m in mats])
        data = np.ascontiguousarray(np.concatenate(mats, axis=0)) if mats else np.empty((0, 0))
        return cls(data, offsets)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1


def score_packed(model: HmmModel, packed: PackedSequences) -> np.ndarray:
    """Length-normalized forward log-likelihood of every packed sequence."""
    if len(packed) == 0:
        return np.empty(0)
    if packed.data.shape[1] != model.n_dims:
        raise DimensionMismatch(f"model has {model.n_dims} dims, data has {packed.data.shape[1]}")
    if np.any(packed.lengths < 1):
        raise SequenceTooShort("cannot score an empty sequence")
    logb = _state_logdens(packed.data, *model.scoring_params())
    totals = _forward_packed(logb, packed.offsets, model.start, model.trans, *model.log_transitions())
    if not np.all(np.isfinite(totals)):
        raise NumericalUnderflow("forward recursion produced a non-finite likelihood")
    return totals / packed.lengths


def score_batch(model: HmmModel, seqs: Sequence) -> np.ndarray:
    return score_packed(model, PackedSequences.pack(seqs))


def log_likelihood(model: HmmModel, test) -> float:
    """Similarity score: (1/N) ln p(O | model); higher is more similar."""
    data = np.asarray(getattr(test, "data", test), dtype=float)
    if data.ndim != 2 or data.shape[1] != model.n_dims:
        raise DimensionMismatch(f"expected N x {model.n_dims} data, got {data.shape}")
    return float(score_packed(model, PackedSequences.pack([data]))[0])


# --- initialization ---------------------------------------------------------------


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    """Lloyd's algorithm with k-means++ seeding.

    Ties go to the lowest-index centroid; an emptied cluster is reseeded with
    the point farthest from its current centroid.  Returns (centroids, labels).
    """
    X = np.ascontiguousarray(X, dtype=float)
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centroids[c] = X[idx]
        d2 = np.minimum(d2, ((X - centroids[c]) ** 2).sum(axis=1))
    return _lloyd(X, centroids, max_iter)


def _as_matrices(train) -> List[np.ndarray]:
    mats = [np.ascontiguousarray(getattr(s, "data", s), dtype=float) for s in train]
    if not mats:
        raise EmptyTrainingSet("no training sequences")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise DimensionMismatch(f"inconsistent feature dimensions {sorted(dims)}")
    return mats


def variance_floor(mats: List[np.ndarray], factor: float) -> np.ndarray:
    pooled = np.concatenate(mats, axis=0)
    return np.maximum(factor * pooled.var(axis=0), MIN_VARIANCE)


def init_model(train, cfg: TrainConfig) -> HmmModel:
    """Equal-length segmentation per sequence, then k-means within each state."""
    mats = _as_matrices(train)
    S, M = cfg.n_states, cfg.n_mixtures
    short = [m.shape[0] for m in mats if m.shape[0] < S]
    if short:
        raise SequenceTooShort(f"sequence of {short[0]} frames cannot fill {S} states")
    D = mats[0].shape[1]
    floor = variance_floor(mats, cfg.variance_floor_factor)
    segments = [[] for _ in range(S)]
    for m in mats:
        for s, seg in enumerate(np.array_split(m, S)):
            segments[s].append(seg)

    weights = np.empty((S, M))
    means = np.empty((S, M, D))
    variances = np.empty((S, M, D))
    for s in range(S):
        frames = np.concatenate(segments[s], axis=0)
        rng = np.random.default_rng([cfg.seed, s])
        if M == 1:
            centroids, labels = frames.mean(axis=0, keepdims=True), np.zeros(len(frames), dtype=int)
        else:
            centroids, labels = kmeans(frames, M, rng)
        for c in range(M):
            members = frames[labels == c]
            weights[s, c] = len(members) / len(frames)
            means[s, c] = centroids[c]
            var = members.var(axis=0) if len(members) else np.zeros(D)
            variances[s, c] = np.maximum(var, floor)

    trans = np.zeros((S, S))
    for i in range(S - 1):
        trans[i, i] = SELF_TRANSITION_INIT
        trans[i, i + 1] = 1.0 - SELF_TRANSITION_INIT
    trans[S - 1, S - 1] = 1.0
    start = np.zeros(S)
    start[0] = 1.0
    return HmmModel(start, trans, weights, means, variances, floor)


# --- Baum-Welch -------------------------------------------------------------------


def _e_step(model: HmmModel, mats: List[np.ndarray]):
    S, M, D = model.n_states, model.n_mixtures, model.n_dims
    means, ivars, lconst = model.emission_params()
    log_start, log_trans = model.log_transitions()
    occ = np.zeros((S, M))
    sum_x = np.zeros((S, M, D))
    xi_tot = np.zeros((S, S))
    total_ll = 0.0
    post = []
    for X in mats:
        ll, resp = _accumulate(X, means, ivars, lconst, log_start, log_trans, occ, sum_x, xi_tot)
        if not math.isfinite(ll):
            raise NumericalUnderflow("training sequence has zero likelihood under the model")
        total_ll += ll
        post.append(resp)
    return total_ll, occ, sum_x, xi_tot, post


def _m_step(model: HmmModel, mats, occ, sum_x, xi_tot, post) -> HmmModel:
    S = model.n_states
    live = occ > 1e-300
    means = model.means.copy()
    means[live] = sum_x[live] / occ[live][:, None]
    sq = np.zeros_like(means)
    for X, r in zip(mats, post):
        _accumulate_sq(X, r, means, sq)
    variances = model.variances.copy()
    variances[live] = sq[live] / occ[live][:, None]
    variances = np.maximum(variances, model.var_floor)

    weights = model.weights.copy()
    state_occ = occ.sum(axis=1)
    visited = state_occ > 1e-300
    weights[visited] = occ[visited] / state_occ[visited][:, None]

    trans = model.trans.copy()
    for i in range(S - 1):
        row = xi_tot[i, i] + xi_tot[i, i + 1]
        if row > 1e-300:
            trans[i, i] = xi_tot[i, i] / row
            trans[i, i + 1] = xi_tot[i, i + 1] / row
    return HmmModel(model.start.copy(), trans, weights, means, variances, model.var_floor.copy())


def train_baum_welch(model: HmmModel, train, cfg: TrainConfig) -> Tuple[HmmModel, List[float]]:
    """EM re-estimation; returns the trained model and the total-LL trace.

    ``trace[i]`` is the training log-likelihood of the model after ``i``
    M-steps.  Training stops after ``max_iterations`` M-steps or once the
    relative gain drops below ``ll_tolerance``.
    """
    mats = _as_matrices(train)
    if mats[0].shape[1] != model.n_dims:
        raise DimensionMismatch(f"model has {model.n_dims} dims, data has {mats[0].shape[1]}")
    stats = _e_step(model, mats)
    trace = [stats[0]]
    for _ in range(cfg.max_iterations):
        model = _m_step(model, mats, *stats[1:])
        stats = _e_step(model, mats)
        trace.append(stats[0])
        if trace[-1] - trace[-2] < cfg.ll_tolerance * abs(trace[-2]):
            break
    return model, trace


def train_model(train, cfg: TrainConfig) -> HmmModel:
    model, _ = train_baum_welch(init_model(train, cfg), train, cfg)
    return model


# --- serialization ----------------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def format_model(model: HmmModel) -> str:
    S, M, D = model.n_states, model.n_mixtures, model.n_dims
    lines = [
        f"{FORMAT_TAG} {FORMAT_VERSION}",
        f"n_states {S}",
        f"n_mixtures {M}",
        f"n_dims {D}",
        f"start {_fmt(model.start)}",
    ]
    for i in range(S):
        lines.append(f"trans {i} {_fmt(model.trans[i])}")
    lines.append(f"var_floor {_fmt(model.var_floor)}")
    for s in range(S):
        for m in range(M):
            lines.append(f"weight {s} {m} {_fmt([model.weights[s, m]])}")
            lines.append(f"mean {s} {m} {_fmt(model.means[s, m])}")
            lines.append(f"var {s} {m} {_fmt(model.variances[s, m])}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> HmmModel:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    try:
        if lines[0] != [FORMAT_TAG, str(FORMAT_VERSION)]:
            raise ModelFormatError(f"unsupported model header {' '.join(lines[0])!r}")
        S, M, D = (int(lines[k][1]) for k in (1, 2, 3))
        start = np.array(lines[4][1:], dtype=float)
        trans = np.empty((S, S))
        weights = np.empty((S, M))
        means = np.empty((S, M, D))
        variances = np.empty((S, M, D))
        floor = None
        for ln in lines[5:]:
            tag = ln[0]
            if tag == "trans":
                trans[int(ln[1])] = np.array(ln[2:], dtype=float)
            elif tag == "var_floor":
                floor = np.array(ln[1:], dtype=float)
            elif tag == "weight":
                weights[int(ln[1]), int(ln[2])] = float(ln[3])
            elif tag == "mean":
                means[int(ln[1]), int(ln[2])] = np.array(ln[3:], dtype=float)
            elif tag == "var":
                variances[int(ln[1]), int(ln[2])] = np.array(ln[3:], dtype=float)
            else:
                raise ModelFormatError(f"unknown record {tag!r}")
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None
    if floor is None or len(lines) != 6 + S + 3 * S * M:
        raise ModelFormatError("model file is incomplete")
    return HmmModel(start, trans, weights, means, variances, floor)


def save_model(model: HmmModel, path) -> None:
    Path(path).write_text(format_model(model), encoding="utf-8")


def load_model(path) -> HmmModel:
    return parse_model(Path(path).read_text(encoding="utf-8"))
