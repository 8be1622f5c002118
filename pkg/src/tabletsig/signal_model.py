"""Raw and uniformly resampled signature representations.

A raw signature is the irregularly timestamped stream ``(t_ms, x, y, p)``
delivered by a tablet digitizer.  ``resample_uniform`` maps it onto a fixed
rate grid anchored at the first raw timestamp using linear interpolation of
all three channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    NonMonotonicTime,
    PressureOutOfRange,
    SignatureFormatError,
    TooFewSamples,
)

GENUINE = "genuine"
SKILLED_FORGERY = "skilled_forgery"
KINDS = (GENUINE, SKILLED_FORGERY)

DEFAULT_RATE_HZ = 100.0


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SensorProfile:
    """Timing and pressure characteristics of a simulated digitizer."""

    name: str
    mean_rate_hz: float = 133.0
    period_oscillation: float = 0.0
    period_noise: float = 0.0
    pressure_levels: int = 256
    position_noise: float = 0.0  # std of white digitizer noise on x and y, position units
    pressure_gamma: float = 1.0  # transfer curve exponent, reported = levels * (p / 255) ** gamma
    # share of the period modulation that lives only in the reported timestamps;
    # 0 = pen sampled exactly when stamped, 1 = pen sampled on the steady mean clock
    timestamp_skew: float = 0.0

    def __post_init__(self):
        if not self.mean_rate_hz > 0:
            raise ValueError("mean_rate_hz must be positive")
        if not 0 <= self.period_oscillation < 1 or self.period_noise < 0:
            raise ValueError("oscillation must lie in [0, 1) and noise be >= 0")
        if self.period_oscillation + self.period_noise >= 1:
            raise ValueError("period_oscillation + period_noise must stay below 1")
        if not 0 <= self.timestamp_skew <= 1:
            raise ValueError("timestamp_skew must lie in [0, 1]")
        if not self.pressure_gamma > 0:
            raise ValueError("pressure_gamma must be > 0")
        if self.position_noise < 0:
            raise ValueError("position_noise must be >= 0")
        if self.pressure_levels < 2:
            raise ValueError("pressure_levels must be >= 2")


@dataclass(frozen=True)
class RawSignature:
    user_id: int
    session: int
    index: int
    sensor_id: str
    kind: str
    samples: np.ndarray  # (N, 4): t_ms, x, y, p
    forger_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(self.samples).reshape(-1, 4))

    @property
    def t(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def y(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def p(self) -> np.ndarray:
        return self.samples[:, 3]

    @property
    def sig_id(self) -> str:
        return signature_id(self.user_id, self.sensor_id, self.kind, self.session, self.index)


def signature_id(user_id: int, sensor_id: str, kind: str, session: int, index: int) -> str:
    """Stable identifier, e.g. ``u007_A_g3_1`` (genuine) or ``u007_A_f2_5`` (forgery)."""
    tag = "g" if kind == GENUINE else "f"
    return f"u{user_id:03d}_{sensor_id}_{tag}{session}_{index}"


@dataclass(frozen=True)
class UniformSignature:
    user_id: int
    session: int
    index: int
    sensor_id: str
    kind: str
    rate_hz: float
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    forger_id: Optional[int] = None

    def __post_init__(self):
        for name in ("x", "y", "p"):
            object.__setattr__(self, name, _frozen(getattr(self, name)).ravel())
        n = len(self.x)
        if len(self.y) != n or len(self.p) != n:
            raise ValueError("channels x, y, p must have equal length")
        if n < 2:
            raise TooFewSamples(f"uniform signature needs >= 2 frames, got {n}")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all() and np.isfinite(self.p).all()):
            raise ValueError("non-finite channel value")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def sig_id(self) -> str:
        return signature_id(self.user_id, self.sensor_id, self.kind, self.session, self.index)


def validate_raw(raw: RawSignature) -> RawSignature:
    s = raw.samples
    if s.shape[0] < 2:
        raise TooFewSamples(f"{s.shape[0]} sample(s); at least 2 required")
    if not np.all(np.diff(s[:, 0]) > 0):
        raise NonMonotonicTime("timestamps must be strictly increasing")
    p = s[:, 3]
    if np.any(p < 0) or np.any(p > 255) or not np.all(p == np.round(p)):
        raise PressureOutOfRange("pressure must be an integer level in [0, 255]")
    if raw.session not in (1, 2, 3) or not 1 <= raw.index <= 5:
        raise ValueError(f"session/index out of range: {raw.session}/{raw.index}")
    if raw.kind not in KINDS:
        raise ValueError(f"unknown kind {raw.kind!r}")
    if (raw.kind == SKILLED_FORGERY) != (raw.forger_id is not None):
        raise ValueError("forger_id is required iff kind is skilled_forgery")
    return raw


def grid_length(t_first: float, t_last: float, target_hz: float) -> int:
    # small slack absorbs round-off when the span is an exact multiple of the step
    return int(math.floor((t_last - t_first) * target_hz / 1000.0 + 1e-9)) + 1


def resample_uniform(raw: RawSignature, target_hz: float = DEFAULT_RATE_HZ) -> UniformSignature:
    """Linearly interpolate x, y and p onto ``t_first + k / target_hz``.

    Pressure is kept as a real value after interpolation.
    """
    if not target_hz > 0:
        raise ValueError("target_hz must be positive")
    validate_raw(raw)
    t = raw.t
    n = grid_length(t[0], t[-1], target_hz)
    grid = t[0] + np.arange(n) * (1000.0 / target_hz)
    return UniformSignature(
        user_id=raw.user_id,
        session=raw.session,
        index=raw.index,
        sensor_id=raw.sensor_id,
        kind=raw.kind,
        forger_id=raw.forger_id,
        rate_hz=float(target_hz),
        x=np.interp(grid, t, raw.x),
        y=np.interp(grid, t, raw.y),
        p=np.interp(grid, t, raw.p),
    )


# --- text file format -------------------------------------------------------

_REQUIRED_KEYS = ("user", "session", "index", "sensor", "kind")


def format_signature(raw: RawSignature) -> str:
    lines = [
        f"# user={raw.user_id}",
        f"# session={raw.session}",
        f"# index={raw.index}",
        f"# sensor={raw.sensor_id}",
        f"# kind={raw.kind}",
    ]
    if raw.forger_id is not None:
        lines.append(f"# forger={raw.forger_id}")
    for t, x, y, p in raw.samples:
        lines.append(f"{float(t)!r} {float(x)!r} {float(y)!r} {int(p)}")
    return "\n".join(lines) + "\n"


def parse_signature(text: str) -> RawSignature:
    header = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                raise SignatureFormatError(f"line {lineno}: malformed header {line!r}")
            header[key.strip()] = value.strip()
            continue
        fields = line.split()
        if len(fields) != 4:
            raise SignatureFormatError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError as exc:
            raise SignatureFormatError(f"line {lineno}: {exc}") from None
    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise SignatureFormatError(f"missing header key(s): {', '.join(missing)}")
    if header["kind"] not in KINDS:
        raise SignatureFormatError(f"unknown kind {header['kind']!r}")
    forger = header.get("forger")
    return RawSignature(
        user_id=int(header["user"]),
        session=int(header["session"]),
        index=int(header["index"]),
        sensor_id=header["sensor"],
        kind=header["kind"],
        forger_id=int(forger) if forger is not None else None,
        samples=np.array(rows, dtype=float).reshape(-1, 4),
    )


def write_signature(raw: RawSignature, path) -> None:
    Path(path).write_text(format_signature(raw), encoding="utf-8")


def read_signature(path) -> RawSignature:
    return parse_signature(Path(path).read_text(encoding="utf-8"))
