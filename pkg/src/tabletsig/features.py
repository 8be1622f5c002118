"""Fourteen discrete-time functions derived from a uniform pen trajectory.

Channels, in column order::

    x, y, p, theta, v, rho, a, dx, dy, dp, dtheta, dv, drho, da

theta is the path-tangent angle (unwrapped so it is continuous), v the path
speed, rho the log radius of curvature and a the total acceleration.  The
last seven columns are first time-derivatives of the first seven.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateSignature
from .signal_model import UniformSignature, resample_uniform

CHANNELS = (
    "x", "y", "p", "theta", "v", "rho", "a",
    "dx", "dy", "dp", "dtheta", "dv", "drho", "da",
)
N_FEATURES = len(CHANNELS)

RHO_EPS = 1e-6
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class FeatureSequence:
    sig_id: str
    user_id: int
    sensor_id: str
    kind: str
    data: np.ndarray  # (N, 14)
    forger_id: Optional[int] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != N_FEATURES:
            raise ValueError(f"feature matrix must be N x {N_FEATURES}, got {data.shape}")
        if data.shape[0] < 2:
            raise DegenerateSignature("feature sequence needs >= 2 frames")
        if not np.isfinite(data).all():
            raise ValueError("non-finite feature value")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def with_data(self, data) -> "FeatureSequence":
        return FeatureSequence(self.sig_id, self.user_id, self.sensor_id, self.kind, data, self.forger_id)


def _deriv(z, dt):
    # central differences inside, one-sided at both ends
    return np.gradient(z, dt, edge_order=1)


def extract_features(u: UniformSignature) -> FeatureSequence:
    n = len(u.x)
    if n < 2:
        raise DegenerateSignature(f"{n} frame(s); at least 2 required")
    dt = 1.0 / u.rate_hz
    x, y, p = u.x, u.y, u.p
    dx, dy, dp = _deriv(x, dt), _deriv(y, dt), _deriv(p, dt)
    theta = np.unwrap(np.arctan2(dy, dx))
    v = np.hypot(dx, dy)
    dtheta = _deriv(theta, dt)
    rho = np.log((v + RHO_EPS) / (np.abs(dtheta) + RHO_EPS))
    dv = _deriv(v, dt)
    a = np.hypot(dv, v * dtheta)
    data = np.column_stack([
        x, y, p, theta, v, rho, a,
        dx, dy, dp, dtheta, dv, _deriv(rho, dt), _deriv(a, dt),
    ])
    return FeatureSequence(u.sig_id, u.user_id, u.sensor_id, u.kind, data, u.forger_id)


def znormalize(f: FeatureSequence) -> FeatureSequence:
    """Per-signature standardization with population std; flat channels become 0."""
    d = f.data
    mean = d.mean(axis=0)
    std = d.std(axis=0)
    flat = std < STD_FLOOR
    out = (d - mean) / np.where(flat, 1.0, std)
    out[:, flat] = 0.0
    return f.with_data(out)


def export_features(f: FeatureSequence, path) -> None:
    lines = [" ".join(CHANNELS)]
    lines += [" ".join(format(v, ".17g") for v in row) for row in f.data]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_feature_dump(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(lines[0].split()) != CHANNELS:
        raise ValueError("feature dump header does not name the 14 channels")
    return np.array([[float(v) for v in ln.split()] for ln in lines[1:] if ln.strip()])


def preprocess(raw, rate_hz: float = 100.0) -> FeatureSequence:
    """Raw capture -> uniform grid -> 14 functions -> per-signature z-scores."""
    return znormalize(extract_features(resample_uniform(raw, rate_hz)))
