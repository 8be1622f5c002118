"""Deterministic two-tablet signature corpus.

Each user owns a smooth template trajectory (six sinusoids per axis plus a
writing drift, and a pressure envelope).  Genuine samples perturb the
template slightly per session and per instance; skilled forgeries perturb it
more strongly and pass it through a monotone time warp.  Every trajectory is
then "captured" by a simulated digitizer whose sampling period can oscillate.

All randomness comes from counter-based child seeds, so any single signature
can be regenerated on its own and matches the batch output exactly.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import InvalidConfig, SelfForgery
from .signal_model import GENUINE, SKILLED_FORGERY, RawSignature, SensorProfile, signature_id

N_COMPONENTS = 6
FREQ_BAND = (0.5, 4.0)
DURATION_RANGE = (2.0, 6.0)
PRESSURE_RANGE = (30.0, 255.0)
OSCILLATION_PERIOD = 16  # samples

SESSIONS = (1, 2, 3)
INDICES = (1, 2, 3, 4, 5)


def default_sensors():
    # A: oscillating sampling period (HP TC1100-like); B: steady period (Toshiba M200-like).
    # A's pen is read on a steady clock while its stamps wobble, so the jitter lands in t only.
    return (
        SensorProfile("A", mean_rate_hz=133.0, period_oscillation=0.4, period_noise=0.02, timestamp_skew=1.0),
        SensorProfile("B", mean_rate_hz=133.0, period_oscillation=0.0, period_noise=0.02),
    )


@dataclass(frozen=True)
class GenConfig:
    master_seed: int = 2006
    n_users: int = 53
    genuine_jitter: float = 0.05
    session_shift: float = 0.05
    forgery_jitter: float = 0.25
    time_warp_strength: float = 0.3
    sensors: tuple = field(default_factory=default_sensors)

    def validate(self) -> "GenConfig":
        if self.n_users < 2:
            raise InvalidConfig(f"n_users must be >= 2 (forgeries need another user), got {self.n_users}")
        if not self.forgery_jitter > self.genuine_jitter > 0:
            raise InvalidConfig("require forgery_jitter > genuine_jitter > 0")
        if self.session_shift < 0:
            raise InvalidConfig("session_shift must be >= 0")
        if not 0 <= self.time_warp_strength < 1:
            raise InvalidConfig("time_warp_strength must lie in [0, 1)")
        names = [s.name for s in self.sensors]
        if len(names) != 2 or len(set(names)) != 2:
            raise InvalidConfig(f"exactly two distinct sensors required, got {names}")
        return self

    @property
    def sensor_ids(self) -> List[str]:
        return [s.name for s in self.sensors]

    def sensor(self, name: str) -> SensorProfile:
        for s in self.sensors:
            if s.name == name:
                return s
        raise KeyError(name)

    def describe(self) -> Dict[str, str]:
        """Flat key/value echo used in manifest headers."""
        out = {k: repr(v) for k, v in asdict(self).items() if k != "sensors"}
        for s in self.sensors:
            out[f"sensor.{s.name}"] = (
                f"mean_rate_hz={s.mean_rate_hz!r},period_oscillation={s.period_oscillation!r},"
                f"period_noise={s.period_noise!r},pressure_levels={s.pressure_levels},"
                f"position_noise={s.position_noise!r},pressure_gamma={s.pressure_gamma!r},"
                f"timestamp_skew={s.timestamp_skew!r}"
            )
        return out


def _rng(cfg_seed: int, *key) -> np.random.Generator:
    words = [cfg_seed]
    for k in key:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    return np.random.default_rng(words)


@dataclass(frozen=True)
class UserTemplate:
    user_id: int
    duration_s: float
    amp: np.ndarray  # (2, K)
    freq: np.ndarray  # (2, K) Hz
    phase: np.ndarray  # (2, K)
    drift: np.ndarray  # (2,) units/s
    p_base: float
    p_amp: np.ndarray  # (3,)
    p_freq: np.ndarray
    p_phase: np.ndarray


def make_template(cfg: GenConfig, user_id: int) -> UserTemplate:
    rng = _rng(cfg.master_seed, "template", user_id)
    freq = rng.uniform(*FREQ_BAND, size=(2, N_COMPONENTS))
    amp = rng.uniform(8.0, 30.0, size=(2, N_COMPONENTS)) / freq
    return UserTemplate(
        user_id=user_id,
        duration_s=float(rng.uniform(*DURATION_RANGE)),
        amp=amp,
        freq=freq,
        phase=rng.uniform(0, 2 * math.pi, size=(2, N_COMPONENTS)),
        drift=np.array([rng.uniform(15.0, 45.0), rng.uniform(-4.0, 4.0)]),
        p_base=float(rng.uniform(110.0, 180.0)),
        p_amp=rng.uniform(5.0, 25.0, size=3),
        p_freq=rng.uniform(0.3, 2.0, size=3),
        p_phase=rng.uniform(0, 2 * math.pi, size=3),
    )


@dataclass(frozen=True)
class Trajectory:
    """A concrete pen path: template parameters, playback duration and warp."""

    template: UserTemplate
    duration_s: float
    amp: np.ndarray
    phase: np.ndarray
    p_amp: np.ndarray
    warp_strength: float = 0.0
    warp_cycles: int = 1
    offset: tuple = (0.0, 0.0)

    def template_time(self, t):
        u = np.clip(np.asarray(t, dtype=float) / self.duration_s, 0.0, 1.0)
        k = 2 * math.pi * self.warp_cycles
        u = u - self.warp_strength / k * np.sin(k * u)
        return u * self.template.duration_s

    def xy(self, t):
        tau = self.template_time(t)[..., None]
        tpl = self.template
        out = []
        for axis in range(2):
            arg = 2 * math.pi * tpl.freq[axis] * tau + self.phase[axis]
            out.append((self.amp[axis] * np.sin(arg)).sum(axis=-1) + tpl.drift[axis] * tau[..., 0] + self.offset[axis])
        return out[0], out[1]

    def pressure(self, t):
        tau = self.template_time(t)[..., None]
        tpl = self.template
        wave = (self.p_amp * np.sin(2 * math.pi * tpl.p_freq * tau + tpl.p_phase)).sum(axis=-1)
        return np.clip(tpl.p_base + wave, *PRESSURE_RANGE)


def ideal_trajectory(tpl: UserTemplate) -> Trajectory:
    return Trajectory(tpl, tpl.duration_s, tpl.amp, tpl.phase, tpl.p_amp)


def _perturb(rng, amp, phase, scale):
    return (
        amp * (1.0 + scale * rng.standard_normal(amp.shape)),
        phase + scale * math.pi * rng.standard_normal(phase.shape),
    )


def genuine_trajectory(cfg: GenConfig, tpl: UserTemplate, sensor: str, session: int, index: int) -> Trajectory:
    srng = _rng(cfg.master_seed, "session", tpl.user_id, session)
    amp, phase = _perturb(srng, tpl.amp, tpl.phase, cfg.session_shift)
    speed = 1.0 + cfg.session_shift * srng.standard_normal()
    irng = _rng(cfg.master_seed, GENUINE, tpl.user_id, sensor, session, index)
    amp, phase = _perturb(irng, amp, phase, cfg.genuine_jitter)
    speed *= 1.0 + cfg.genuine_jitter * irng.standard_normal()
    p_amp = tpl.p_amp * (1.0 + cfg.genuine_jitter * irng.standard_normal(3))
    return Trajectory(
        tpl, tpl.duration_s * abs(speed), amp, phase, p_amp,
        warp_strength=cfg.genuine_jitter * irng.uniform(0.0, 1.0),
        warp_cycles=int(irng.integers(1, 3)),
        offset=tuple(irng.uniform(0.0, 100.0, size=2)),
    )


def forger_for(cfg: GenConfig, user_id: int, session: int) -> int:
    """The user who produced the target's forgery session ``session``."""
    rng = _rng(cfg.master_seed, "forger", user_id, session)
    k = int(rng.integers(1, cfg.n_users))
    return (user_id - 1 + k) % cfg.n_users + 1


def synthesize_forgery(cfg: GenConfig, target: UserTemplate, forger_id: int, sensor: str,
                       session: int, index: int) -> Trajectory:
    """Imitation of ``target`` by ``forger_id``.

    Shape and timing follow the target with ``forgery_jitter``-scale errors
    and a monotone time warp; pressure, which cannot be observed, is half the
    forger's own habit.
    """
    if forger_id == target.user_id:
        raise SelfForgery(f"user {forger_id} cannot forge their own signature")
    frng = _rng(cfg.master_seed, "forgery-session", target.user_id, session)
    amp, phase = _perturb(frng, target.amp, target.phase, cfg.forgery_jitter)
    speed = 1.0 + cfg.forgery_jitter * abs(frng.standard_normal())
    irng = _rng(cfg.master_seed, SKILLED_FORGERY, target.user_id, sensor, session, index)
    amp, phase = _perturb(irng, amp, phase, cfg.genuine_jitter)
    forger = make_template(cfg, forger_id)
    p_amp = 0.5 * (target.p_amp + forger.p_amp) * (1.0 + cfg.genuine_jitter * irng.standard_normal(3))
    return Trajectory(
        target, target.duration_s * speed * (1.0 + cfg.genuine_jitter * irng.standard_normal()),
        amp, phase, p_amp,
        warp_strength=cfg.time_warp_strength * irng.uniform(0.5, 1.0),
        warp_cycles=int(irng.integers(1, 3)),
        offset=tuple(irng.uniform(0.0, 100.0, size=2)),
    )


def sample_times(profile: SensorProfile, duration_s: float, rng: np.random.Generator) -> np.ndarray:
    """Capture timestamps in ms from accumulated, possibly oscillating periods."""
    base = 1000.0 / profile.mean_rate_hz
    n = int(math.ceil(duration_s * profile.mean_rate_hz * 1.5)) + 2
    k = np.arange(n)
    eta = rng.standard_normal(n)
    periods = base * (1.0 + profile.period_oscillation * np.sin(2 * math.pi * k / OSCILLATION_PERIOD)
                      + profile.period_noise * eta)
    periods = np.maximum(periods, 0.05 * base)
    t = np.concatenate([[0.0], np.cumsum(periods)])
    t = t[t <= duration_s * 1000.0]
    return t if len(t) >= 2 else np.array([0.0, base])


def simulate_sensor(traj: Trajectory, profile: SensorProfile, rng: np.random.Generator, *,
                    user_id: int, session: int, index: int, kind: str,
                    forger_id: Optional[int] = None) -> RawSignature:
    t = sample_times(profile, traj.duration_s, rng)
    when = t
    if profile.timestamp_skew > 0:
        steady = np.arange(len(t)) * (1000.0 / profile.mean_rate_hz)
        when = (1.0 - profile.timestamp_skew) * t + profile.timestamp_skew * steady
    x, y = traj.xy(when / 1000.0)
    if profile.position_noise > 0:
        x = x + profile.position_noise * rng.standard_normal(len(t))
        y = y + profile.position_noise * rng.standard_normal(len(t))
    top = profile.pressure_levels - 1
    p = np.clip(np.round(top * (traj.pressure(when / 1000.0) / 255.0) ** profile.pressure_gamma), 0, top)
    return RawSignature(
        user_id=user_id, session=session, index=index, sensor_id=profile.name, kind=kind,
        forger_id=forger_id, samples=np.column_stack([t, x, y, p]),
    )


def generate_signature(cfg: GenConfig, user_id: int, sensor: str, kind: str,
                       session: int, index: int) -> RawSignature:
    """Regenerate one corpus signature in isolation."""
    tpl = make_template(cfg, user_id)
    forger = None
    if kind == GENUINE:
        traj = genuine_trajectory(cfg, tpl, sensor, session, index)
    else:
        forger = forger_for(cfg, user_id, session)
        traj = synthesize_forgery(cfg, tpl, forger, sensor, session, index)
    rng = _rng(cfg.master_seed, "capture", kind, user_id, sensor, session, index)
    return simulate_sensor(traj, cfg.sensor(sensor), rng, user_id=user_id, session=session,
                           index=index, kind=kind, forger_id=forger)


def corpus_keys(cfg: GenConfig):
    for user in range(1, cfg.n_users + 1):
        for sensor in cfg.sensor_ids:
            for kind in (GENUINE, SKILLED_FORGERY):
                for session in SESSIONS:
                    for index in INDICES:
                        yield user, sensor, kind, session, index


def generate_corpus(cfg: GenConfig) -> Dict[str, RawSignature]:
    """All signatures keyed by signature id, in sorted id order."""
    cfg.validate()
    sigs = {}
    for key in corpus_keys(cfg):
        raw = generate_signature(cfg, *key)
        sigs[raw.sig_id] = raw
    return dict(sorted(sigs.items()))


def path_distance(a: Trajectory, b: Trajectory, n: int = 200) -> float:
    """Mean per-point distance between two centred paths on normalized time."""
    u = np.linspace(0.0, 1.0, n)
    ax, ay = a.xy(u * a.duration_s)
    bx, by = b.xy(u * b.duration_s)
    return float(np.mean(np.hypot((ax - ax.mean()) - (bx - bx.mean()), (ay - ay.mean()) - (by - by.mean()))))


__all__ = [
    "GenConfig", "UserTemplate", "Trajectory", "make_template", "ideal_trajectory",
    "genuine_trajectory", "synthesize_forgery", "forger_for", "simulate_sensor",
    "generate_signature", "generate_corpus", "corpus_keys", "path_distance", "signature_id",
]
