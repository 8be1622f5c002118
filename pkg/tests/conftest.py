import numpy as np
import pytest

from tabletsig.signal_model import GENUINE, RawSignature, UniformSignature


def make_raw(t, x, y=None, p=None, *, user=1, sensor="A", kind=GENUINE, session=1, index=1, forger=None):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.zeros_like(t) if y is None else np.asarray(y, dtype=float)
    p = np.full_like(t, 100.0) if p is None else np.asarray(p, dtype=float)
    return RawSignature(user_id=user, session=session, index=index, sensor_id=sensor, kind=kind,
                        forger_id=forger, samples=np.column_stack([t, x, y, p]))


def make_uniform(x, y, p=None, rate_hz=100.0):
    x = np.asarray(x, dtype=float)
    p = np.full_like(x, 100.0) if p is None else p
    return UniformSignature(user_id=1, session=1, index=1, sensor_id="A", kind=GENUINE,
                            rate_hz=rate_hz, x=x, y=y, p=p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance reporting ----------------------------------------------------------

_ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail=""):
    """Log one acceptance line (shown in the terminal summary), then assert."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    _ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
