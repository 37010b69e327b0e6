"""Shared fixtures plus the acceptance-criteria summary hook."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import pytest

from bmodelab.phantom import PhantomConfig, synth_dataset

CRITERIA = [
    "envelope correctness",
    "compression mapping",
    "bicubic resize",
    "auc exactness",
    "svm objective and determinism",
    "fold integrity",
    "operating point and bland-altman",
    "phantom end-to-end",
    "report structure",
]

_RESULTS: dict[str, tuple[str, str]] = {}


@contextmanager
def acceptance(name: str):
    """Record pass/fail of one acceptance criterion for the summary."""
    assert name in CRITERIA, f"unknown criterion {name!r}"
    try:
        yield
    except Exception as exc:
        _RESULTS[name] = ("FAIL", f"{type(exc).__name__}: {exc}")
        raise
    else:
        _RESULTS[name] = ("PASS", "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in CRITERIA:
        status, detail = _RESULTS.get(name, ("SKIP", "not exercised this run"))
        line = f"[{status}] {name}"
        if detail:
            line += f" -- {detail[:120]}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_phantom_dataset():
    """Quick dataset for integration-style tests (not the acceptance run)."""
    return synth_dataset(6, 5, PhantomConfig(rows=256, cols=96), seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
