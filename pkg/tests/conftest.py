"""Shared pytest fixtures."""

from pathlib import Path

import pytest

from hijackvet.core.feed_parser import announce
from hijackvet.core.rib_engine import RibEngine

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def hijackvet_home(tmp_path, monkeypatch):
    """Keep every Config instance inside the test's temporary directory."""
    home = tmp_path / "hijackvet-home"
    monkeypatch.setenv("HIJACKVET_HOME", str(home))
    return home


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def mixed20() -> Path:
    return FIXTURES / "mixed20"


@pytest.fixture
def t0() -> int:
    # 2015-08-01 00:00:00 UTC
    return 1438387200


@pytest.fixture
def hijacked_engine(t0) -> RibEngine:
    """
    AS64500 holds 10.1.0.0/16 via AS64510 and AS64511 (peers 1 and 2);
    AS64666 announces 10.1.0.0/17 via AS64520 (peer 3) at t0 + 100.
    The journal clock runs to t0 + 3600.
    """
    engine = RibEngine()
    engine.apply_update(announce(t0, "10.1.0.0/16", 1, [64510, 64500]))
    engine.apply_update(announce(t0 + 1, "10.1.0.0/16", 2, [64511, 64500]))
    engine.apply_update(announce(t0 + 100, "10.1.0.0/17", 3, [64520, 64666]))
    engine.journal.advance_clock(t0 + 3600)
    return engine
