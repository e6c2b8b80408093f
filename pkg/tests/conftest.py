from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def seed_source() -> str:
    return (FIXTURES / "seed.lean").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def intersection_proof_declaration() -> str:
    return (FIXTURES / "alpha_open_intersection.lean").read_text(encoding="utf-8")
