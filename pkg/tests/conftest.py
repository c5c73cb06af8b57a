from __future__ import annotations

from pathlib import Path

import pytest

from scopf.grid import load_grid
from scopf.solvers import HighsBackend

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def case3():
    return load_grid(DATA_DIR / "case3.json")


@pytest.fixture(scope="session")
def case118():
    return load_grid(DATA_DIR / "case118.json")


@pytest.fixture(scope="session")
def backend():
    return HighsBackend()


@pytest.fixture(scope="session")
def toy_dataset(case3, backend):
    from scopf.ccga import CcgaConfig
    from scopf.datagen import generate_dataset

    cfg = CcgaConfig(epsilon=1e-3, rel_gap=1e-6)
    return generate_dataset(case3, 16, seed=13, cfg=cfg, backend=backend)
