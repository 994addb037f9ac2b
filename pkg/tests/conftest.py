"""Shared fixtures: settings, benchmark maps, routes and a small planner shape."""

import os

import numpy as np
import pytest

from minehaul.config import Settings, load_settings
from minehaul.schemas.common import Direction
from minehaul.schemas.prediction import ModelConfig
from minehaul.schemas.world import TruckParams
from minehaul.services.map_service import build_test_maps
from minehaul.services.route_service import loop_route


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    """Keep MINEHAUL_* variables of the calling shell out of the tests."""
    for key in list(os.environ):
        if key.startswith("MINEHAUL_"):
            monkeypatch.delenv(key, raising=False)


@pytest.fixture
def settings() -> Settings:
    return load_settings()


@pytest.fixture
def params() -> TruckParams:
    return TruckParams()


@pytest.fixture(scope="session")
def maps():
    return build_test_maps()


@pytest.fixture(scope="session")
def loop_map(maps):
    return maps["loop_map"]


@pytest.fixture(scope="session")
def network_map(maps):
    return maps["network_map"]


@pytest.fixture(scope="session")
def ccw_route(loop_map):
    return loop_route(loop_map, Direction.COUNTER_CLOCKWISE)


@pytest.fixture(scope="session")
def cw_route(loop_map):
    return loop_route(loop_map, Direction.CLOCKWISE)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_model() -> ModelConfig:
    return ModelConfig(
        beams=8,
        k=3,
        scan_hidden=(10,),
        meas_hidden=(6,),
        fusion_hidden=(12,),
        speed_hidden=5,
        branch_hidden=7,
    )


@pytest.fixture
def small_settings() -> Settings:
    """Settings matching ``small_model`` with a short, cheap training run."""
    return load_settings(
        sensors={"beams": 8},
        data={"k_lookahead": 3, "min_frames": 10},
        model={
            "scan_hidden": (10,),
            "meas_hidden": (6,),
            "fusion_hidden": (12,),
            "speed_hidden": 5,
            "branch_hidden": 7,
        },
        training={"epochs": 2, "batch_size": 4, "lr0": 1e-3, "checkpoint_every": 1},
    )
