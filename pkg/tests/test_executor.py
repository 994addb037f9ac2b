import numpy as np
import pytest

from minehaul.schemas.common import FusionMode
from minehaul.schemas.prediction import EvidentialPrediction
from minehaul.services.executor_service import TRAJECTORY_COLUMNS, run_executor
from minehaul.services.simulation_service import World, initial_state_on_route


class StubPlanner:
    """Returns the same prediction every frame, optionally NaN from a given call on."""

    def __init__(self, gamma, beta=None, nan_from=None):
        self.gamma = np.asarray(gamma, dtype=np.float64)
        self.k = self.gamma.shape[1]
        self.beta = np.ones_like(self.gamma) if beta is None else np.asarray(beta, dtype=np.float64)
        self.nan_from = nan_from
        self.calls = 0

    def predict(self, obs, state):
        self.calls += 1
        gamma = self.gamma.copy()
        if self.nan_from is not None and self.calls >= self.nan_from:
            gamma[:] = np.nan
        ones = np.ones_like(gamma)
        return EvidentialPrediction(gamma=gamma, nu=ones, alpha=2.0 * ones, beta=self.beta)


@pytest.fixture
def world(loop_map, ccw_route):
    return World(loop_map, ccw_route, initial_state_on_route(ccw_route, 5.0))


def _constant(k=3):
    return np.repeat(np.array([[0.0], [0.3], [0.0], [0.0]]), k, axis=1)


def test_rates(world):
    planner = StubPlanner(_constant())
    trace = run_executor(world, planner, FusionMode.UNIFORM, max_time=10.0)
    assert trace.inference_calls == 100
    assert trace.dynamics_steps == 500
    assert len(trace.rows) == 500
    assert set(trace.rows[0]) == set(TRAJECTORY_COLUMNS)


@pytest.mark.parametrize("mode", list(FusionMode))
def test_constant_planner_gives_constant_command(world, mode):
    trace = run_executor(world, StubPlanner(_constant()), mode, max_time=5.0)
    applied = np.array([[r["steer_cmd"], r["acc_cmd"], r["dec_e_cmd"], r["dec_m_cmd"]] for r in trace.rows])
    assert applied == pytest.approx(np.tile([0.0, 0.3, 0.0, 0.0], (len(trace.rows), 1)), abs=1e-12)
    assert trace.collisions == 0
    assert trace.interventions == 0


def test_instantaneous_mode_never_reads_bins(world):
    trace = run_executor(world, StubPlanner(_constant()), FusionMode.INSTANTANEOUS, max_time=5.0)
    assert trace.fusion_reads == 0


def test_confident_first_lookahead_dominates(world):
    gamma = np.array([[0.02, 0.4, 0.4], [0.3, 0.9, 0.9], [0.0, 0.5, 0.5], [0.0, 0.0, 0.0]])
    beta = np.array([[1.0, 1e6, 1e6]] * 4)
    trace = run_executor(world, StubPlanner(gamma, beta), FusionMode.EVIDENTIAL, max_time=10.0)
    every = world.config.sensor_every
    for row in trace.rows[::every]:
        assert row["steer_cmd"] == pytest.approx(0.02, abs=1e-3)
        assert row["acc_cmd"] == pytest.approx(0.3, abs=1e-3)
        assert row["dec_e_cmd"] == pytest.approx(0.0, abs=1e-3)


def test_non_finite_prediction_stops_the_episode(world):
    trace = run_executor(world, StubPlanner(_constant(), nan_from=3), FusionMode.EVIDENTIAL, max_time=10.0)
    assert trace.safety_stop
    assert trace.inference_calls == 3
    assert trace.dynamics_steps == 10
    assert trace.events[-1].kind == "safety_stop"


def test_departure_triggers_intervention(loop_map, ccw_route):
    hard_left = np.repeat(np.array([[1.0], [1.0], [0.0], [0.0]]), 2, axis=1)
    world = World(loop_map, ccw_route, initial_state_on_route(ccw_route, 5.0, speed=4.0))
    trace = run_executor(world, StubPlanner(hard_left), FusionMode.INSTANTANEOUS, max_time=20.0)
    assert trace.interventions >= 1
    assert any(e.kind == "intervention" for e in trace.events)
