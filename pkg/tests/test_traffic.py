import numpy as np
import pytest

from minehaul.config import KMH
from minehaul.services.expert_service import ScriptedExpert
from minehaul.services.simulation_service import World, initial_state_on_route
from minehaul.services.traffic_service import SPEED_RANGE_KMH, Participant, Traffic, nearest_gap, spawn_traffic


def test_participant_pose_is_a_function_of_time(ccw_route):
    car = Participant(ccw_route, 10.0, 2.0)
    assert car.s_at(5.0) == pytest.approx(20.0)
    assert car.pose_at(5.0) == car.pose_at(5.0)
    assert car.s_at(ccw_route.length / 2.0) == pytest.approx(10.0)
    assert car.footprint_at(0.0).shape == (4, 2)


def test_spawn_on_shared_route(loop_map, ccw_route, rng):
    traffic = spawn_traffic(loop_map, 3, rng, route=ccw_route, ego_s=0.0)
    assert len(traffic) == 3
    starts = [p.s0 for p in traffic.participants]
    assert starts == sorted(starts)
    assert starts[0] >= 80.0
    low, high = SPEED_RANGE_KMH
    assert all(low * KMH <= p.speed <= high * KMH for p in traffic.participants)


def test_spawn_on_network(network_map, rng):
    traffic = spawn_traffic(network_map, 2, rng)
    assert len(traffic.footprints(0.0)) == 2


def test_spawn_rejects_negative_count(loop_map, rng):
    with pytest.raises(ValueError):
        spawn_traffic(loop_map, -1, rng)


def test_nearest_gap(ccw_route):
    assert nearest_gap(Traffic(), 0.0, 0.0, 0.0) == np.inf
    car = Participant(ccw_route, 50.0, 0.0)
    x, y, _ = car.pose_at(0.0)
    assert nearest_gap(Traffic([car]), x - 30.0, y, 0.0) == pytest.approx(30.0, abs=1e-6)


def test_expert_slows_before_closing_on_a_participant(loop_map, ccw_route):
    car = Participant(ccw_route, 90.0, 8.0 * KMH)
    start = initial_state_on_route(ccw_route, 0.0, speed=20.0 * KMH)
    world = World(loop_map, ccw_route, start, traffic=Traffic([car]))
    expert = ScriptedExpert()
    gap_at_first_brake = None
    closest = np.inf
    for step in range(1500):
        if step % 5 == 0:
            cmd = expert.policy(world.state, ccw_route, world.scan())
            gap = nearest_gap(world.traffic, world.state.x, world.state.y, world.state.time)
            if gap_at_first_brake is None and cmd.throttle == 0.0:
                gap_at_first_brake = gap
        report = world.step(cmd)
        assert not report.collided
        closest = min(closest, nearest_gap(world.traffic, world.state.x, world.state.y, world.state.time))
    assert gap_at_first_brake is not None and gap_at_first_brake > 30.0
    assert closest > 30.0
    assert world.state.speed < 12.0 * KMH
