import math

import numpy as np
import pytest

from minehaul.config import KMH, ExpertSection
from minehaul.errors import ExpertLostError
from minehaul.schemas.common import FusionMode, LateralCommand, LongitudinalCommand
from minehaul.schemas.world import TruckState
from minehaul.services.executor_service import ExpertPlanner, run_executor
from minehaul.services.expert_service import ScriptedExpert, expert_policy, generate_hlc
from minehaul.services.route_service import sample_navigation_route
from minehaul.services.simulation_service import World, initial_state_on_route


def test_start_up_command(ccw_route):
    cmd = expert_policy(initial_state_on_route(ccw_route, 10.0), ccw_route, None)
    assert cmd.throttle > 0.0
    assert cmd.brake_e == cmd.brake_m == 0.0
    assert abs(cmd.steer) < 0.05


def test_steers_back_towards_route(ccw_route):
    left_of_route = initial_state_on_route(ccw_route, 20.0, lateral=1.0, speed=3.0)
    assert expert_policy(left_of_route, ccw_route, None).steer < 0.0


def test_brakes_above_target(ccw_route):
    fast = initial_state_on_route(ccw_route, 10.0, speed=30.0 * KMH)
    cmd = expert_policy(fast, ccw_route, None)
    assert cmd.throttle == 0.0
    assert cmd.brake_e > 0.0


def test_slows_for_curves(ccw_route):
    expert = ScriptedExpert(config=ExpertSection(speed_limit_kmh=40.0))
    state = initial_state_on_route(ccw_route, 350.0, speed=40.0 * KMH)
    # The first bend (radius 60 m) starts at 360 m.
    assert expert.target_speed(state, ccw_route) < expert.config.speed_limit


def test_lost_expert(ccw_route):
    far = initial_state_on_route(ccw_route, 10.0, lateral=8.0)
    with pytest.raises(ExpertLostError):
        expert_policy(far, ccw_route, None)


def test_hlc_on_loop_is_straight(ccw_route):
    hlc = generate_hlc(initial_state_on_route(ccw_route, 10.0), ccw_route)
    assert hlc.lateral is LateralCommand.STRAIGHT
    assert hlc.longitudinal is LongitudinalCommand.ACCELERATE


def _first_turn(route):
    return next((t for t in route.turns if t.command is not LateralCommand.STRAIGHT), None)


def test_hlc_announces_turns(network_map):
    routes = (sample_navigation_route(network_map, np.random.default_rng(seed)) for seed in range(50))
    route = next(r for r in routes if r is not None and _first_turn(r).s_node > 120.0)
    turn = _first_turn(route)
    near = initial_state_on_route(route, turn.s_node - 30.0, speed=3.0)
    far = initial_state_on_route(route, turn.s_node - 100.0, speed=3.0)
    assert generate_hlc(near, route, 50.0).lateral is turn.command
    assert generate_hlc(far, route, 50.0).lateral is LateralCommand.STRAIGHT


def test_hlc_holds_speed_mid_straight(ccw_route):
    cruising = initial_state_on_route(ccw_route, 100.0, speed=20.0 * KMH)
    assert generate_hlc(cruising, ccw_route).longitudinal is LongitudinalCommand.MAINTAIN


def test_hlc_decelerates_into_a_slow_bend(ccw_route):
    # With this lateral bound the 60 m bend at 360 m is limited to 12 km/h.
    expert = ScriptedExpert(config=ExpertSection(a_lat_max=(12.0 * KMH) ** 2 / 60.0))
    approaching = initial_state_on_route(ccw_route, 355.0, speed=20.0 * KMH)
    assert expert.curve_speed(approaching, ccw_route, 355.0) < 19.0 * KMH
    assert expert.hlc(approaching, ccw_route).longitudinal is LongitudinalCommand.DECELERATE


def test_longitudinal_hlc_does_not_chatter(loop_map, ccw_route):
    world = World(loop_map, ccw_route, initial_state_on_route(ccw_route, 0.0))
    expert = ScriptedExpert()
    switches = []
    previous = None
    # 50 s from rest stays on the first straight.
    for step in range(2500):
        if step % 5 == 0:
            cmd = expert.policy(world.state, ccw_route)
            current = expert.hlc(world.state, ccw_route).longitudinal
            if previous is not None and current is not previous:
                switches.append(world.state.time)
            previous = current
        world.step(cmd)
    assert previous is LongitudinalCommand.MAINTAIN
    assert np.all(np.diff(switches) >= 0.5 - 1e-9)


def test_hlc_activation_must_be_positive(ccw_route):
    with pytest.raises(ValueError):
        generate_hlc(TruckState(), ccw_route, 0.0)


@pytest.mark.parametrize("route_name", ["ccw_route", "cw_route"])
def test_expert_drives_a_clean_lap(request, loop_map, route_name):
    route = request.getfixturevalue(route_name)
    world = World(loop_map, route, initial_state_on_route(route, 0.0))
    expert = ScriptedExpert()
    trace = run_executor(
        world, ExpertPlanner(expert, world), FusionMode.INSTANTANEOUS, max_time=900.0, hlc_source=expert, record=False
    )
    assert world.finished
    assert trace.collisions == 0
    assert trace.interventions == 0
    assert trace.max_speed <= 21.0 * KMH
    assert math.isclose(trace.progress, route.length, abs_tol=2.0)
