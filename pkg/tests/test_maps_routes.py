import math

import numpy as np
import pytest

from minehaul.errors import InputMissingError, InvalidInputError
from minehaul.schemas.benchmark import RouteLeg
from minehaul.schemas.common import LateralCommand
from minehaul.schemas.world import MapEdge, MineMap, TruckParams
from minehaul.services.map_service import (
    classify_turn,
    load_map,
    save_map,
    validate_map,
    wrap_angle,
)
from minehaul.services.route_service import (
    allowed_successors,
    build_route,
    count_turning,
    sample_navigation_route,
)


def test_loop_map(loop_map, params):
    assert loop_map.name == "loop"
    assert loop_map.total_length == pytest.approx(1848.0, abs=5.0)
    assert loop_map.intersections == []
    assert loop_map.walls
    validate_map(loop_map, params)


def test_network_map(network_map, params):
    assert network_map.name == "network"
    assert len(network_map.edges) == 9
    assert len(network_map.intersections) == 6
    assert sum(i.sharp for i in network_map.intersections) >= 2
    assert network_map.total_length > 10_000.0
    validate_map(network_map, params)


def test_narrow_road_rejected(loop_map):
    with pytest.raises(InvalidInputError):
        validate_map(loop_map, TruckParams(width=13.0, length=20.0))


def test_edge_needs_two_points():
    with pytest.raises(ValueError):
        MapEdge(id=0, from_node=0, to_node=1, centerline=[(0.0, 0.0)], width=12.0)
    with pytest.raises(ValueError):
        MapEdge(id=0, from_node=0, to_node=1, centerline=[(0.0, 0.0), (0.0, 0.0)], width=12.0)


def test_edge_must_reference_nodes():
    edge = MapEdge(id=0, from_node=0, to_node=5, centerline=[(0.0, 0.0), (10.0, 0.0)], width=12.0)
    with pytest.raises(ValueError):
        MineMap(name="broken", nodes=[(0.0, 0.0), (10.0, 0.0)], edges=[edge])


def test_map_file_round_trip(tmp_path, loop_map):
    path = save_map(loop_map, tmp_path / "loop_map.json")
    loaded = load_map(path)
    assert loaded.total_length == pytest.approx(loop_map.total_length)
    assert len(loaded.walls) == len(loop_map.walls)
    with pytest.raises(InputMissingError):
        load_map(tmp_path / "absent.json")


@pytest.mark.parametrize(
    "degrees, command",
    [(0.0, LateralCommand.STRAIGHT), (19.0, LateralCommand.STRAIGHT), (30.0, LateralCommand.TURN_LEFT),
     (-90.0, LateralCommand.TURN_RIGHT)],
)
def test_classify_turn(degrees, command):
    assert classify_turn(math.radians(degrees)) is command


def test_wrap_angle():
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert wrap_angle(3.0 * math.pi / 2.0) == pytest.approx(-math.pi / 2.0)


def test_loop_route_closed(ccw_route, cw_route, loop_map):
    for route in (ccw_route, cw_route):
        assert route.closed
        assert route.length == pytest.approx(loop_map.total_length, rel=0.01)
        assert route.wrap_s(route.length + 5.0) == pytest.approx(5.0)
    x, y, _ = ccw_route.point_at(0.0)
    assert math.hypot(x, y) < 1.0


def test_route_directions_are_opposite(ccw_route, cw_route):
    x, y, heading = ccw_route.point_at(100.0)
    loc = cw_route.locate(x, y)
    assert abs(loc.lateral) < 0.5
    assert abs(wrap_angle(loc.tangent - heading - math.pi)) < 0.05


def test_locate_offset_point(ccw_route):
    x, y, heading = ccw_route.point_at(50.0)
    # Positive lateral is to the left of travel.
    loc = ccw_route.locate(x - 2.0 * math.sin(heading), y + 2.0 * math.cos(heading), hint_s=50.0)
    assert loc.s == pytest.approx(50.0, abs=0.1)
    assert loc.lateral == pytest.approx(2.0, abs=0.05)


def test_build_route_rejects_disconnected_legs(network_map):
    with pytest.raises(ValueError):
        build_route(network_map, [RouteLeg(edge=0), RouteLeg(edge=2)])


def test_successors_start_where_leg_ends(network_map):
    for leg in (RouteLeg(edge=0), RouteLeg(edge=4, reverse=True)):
        for nxt in allowed_successors(network_map, leg):
            build_route(network_map, [leg, nxt])


def test_sampled_navigation_routes(network_map):
    found = 0
    for seed in range(20):
        route = sample_navigation_route(network_map, np.random.default_rng(seed))
        if route is None:
            continue
        found += 1
        assert route.length >= 1000.0
        assert count_turning(route) >= 1
        assert len({leg.edge for leg in route.legs}) == len(route.legs)
    assert found > 0
