import math

import numpy as np
import pytest

from minehaul.schemas.world import GnssFix, MapEdge, MineMap, TruckState
from minehaul.services.map_service import derive_walls
from minehaul.services.sensor_service import (
    SpeedEstimator,
    beam_angles,
    cast_scan,
    finish_ranges,
    quantize,
    sample_gnss,
)

FULL_CIRCLE = 2.0 * math.pi


def _corridor(walls: bool = True) -> MineMap:
    nodes = [(0.0, 0.0), (200.0, 0.0)]
    edges = [MapEdge(id=0, from_node=0, to_node=1, centerline=[(0.0, 0.0), (200.0, 0.0)], width=12.0)]
    return MineMap(
        name="corridor",
        nodes=nodes,
        edges=edges,
        walls=derive_walls(nodes, edges, [], 4.0) if walls else [],
    )


def test_beam_layout():
    angles = beam_angles(108, math.radians(270.0))
    assert angles[0] == pytest.approx(-math.radians(135.0))
    assert angles[-1] == pytest.approx(math.radians(135.0))
    ring = beam_angles(8, FULL_CIRCLE)
    assert len(ring) == 8
    assert np.diff(ring) == pytest.approx(np.full(7, math.pi / 4.0))


def test_corridor_ranges():
    scan = cast_scan(TruckState(x=100.0), _corridor(), beams=8, fov=FULL_CIRCLE)
    by_angle = dict(zip(np.round(np.degrees(beam_angles(8, FULL_CIRCLE))).astype(int), scan.ranges))
    assert by_angle[90] == pytest.approx(6.0)
    assert by_angle[-90] == pytest.approx(6.0)
    assert by_angle[45] == pytest.approx(8.4)
    assert by_angle[0] > 100.0
    assert scan.valid.all()


@pytest.mark.parametrize("offset", [0.0, 0.13, 0.37, 0.5, 0.81])
def test_approaching_a_wall_shortens_its_beam(offset):
    corridor = _corridor()
    left = int(np.argmin(np.abs(beam_angles(8, FULL_CIRCLE) - math.pi / 2.0)))
    before = cast_scan(TruckState(x=100.0, y=offset), corridor, beams=8, fov=FULL_CIRCLE)
    after = cast_scan(TruckState(x=100.0, y=offset + 1.0), corridor, beams=8, fov=FULL_CIRCLE)
    drop = before.ranges[left] - after.ranges[left]
    assert 0.8 - 1e-9 <= drop <= 1.2 + 1e-9


def test_open_field_is_invalid_everywhere():
    scan = cast_scan(TruckState(x=100.0), _corridor(walls=False))
    assert not scan.valid.any()
    assert np.all(scan.ranges == 120.0)


def test_close_hits_clamped_to_minimum():
    square = np.array([[1.0, -1.0], [3.0, -1.0], [3.0, 1.0], [1.0, 1.0]])
    scan = cast_scan(TruckState(x=100.0), _corridor(), beams=8, fov=FULL_CIRCLE, obstacles=[square + [100.0, 0.0]])
    forward = int(np.argmin(np.abs(beam_angles(8, FULL_CIRCLE))))
    assert scan.valid[forward]
    assert scan.ranges[forward] == pytest.approx(4.0)


def test_quantize_floors_to_grid():
    assert quantize(np.array([6.0, 6.19, 8.4853, 119.99])) == pytest.approx([6.0, 6.0, 8.4, 119.8])
    ranges, valid = finish_ranges(np.array([2.0, 50.05, np.inf, 130.0]))
    assert ranges == pytest.approx([4.0, 50.0, 120.0, 120.0])
    assert valid.tolist() == [True, True, False, False]


def test_scan_needs_eight_beams():
    with pytest.raises(ValueError):
        cast_scan(TruckState(), _corridor(), beams=4)


@pytest.mark.parametrize("p, low, high", [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.04, 0.03, 0.05)])
def test_gnss_failure_rate(p, low, high):
    rng = np.random.default_rng(0)
    state = TruckState(x=10.0, y=20.0)
    fixes = [sample_gnss(state, p, rng) for _ in range(10_000)]
    lost = sum(not f.valid for f in fixes) / len(fixes)
    assert low <= lost <= high
    for fix in fixes:
        assert (fix.x, fix.y) == ((10.0, 20.0) if fix.valid else (0.0, 0.0))


def test_gnss_probability_checked(rng):
    with pytest.raises(ValueError):
        sample_gnss(TruckState(), 1.5, rng)


def test_speed_estimator_holds_through_dropouts():
    estimator = SpeedEstimator()
    estimator.update(GnssFix(x=0.0, y=0.0, timestamp=0.0))
    assert estimator.update(GnssFix(x=0.5, y=0.0, timestamp=0.1)) == pytest.approx(5.0)
    assert estimator.update(GnssFix.lost(0.2)) == pytest.approx(5.0)
    assert estimator.update(GnssFix(x=1.5, y=0.0, timestamp=0.3)) == pytest.approx(5.0)
    assert estimator.update(GnssFix(x=1.6, y=0.0, timestamp=0.4)) == pytest.approx(1.0)
