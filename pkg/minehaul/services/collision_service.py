"""Footprint collision checks and reference-line errors."""

import math
from typing import Optional, Sequence, Tuple

import numpy as np
from shapely.geometry import Point, Polygon

from minehaul.schemas.world import CollisionReport, MineMap, TruckParams, TruckState
from minehaul.services.map_service import road_geometry, wrap_angle
from minehaul.services.route_service import Route


def centerline_errors(state: TruckState, mine_map: MineMap) -> Tuple[float, float]:
    """Lateral and heading error against the nearest edge centerline.

    On two-way edges the travel direction closest to the truck heading is
    used as the reference.
    """
    geometry = road_geometry(mine_map)
    pt = Point(state.x, state.y)
    line = min(geometry.centerlines, key=lambda ln: ln.distance(pt))
    s = line.project(pt)
    a = line.interpolate(max(0.0, s - 0.5))
    b = line.interpolate(min(line.length, s + 0.5))
    tangent = math.atan2(b.y - a.y, b.x - a.x)
    foot = line.interpolate(s)
    dx, dy = state.x - foot.x, state.y - foot.y
    lateral = math.cos(tangent) * dy - math.sin(tangent) * dx
    heading_error = wrap_angle(state.heading - tangent)
    if abs(heading_error) > math.pi / 2.0:
        tangent += math.pi
        lateral = -lateral
        heading_error = wrap_angle(state.heading - tangent)
    return lateral, heading_error


def check_collision(
    state: TruckState,
    params: TruckParams,
    mine_map: MineMap,
    route: Optional[Route] = None,
    obstacles: Sequence[np.ndarray] = (),
) -> CollisionReport:
    """Footprint contact with walls or participants plus reference-line errors.

    With a route the errors are measured against it (using ``state.route_s``
    as the progress hint); otherwise against the nearest edge centerline.
    """
    footprint = Polygon(state.footprint(params))
    wall = road_geometry(mine_map).touches_wall(footprint)
    participant = any(footprint.intersects(Polygon(o)) for o in obstacles)
    if route is not None:
        loc = route.locate(state.x, state.y, state.route_s)
        lateral, heading_error = loc.lateral, wrap_angle(state.heading - loc.tangent)
    else:
        lateral, heading_error = centerline_errors(state, mine_map)
    return CollisionReport(
        collided=wall or participant,
        lateral_error=lateral,
        heading_error=heading_error,
        wall_contact=wall,
        participant_contact=participant,
    )
