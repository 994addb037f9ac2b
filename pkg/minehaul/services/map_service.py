"""Haul-road map construction, road geometry and map files.

Maps are built procedurally from straight and circular pieces. The paved
area is the union of every edge buffered by half the road width plus a
widened buffer around every turn fillet an intersection allows; walls are the
boundary rings of that union.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from shapely.geometry import LineString, MultiLineString, Point, Polygon
from shapely.ops import substring, unary_union

from minehaul.errors import InputMissingError, InvalidInputError
from minehaul.schemas.common import LateralCommand
from minehaul.schemas.world import Intersection, MapEdge, MineMap, TruckParams, TurnAnnotation

logger = logging.getLogger(__name__)

STRAIGHT_BAND = math.radians(20.0)
MAX_TURN = math.radians(100.0)
SHARP_TURN = math.radians(60.0)
SHARP_FILLET_RADIUS = 15.0
SMOOTH_FILLET_RADIUS = 60.0
MIN_FILLET_ANGLE = math.radians(1.0)


def wrap_angle(angle: float) -> float:
    """Wrap to [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


class PathBuilder:
    """Turtle that lays down straights and arcs at roughly ``step`` spacing."""

    def __init__(self, x: float, y: float, heading: float, step: float = 1.0):
        self.points: List[Tuple[float, float]] = [(x, y)]
        self.heading = heading
        self.step = step

    @property
    def position(self) -> Tuple[float, float]:
        return self.points[-1]

    def straight(self, length: float) -> "PathBuilder":
        x0, y0 = self.position
        n = max(1, math.ceil(length / self.step))
        c, s = math.cos(self.heading), math.sin(self.heading)
        for i in range(1, n + 1):
            d = length * i / n
            self.points.append((x0 + c * d, y0 + s * d))
        return self

    def arc(self, radius: float, angle: float, left: bool = True) -> "PathBuilder":
        """Turn through ``angle`` radians on a circle of ``radius``."""
        sign = 1.0 if left else -1.0
        x0, y0 = self.position
        h0 = self.heading
        cx = x0 - sign * radius * math.sin(h0)
        cy = y0 + sign * radius * math.cos(h0)
        n = max(1, math.ceil(radius * angle / self.step))
        for i in range(1, n + 1):
            phi = h0 + sign * angle * i / n
            self.points.append((cx + sign * radius * math.sin(phi), cy - sign * radius * math.cos(phi)))
        self.heading = h0 + sign * angle
        return self

    def line(self) -> LineString:
        return LineString(self.points)


def fillet_arc(
    node: Sequence[float], heading_in: float, heading_out: float, radius: float, step: float = 1.0
) -> Tuple[np.ndarray, float]:
    """Circular fillet replacing the corner at ``node``.

    Returns:
        (arc points from the entry tangent point to the exit tangent point,
        distance trimmed from each leg)
    """
    delta = wrap_angle(heading_out - heading_in)
    trim = radius * math.tan(abs(delta) / 2.0)
    start = (node[0] - trim * math.cos(heading_in), node[1] - trim * math.sin(heading_in))
    builder = PathBuilder(start[0], start[1], heading_in, step)
    builder.arc(radius, abs(delta), left=delta > 0)
    pts = np.asarray(builder.points)
    # Land exactly on the exit tangent point.
    pts[-1] = (node[0] + trim * math.cos(heading_out), node[1] + trim * math.sin(heading_out))
    return pts, trim


def fillet_radius(delta: float) -> float:
    return SHARP_FILLET_RADIUS if abs(delta) > SHARP_TURN else SMOOTH_FILLET_RADIUS


def classify_turn(delta: float) -> LateralCommand:
    if abs(delta) < STRAIGHT_BAND:
        return LateralCommand.STRAIGHT
    return LateralCommand.TURN_LEFT if delta > 0 else LateralCommand.TURN_RIGHT


def _segment_heading(a: Sequence[float], b: Sequence[float]) -> float:
    return math.atan2(b[1] - a[1], b[0] - a[0])


def arrival_heading(edge: MapEdge, node: int) -> float:
    """Heading of a vehicle reaching ``node`` along ``edge``."""
    pts = edge.centerline
    if edge.to_node == node:
        return _segment_heading(pts[-2], pts[-1])
    return _segment_heading(pts[1], pts[0])


def departure_heading(edge: MapEdge, node: int) -> float:
    """Heading of a vehicle leaving ``node`` along ``edge``."""
    pts = edge.centerline
    if edge.from_node == node:
        return _segment_heading(pts[0], pts[1])
    return _segment_heading(pts[-1], pts[-2])


def annotate_intersections(nodes: List[Tuple[float, float]], edges: List[MapEdge]) -> List[Intersection]:
    """Find nodes with three or more incident edges and annotate every turn."""
    incident: Dict[int, List[int]] = {}
    for edge in edges:
        incident.setdefault(edge.from_node, []).append(edge.id)
        incident.setdefault(edge.to_node, []).append(edge.id)
    intersections = []
    for node in sorted(incident):
        edge_ids = incident[node]
        if len(edge_ids) < 3:
            continue
        turns = []
        for e_in in edge_ids:
            for e_out in edge_ids:
                if e_in == e_out:
                    continue
                delta = wrap_angle(
                    departure_heading(edges[e_out], node) - arrival_heading(edges[e_in], node)
                )
                turns.append(
                    TurnAnnotation(
                        from_edge=e_in,
                        to_edge=e_out,
                        angle=delta,
                        command=classify_turn(delta),
                        allowed=abs(delta) <= MAX_TURN,
                    )
                )
        intersections.append(
            Intersection(id=len(intersections) + 1, node=node, edges=edge_ids, turns=turns)
        )
    return intersections


def derive_walls(
    nodes: List[Tuple[float, float]],
    edges: List[MapEdge],
    intersections: List[Intersection],
    junction_margin: float,
) -> List[List[Tuple[float, float]]]:
    """Boundary rings of the paved area."""
    pieces = [LineString(e.centerline).buffer(e.width / 2.0) for e in edges]
    for inter in intersections:
        node = nodes[inter.node]
        for turn in inter.turns:
            if not turn.allowed or abs(turn.angle) < MIN_FILLET_ANGLE:
                continue
            h_in = arrival_heading(edges[turn.from_edge], inter.node)
            h_out = departure_heading(edges[turn.to_edge], inter.node)
            arc, _ = fillet_arc(node, h_in, h_out, fillet_radius(turn.angle))
            width = max(edges[turn.from_edge].width, edges[turn.to_edge].width)
            pieces.append(LineString(arc).buffer(width / 2.0 + junction_margin))
    area = unary_union(pieces)
    polygons = list(area.geoms) if area.geom_type == "MultiPolygon" else [area]
    walls = []
    for poly in polygons:
        for ring in [poly.exterior, *poly.interiors]:
            walls.append([(float(x), float(y)) for x, y in ring.coords])
    return walls


def _edge(edge_id: int, a: int, b: int, line: LineString, width: float) -> MapEdge:
    pts = np.asarray(line.coords, dtype=np.float64)
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-6])
    coords = [(float(x), float(y)) for x, y in pts[keep]]
    return MapEdge(id=edge_id, from_node=a, to_node=b, centerline=coords, width=width)


def build_loop_map(road_width: float = 12.0, junction_margin: float = 4.0) -> MineMap:
    """Closed two-way circuit (~1848 m) with left and right curves.

    Driven counter-clockwise it has eight left bends and a two-bend right
    notch; clockwise the sides swap.
    """
    b = PathBuilder(0.0, 0.0, 0.0)
    quarter = math.pi / 2.0
    b.straight(360).arc(60, quarter).straight(250).arc(60, quarter).straight(100)
    b.arc(40, quarter).straight(80).arc(40, quarter, left=False).arc(40, quarter, left=False)
    b.straight(80).arc(40, quarter).straight(100).arc(60, quarter).straight(250).arc(60, quarter)
    b.points[-1] = (0.0, 0.0)
    ring = b.line()
    half = ring.length / 2.0
    mid = ring.interpolate(half)
    nodes = [(0.0, 0.0), (float(mid.x), float(mid.y))]
    edges = [
        _edge(0, 0, 1, substring(ring, 0.0, half), road_width),
        _edge(1, 1, 0, substring(ring, half, ring.length), road_width),
    ]
    walls = derive_walls(nodes, edges, [], junction_margin)
    return MineMap(
        name="loop",
        nodes=nodes,
        edges=edges,
        intersections=[],
        walls=walls,
        sites={"loading": [0], "dumping": [1]},
        junction_margin=junction_margin,
    )


def _bypass(start: Tuple[float, float], heading: float) -> PathBuilder:
    b = PathBuilder(start[0], start[1], heading)
    return b.straight(600).arc(200, math.radians(30)).straight(100)


def build_network_map(road_width: float = 12.0, junction_margin: float = 4.0) -> MineMap:
    """~12.3 km network: rounded 3000 x 1600 m ring, a centre spine and two bypasses.

    The spine meets the ring in two 90-degree T-junctions; each bypass forks
    off the ring and merges into the spine at 30 degrees, giving six
    intersections of which the two T-junctions are sharp.
    """
    quarter = math.pi / 2.0
    ring_b = PathBuilder(1500.0, 0.0, 0.0)
    ring_b.straight(1420).arc(80, quarter).straight(1440).arc(80, quarter).straight(2840)
    ring_b.arc(80, quarter).straight(1440).arc(80, quarter).straight(1420)
    ring_b.points[-1] = (1500.0, 0.0)
    ring = ring_b.line()

    probe = _bypass((0.0, 0.0), math.radians(30))
    dx, dy = probe.position
    f1 = (1500.0 - dx, 0.0)
    bypass1 = _bypass(f1, math.radians(30))
    bypass1.points[-1] = (1500.0, dy)
    f2 = (1500.0, dy)
    f3 = (3000.0 - f1[0], 1600.0)
    f4 = (1500.0, 1600.0 - dy)
    bypass2 = [(3000.0 - x, 1600.0 - y) for x, y in bypass1.points]

    t1, t2 = (1500.0, 0.0), (1500.0, 1600.0)
    nodes = [t1, f3, t2, f1, f2, f4]
    T1, F3, T2, F1, F2, F4 = range(6)

    s_f3 = ring.project(Point(f3))
    s_t2 = ring.project(Point(t2))
    s_f1 = ring.project(Point(f1))
    spine = PathBuilder(1500.0, 0.0, quarter).straight(1600).line()
    edges = [
        _edge(0, F1, T1, substring(ring, s_f1, ring.length), road_width),
        _edge(1, T1, F3, substring(ring, 0.0, s_f3), road_width),
        _edge(2, F3, T2, substring(ring, s_f3, s_t2), road_width),
        _edge(3, T2, F1, substring(ring, s_t2, s_f1), road_width),
        _edge(4, T1, F2, substring(spine, 0.0, f2[1]), road_width),
        _edge(5, F2, F4, substring(spine, f2[1], f4[1]), road_width),
        _edge(6, F4, T2, substring(spine, f4[1], 1600.0), road_width),
        _edge(7, F1, F2, LineString(bypass1.points), road_width),
        _edge(8, F3, F4, LineString(bypass2), road_width),
    ]
    intersections = annotate_intersections(nodes, edges)
    walls = derive_walls(nodes, edges, intersections, junction_margin)
    return MineMap(
        name="network",
        nodes=nodes,
        edges=edges,
        intersections=intersections,
        walls=walls,
        sites={"loading": [F1], "dumping": [F3]},
        junction_margin=junction_margin,
    )


def build_test_maps(road_width: float = 12.0, junction_margin: float = 4.0) -> Dict[str, MineMap]:
    """Both benchmark maps, keyed ``loop_map`` and ``network_map``."""
    loop_map = build_loop_map(road_width, junction_margin)
    network_map = build_network_map(road_width, junction_margin)
    logger.info(
        f"Built test maps: loop {loop_map.total_length:.0f} m, "
        f"network {network_map.total_length:.0f} m with {len(network_map.intersections)} intersections"
    )
    return {"loop_map": loop_map, "network_map": network_map}


def validate_map(mine_map: MineMap, params: Optional[TruckParams] = None) -> None:
    """Check the invariants that need geometry or the truck.

    Raises:
        InvalidInputError: If a road is too narrow or a wall crosses a centerline
    """
    if params is not None:
        for edge in mine_map.edges:
            if edge.width <= params.width:
                raise InvalidInputError(f"edge {edge.id} is narrower than the truck")
    if mine_map.walls:
        walls = MultiLineString(mine_map.walls)
        for edge in mine_map.edges:
            if LineString(edge.centerline).intersects(walls):
                raise InvalidInputError(f"a wall crosses the centerline of edge {edge.id}")


class RoadGeometry:
    """Spatial index over wall segments and edge centerlines of one map."""

    def __init__(self, mine_map: MineMap):
        segments = []
        for wall in mine_map.walls:
            pts = np.asarray(wall, dtype=np.float64)
            if len(pts) >= 2:
                segments.append(np.hstack([pts[:-1], pts[1:]]))
        self.segments = np.vstack(segments) if segments else np.zeros((0, 4))
        self.tree = shapely.STRtree(shapely.linestrings(self.segments.reshape(-1, 2, 2))) if len(self.segments) else None
        self.walls = MultiLineString(mine_map.walls) if mine_map.walls else None
        if self.walls is not None:
            shapely.prepare(self.walls)
        self.centerlines = [LineString(e.centerline) for e in mine_map.edges]
        self.bidirectional = [e.bidirectional for e in mine_map.edges]

    def segments_near(self, x: float, y: float, radius: float) -> np.ndarray:
        if self.tree is None:
            return self.segments
        idx = self.tree.query(shapely.box(x - radius, y - radius, x + radius, y + radius))
        return self.segments[np.sort(idx)]

    def touches_wall(self, footprint: Polygon) -> bool:
        return self.walls is not None and self.walls.intersects(footprint)


def road_geometry(mine_map: MineMap) -> RoadGeometry:
    """Geometry index for ``mine_map``, built once and cached on the map."""
    if mine_map._geometry is None:
        mine_map._geometry = RoadGeometry(mine_map)
    return mine_map._geometry


def save_map(mine_map: MineMap, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(mine_map.model_dump_json(indent=2))
    return path


def load_map(path: Path) -> MineMap:
    if not path.exists():
        raise InputMissingError(f"map file not found: {path}", details={"path": str(path)})
    return MineMap.model_validate_json(path.read_text())
