"""Routes: stitched reference lines through a map.

A route is an ordered list of (edge, direction) legs. Stitching joins the
legs into one polyline, replacing every turning corner with a circular
fillet, and records a turn event per intersection passed.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, PrivateAttr

from minehaul.schemas.benchmark import RouteLeg
from minehaul.schemas.common import ArrayModel, Direction, FloatArray, LateralCommand
from minehaul.schemas.world import MineMap
from minehaul.services.map_service import (
    MIN_FILLET_ANGLE,
    arrival_heading,
    classify_turn,
    departure_heading,
    fillet_arc,
    fillet_radius,
    wrap_angle,
)

logger = logging.getLogger(__name__)

STRAIGHT_EVENT_HALF_SPAN = 15.0
DUPLICATE_TOL = 1e-3


class TurnEvent(BaseModel):
    """An intersection passage along a route."""

    model_config = ConfigDict(frozen=True)

    intersection: int
    node: int
    s_node: float
    s_start: float
    s_end: float
    angle: float
    command: LateralCommand
    sharp: bool


class RouteLocation(BaseModel):
    model_config = ConfigDict(frozen=True)

    s: float
    lateral: float
    tangent: float
    distance: float


class Route(ArrayModel):
    """Stitched centerline with cumulative arc length and turn events."""

    legs: List[RouteLeg]
    points: FloatArray
    s: FloatArray
    turns: List[TurnEvent] = []
    closed: bool = False

    _seg_a: np.ndarray = PrivateAttr()
    _seg_d: np.ndarray = PrivateAttr()
    _seg_len: np.ndarray = PrivateAttr()
    _seg_heading: np.ndarray = PrivateAttr()
    _curvature: np.ndarray = PrivateAttr()

    def model_post_init(self, __context) -> None:
        a = self.points[:-1]
        d = self.points[1:] - a
        self._seg_a = a
        self._seg_d = d
        self._seg_len = np.hypot(d[:, 0], d[:, 1])
        self._seg_heading = np.arctan2(d[:, 1], d[:, 0])
        dh = np.array([wrap_angle(v) for v in np.diff(self._seg_heading)])
        kappa = np.zeros(len(self.points))
        # Turning at interior vertex i spreads over the half segments on either side.
        span = 0.5 * (self._seg_len[:-1] + self._seg_len[1:])
        kappa[1:-1] = dh / span
        self._curvature = kappa

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def wrap_s(self, s: float) -> float:
        if self.closed:
            return float(s % self.length)
        return float(min(max(s, 0.0), self.length))

    def point_at(self, s: float) -> Tuple[float, float, float]:
        """(x, y, tangent heading) at arc length ``s``."""
        s = self.wrap_s(s)
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self._seg_len) - 1))
        frac = (s - self.s[i]) / self._seg_len[i]
        x, y = self._seg_a[i] + frac * self._seg_d[i]
        return float(x), float(y), float(self._seg_heading[i])

    def curvature_window(self, s0: float, s1: float) -> Tuple[np.ndarray, np.ndarray]:
        """Arc lengths and signed curvature of vertices in [s0, s1], unwrapped."""
        if self.closed:
            base = self.s[:-1]
            offs = (base - s0) % self.length
            mask = offs <= (s1 - s0)
            return s0 + offs[mask], self._curvature[:-1][mask]
        mask = (self.s >= s0) & (self.s <= s1)
        return self.s[mask], self._curvature[mask]

    def locate(
        self, x: float, y: float, hint_s: Optional[float] = None, back: float = 30.0, ahead: float = 60.0
    ) -> RouteLocation:
        """Project a point onto the route.

        With ``hint_s`` only segments within [hint - back, hint + ahead] are
        considered, so a route that passes a place twice resolves to the
        passage being driven.
        """
        p = np.array([x, y])
        rel = p - self._seg_a
        t = np.clip((rel * self._seg_d).sum(axis=1) / (self._seg_len**2), 0.0, 1.0)
        foot = self._seg_a + t[:, None] * self._seg_d
        dist = np.hypot(*(p - foot).T)
        if hint_s is not None:
            starts = self.s[:-1]
            if self.closed:
                offs = (starts - hint_s + back) % self.length
                window = offs <= back + ahead
            else:
                window = (starts + self._seg_len >= hint_s - back) & (starts <= hint_s + ahead)
            if np.any(window):
                dist = np.where(window, dist, np.inf)
        i = int(np.argmin(dist))
        s = float(self.s[i] + t[i] * self._seg_len[i])
        heading = float(self._seg_heading[i])
        dx, dy = p - foot[i]
        lateral = math.cos(heading) * dy - math.sin(heading) * dx
        return RouteLocation(s=self.wrap_s(s), lateral=float(lateral), tangent=heading, distance=float(dist[i]))

    def project_points(
        self, pts: np.ndarray, hint_s: float, back: float = 0.0, ahead: float = 130.0
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Arc length and signed lateral offset of many points near ``hint_s``."""
        starts = self.s[:-1]
        if self.closed:
            window = (starts - hint_s + back) % self.length <= back + ahead
        else:
            window = (starts + self._seg_len >= hint_s - back) & (starts <= hint_s + ahead)
        idx = np.flatnonzero(window)
        if len(pts) == 0 or len(idx) == 0:
            return np.zeros(0), np.zeros(0)
        a, d, seg_len = self._seg_a[idx], self._seg_d[idx], self._seg_len[idx]
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip((rel * d[None]).sum(axis=2) / seg_len**2, 0.0, 1.0)
        off = rel - t[..., None] * d[None]
        j = np.argmin(np.hypot(off[..., 0], off[..., 1]), axis=1)
        rows = np.arange(len(pts))
        s = starts[idx][j] + t[rows, j] * seg_len[j]
        heading = self._seg_heading[idx][j]
        lateral = np.cos(heading) * off[rows, j, 1] - np.sin(heading) * off[rows, j, 0]
        return s, lateral

    def forward_distance(self, s_from: float, s_to: float) -> float:
        d = s_to - s_from
        return d % self.length if self.closed else d

    def upcoming_turn(self, s: float, activation: float) -> Optional[TurnEvent]:
        """Nearest turn event whose node lies at most ``activation`` ahead and whose arc is not yet done."""
        best, best_d = None, math.inf
        for turn in self.turns:
            if s > turn.s_end:
                continue
            d = turn.s_node - s
            if d <= activation and d < best_d:
                best, best_d = turn, d
        return best


def _leg_points(mine_map: MineMap, leg: RouteLeg) -> np.ndarray:
    pts = np.asarray(mine_map.edges[leg.edge].centerline, dtype=np.float64)
    return pts[::-1] if leg.reverse else pts


def _leg_nodes(mine_map: MineMap, leg: RouteLeg) -> Tuple[int, int]:
    edge = mine_map.edges[leg.edge]
    return (edge.to_node, edge.from_node) if leg.reverse else (edge.from_node, edge.to_node)


def _trim_start(pts: np.ndarray, dist: float) -> np.ndarray:
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    i = int(np.searchsorted(cum, dist, side="right"))
    frac = (dist - cum[i - 1]) / (cum[i] - cum[i - 1])
    cut = pts[i - 1] + frac * (pts[i] - pts[i - 1])
    return np.vstack([cut, pts[i:]])


def _trim_end(pts: np.ndarray, dist: float) -> np.ndarray:
    return _trim_start(pts[::-1], dist)[::-1]


def build_route(mine_map: MineMap, legs: Sequence[RouteLeg], closed: bool = False) -> Route:
    """Stitch legs into a route.

    Raises:
        ValueError: If consecutive legs do not share a node
    """
    legs = list(legs)
    pieces = [_leg_points(mine_map, leg) for leg in legs]
    by_node = {inter.node: inter for inter in mine_map.intersections}
    joints = list(range(len(legs) - 1)) + ([len(legs) - 1] if closed and len(legs) > 1 else [])
    fillets = {}
    for j in joints:
        a, b = legs[j], legs[(j + 1) % len(legs)]
        node = _leg_nodes(mine_map, a)[1]
        if _leg_nodes(mine_map, b)[0] != node:
            raise ValueError(f"legs {a.edge} and {b.edge} do not share a node")
        h_in = arrival_heading(mine_map.edges[a.edge], node)
        h_out = departure_heading(mine_map.edges[b.edge], node)
        delta = wrap_angle(h_out - h_in)
        arc, trim = None, 0.0
        if node in by_node and abs(delta) >= MIN_FILLET_ANGLE:
            arc, trim = fillet_arc(mine_map.nodes[node], h_in, h_out, fillet_radius(delta))
            pieces[j] = _trim_end(pieces[j], trim)
            nxt = (j + 1) % len(legs)
            pieces[nxt] = _trim_start(pieces[nxt], trim)
        fillets[j] = (node, delta, arc, trim)

    chunks: List[np.ndarray] = []
    joint_marks: List[Tuple[int, int, int]] = []
    for j, piece in enumerate(pieces):
        chunks.append(piece)
        if j in fillets and fillets[j][2] is not None:
            before = sum(len(c) for c in chunks)
            chunks.append(fillets[j][2])
            joint_marks.append((j, before, before + len(fillets[j][2]) - 1))
        elif j in fillets:
            before = sum(len(c) for c in chunks)
            joint_marks.append((j, before - 1, before - 1))
    raw = np.vstack(chunks)
    # Track where each joint lands after duplicate removal.
    keep = np.concatenate([[True], np.hypot(*np.diff(raw, axis=0).T) > DUPLICATE_TOL])
    new_index = np.cumsum(keep) - 1
    points = raw[keep]
    if closed and np.hypot(*(points[-1] - points[0])) > 1e-9:
        points = np.vstack([points, points[0]])
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(points, axis=0).T))])

    turns = []
    for j, i0, i1 in joint_marks:
        node, delta, arc, trim = fillets[j]
        inter = by_node.get(node)
        if inter is None:
            continue
        s0, s1 = float(s[new_index[i0]]), float(s[new_index[i1]])
        if arc is None:
            s_node = s0
            s0, s1 = s_node - STRAIGHT_EVENT_HALF_SPAN, s_node + STRAIGHT_EVENT_HALF_SPAN
        else:
            s_node = 0.5 * (s0 + s1)
        turns.append(
            TurnEvent(
                intersection=inter.id,
                node=node,
                s_node=s_node,
                s_start=s0,
                s_end=s1,
                angle=delta,
                command=classify_turn(delta),
                sharp=inter.sharp,
            )
        )
    return Route(legs=legs, points=points, s=s, turns=turns, closed=closed)


def loop_route(loop_map: MineMap, direction: Direction = Direction.COUNTER_CLOCKWISE) -> Route:
    """Full lap of the loop map in the given driving direction."""
    if direction is Direction.COUNTER_CLOCKWISE:
        legs = [RouteLeg(edge=0), RouteLeg(edge=1)]
    else:
        legs = [RouteLeg(edge=1, reverse=True), RouteLeg(edge=0, reverse=True)]
    return build_route(loop_map, legs, closed=True)


def allowed_successors(mine_map: MineMap, leg: RouteLeg) -> List[RouteLeg]:
    """Legs a vehicle may continue onto at the end of ``leg``."""
    node = _leg_nodes(mine_map, leg)[1]
    inter = next((i for i in mine_map.intersections if i.node == node), None)
    out = []
    for edge in mine_map.edges:
        if edge.id == leg.edge:
            continue
        for reverse in (False, True):
            cand = RouteLeg(edge=edge.id, reverse=reverse)
            if _leg_nodes(mine_map, cand)[0] != node:
                continue
            if inter is not None:
                turn = next(
                    t for t in inter.turns if t.from_edge == leg.edge and t.to_edge == edge.id
                )
                if not turn.allowed:
                    continue
            out.append(cand)
    return out


def sample_navigation_route(
    mine_map: MineMap,
    rng: np.random.Generator,
    min_length: float = 1000.0,
    min_turns: int = 1,
    max_legs: int = 12,
) -> Optional[Route]:
    """Random walk over allowed turns until the route is long enough.

    Edges are not revisited. Returns None when the walk dead-ends before
    meeting the length and turning-intersection constraints.
    """
    start = mine_map.edges[int(rng.integers(len(mine_map.edges)))]
    legs = [RouteLeg(edge=start.id, reverse=bool(rng.integers(2)))]
    used = {start.id}
    while len(legs) < max_legs:
        route = build_route(mine_map, legs)
        turning = sum(1 for t in route.turns if t.command is not LateralCommand.STRAIGHT)
        if route.length >= min_length and turning >= min_turns:
            return route
        options = [leg for leg in allowed_successors(mine_map, legs[-1]) if leg.edge not in used]
        if not options:
            return None
        nxt = options[int(rng.integers(len(options)))]
        legs.append(nxt)
        used.add(nxt.edge)
    return None


def count_turning(route: Route) -> int:
    return sum(1 for t in route.turns if t.command is not LateralCommand.STRAIGHT)
