"""Scripted expert driver and the rule-based high-level command generator."""

import logging
import math
from typing import Optional

import numpy as np

from minehaul.config import ExpertSection
from minehaul.errors import ExpertLostError
from minehaul.schemas.common import ControlCommand, HighLevelCommand, LateralCommand, LongitudinalCommand
from minehaul.schemas.world import RangeScan, TruckParams, TruckState
from minehaul.services.route_service import Route
from minehaul.services.sensor_service import beam_angles

logger = logging.getLogger(__name__)

KMH = 1.0 / 3.6
PREVIEW_MARGIN = 10.0
HEADWAY_S = 1.0
STOP_SPEED = 0.05


class ScriptedExpert:
    """Pure-pursuit steering with a curvature- and obstacle-aware speed profile.

    Args:
        params: Truck parameters
        config: Expert tuning section
        road_width: Width of the roads driven (m)
    """

    def __init__(
        self,
        params: Optional[TruckParams] = None,
        config: Optional[ExpertSection] = None,
        road_width: float = 12.0,
    ):
        self.params = params or TruckParams()
        self.config = config or ExpertSection()
        self.road_width = road_width

    def _progress(self, state: TruckState, route: Route) -> float:
        return route.locate(state.x, state.y, state.route_s).s

    def curve_speed(self, state: TruckState, route: Route, s: float) -> float:
        """Highest speed from which every curve in the preview can be taken."""
        cfg = self.config
        v = state.speed
        horizon = max(v, cfg.speed_limit) ** 2 / (2.0 * cfg.a_dec_plan) + PREVIEW_MARGIN
        s_vertices, kappa = route.curvature_window(s, s + horizon)
        limit = cfg.speed_limit
        bend = np.abs(kappa) > 1e-9
        if np.any(bend):
            v_curve = np.sqrt(cfg.a_lat_max / np.abs(kappa[bend]))
            dist = np.maximum(s_vertices[bend] - s, 0.0)
            limit = min(limit, float(np.min(np.sqrt(v_curve**2 + 2.0 * cfg.a_dec_plan * dist))))
        return limit

    def obstacle_gap(self, state: TruckState, route: Route, s: float, scan: RangeScan) -> float:
        """Bumper gap to the nearest scan return inside the lane ahead (inf if none)."""
        if scan is None or not np.any(scan.valid):
            return math.inf
        angles = state.heading + beam_angles(scan.beams, scan.fov)
        r = scan.ranges[scan.valid]
        a = angles[scan.valid]
        pts = np.stack([state.x + r * np.cos(a), state.y + r * np.sin(a)], axis=1)
        s_pts, lat = route.project_points(pts, s)
        if len(s_pts) == 0:
            return math.inf
        ahead = (s_pts - s) % route.length if route.closed else s_pts - s
        in_lane = (np.abs(lat) < self.config.obstacle_lane_halfwidth) & (ahead > 0.0) & (ahead < 125.0)
        if not np.any(in_lane):
            return math.inf
        return float(np.min(ahead[in_lane])) - self.params.length / 2.0

    def target_speed(self, state: TruckState, route: Route, scan: Optional[RangeScan] = None) -> float:
        """Speed the expert aims for: limit, curve preview and obstacle standoff."""
        s = self._progress(state, route)
        target = self.curve_speed(state, route, s)
        if scan is not None:
            gap = self.obstacle_gap(state, route, s, scan)
            if math.isfinite(gap):
                room = gap - self.config.obstacle_standoff - HEADWAY_S * state.speed
                target = min(target, math.sqrt(max(0.0, 2.0 * self.config.a_dec_plan * room)))
        if not route.closed:
            to_end = route.length - s
            target = min(target, math.sqrt(max(0.0, 2.0 * self.config.a_dec_plan * max(0.0, to_end - 2.0))))
        return target

    def steering(self, state: TruckState, route: Route, s: float) -> float:
        cfg = self.config
        lookahead = min(max(cfg.k_pp * state.speed, cfg.lookahead_min), cfg.lookahead_max)
        tx, ty, _ = route.point_at(s + lookahead)
        dx, dy = tx - state.x, ty - state.y
        dist = max(math.hypot(dx, dy), 1e-6)
        alpha = math.atan2(dy, dx) - state.heading
        delta = math.atan(2.0 * self.params.wheelbase * math.sin(alpha) / dist)
        return float(np.clip(delta / self.params.max_steer, -1.0, 1.0))

    def longitudinal(self, speed: float, target: float) -> ControlCommand:
        p = self.params
        if target <= STOP_SPEED and speed < 0.3:
            return ControlCommand(brake_m=1.0)
        a_des = self.config.speed_kp * (target - speed) + p.drag * speed
        if a_des >= 0.0:
            return ControlCommand(throttle=min(1.0, a_des / p.max_accel))
        need = -a_des
        if speed > p.e_brake_fade_speed:
            return ControlCommand(brake_e=min(1.0, need / p.e_brake_gain))
        return ControlCommand(brake_m=min(1.0, need / p.m_brake_gain))

    def policy(self, state: TruckState, route: Route, scan: Optional[RangeScan] = None) -> ControlCommand:
        """Expert command for the current state.

        Raises:
            ExpertLostError: If the truck is more than half a road width off the route
        """
        loc = route.locate(state.x, state.y, state.route_s)
        if loc.distance > 0.5 * self.road_width:
            raise ExpertLostError(
                f"truck {loc.distance:.2f} m from its route",
                details={"s": loc.s, "distance": loc.distance},
            )
        long_cmd = self.longitudinal(state.speed, self.target_speed(state, route, scan))
        return long_cmd.model_copy(update={"steer": self.steering(state, route, loc.s)})

    def hlc(
        self,
        state: TruckState,
        route: Route,
        activation_distance: Optional[float] = None,
        scan: Optional[RangeScan] = None,
    ) -> HighLevelCommand:
        """Rule-based high-level command; depends only on its arguments."""
        activation = activation_distance if activation_distance is not None else self.config.hlc_activation
        if activation <= 0:
            raise ValueError("activation distance must be positive")
        s = self._progress(state, route)
        turn = route.upcoming_turn(s, activation)
        lateral = turn.command if turn is not None else LateralCommand.STRAIGHT
        band = self.config.hlc_deadband_kmh * KMH
        diff = self.target_speed(state, route, scan) - state.speed
        if diff > band:
            longitudinal = LongitudinalCommand.ACCELERATE
        elif diff < -band:
            longitudinal = LongitudinalCommand.DECELERATE
        else:
            longitudinal = LongitudinalCommand.MAINTAIN
        return HighLevelCommand(lateral=lateral, longitudinal=longitudinal)


_default_expert = ScriptedExpert()


def expert_policy(
    state: TruckState, route: Route, scan: Optional[RangeScan], expert: Optional[ScriptedExpert] = None
) -> ControlCommand:
    return (expert or _default_expert).policy(state, route, scan)


def generate_hlc(
    state: TruckState,
    route: Route,
    activation_distance: float = 50.0,
    expert: Optional[ScriptedExpert] = None,
) -> HighLevelCommand:
    return (expert or _default_expert).hlc(state, route, activation_distance)
