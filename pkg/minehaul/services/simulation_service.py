"""The simulated world one episode runs in.

A ``World`` owns the map, the active route, the ego truck, scripted traffic
and the GNSS random stream. Dynamics advance at the world step (50 Hz by
default); sensor frames are taken on demand by the caller.
"""

import logging
import math
from typing import List, Optional

import numpy as np

from minehaul.config import SensorSection, WorldSection
from minehaul.schemas.common import ControlCommand, HighLevelCommand
from minehaul.schemas.driving import Observation
from minehaul.schemas.world import CollisionReport, GnssFix, MineMap, RangeScan, TruckParams, TruckState
from minehaul.services.collision_service import check_collision
from minehaul.services.dynamics_service import step_dynamics
from minehaul.services.route_service import Route
from minehaul.services.sensor_service import SpeedEstimator, cast_scan, sample_gnss
from minehaul.services.traffic_service import Traffic

logger = logging.getLogger(__name__)


def initial_state_on_route(
    route: Route,
    s: float = 0.0,
    lateral: float = 0.0,
    yaw: float = 0.0,
    speed: float = 0.0,
) -> TruckState:
    """Truck at arc length ``s``, offset ``lateral`` to the left and rotated by ``yaw``."""
    x, y, tangent = route.point_at(s)
    return TruckState(
        x=x - lateral * math.sin(tangent),
        y=y + lateral * math.cos(tangent),
        heading=tangent + yaw,
        speed=speed,
        route_s=route.wrap_s(s),
    )


class World:
    """Map, route, ego truck and traffic for one episode.

    Args:
        mine_map: Map driven on
        route: Reference line of the episode
        state: Initial ego state (``route_s`` set)
        params: Truck parameters
        world: Step sizes and road geometry
        sensors: Range-scan and GNSS configuration
        gnss_failure_prob: Probability that a GNSS fix is lost
        rng: Stream used for GNSS failures and noise
        traffic: Scripted participants
    """

    def __init__(
        self,
        mine_map: MineMap,
        route: Route,
        state: TruckState,
        params: Optional[TruckParams] = None,
        world: Optional[WorldSection] = None,
        sensors: Optional[SensorSection] = None,
        gnss_failure_prob: float = 0.0,
        rng: Optional[np.random.Generator] = None,
        traffic: Optional[Traffic] = None,
    ):
        self.map = mine_map
        self.route = route
        self.params = params or TruckParams()
        self.config = world or WorldSection()
        self.sensors = sensors or SensorSection()
        self.gnss_failure_prob = gnss_failure_prob
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.traffic = traffic or Traffic()
        if state.route_s is None:
            state = state.model_copy(update={"route_s": route.locate(state.x, state.y).s})
        self.state = state
        self.speed_estimator = SpeedEstimator(state.speed)
        self.progress = 0.0
        self.start_s = float(state.route_s)

    @property
    def dt(self) -> float:
        return self.config.dt

    def obstacles(self) -> List[np.ndarray]:
        return self.traffic.footprints(self.state.time)

    def scan(self) -> RangeScan:
        s = self.sensors
        return cast_scan(
            self.state,
            self.map,
            beams=s.beams,
            fov=s.fov,
            obstacles=self.obstacles(),
            r_min=s.r_min,
            r_max=s.r_max,
            quantum=s.quantum,
        )

    def sense(self, hlc: Optional[HighLevelCommand] = None, scan: Optional[RangeScan] = None) -> Observation:
        """One sensor frame: scan, GNSS fix and the speed estimate."""
        scan = scan if scan is not None else self.scan()
        fix: GnssFix = sample_gnss(self.state, self.gnss_failure_prob, self.rng, self.sensors.gnss_noise_std)
        speed = self.speed_estimator.update(fix)
        return Observation(scan=scan, gnss=fix, speed=speed, hlc=hlc or HighLevelCommand())

    def step(self, cmd: ControlCommand) -> CollisionReport:
        """Advance the ego truck one world step and check it."""
        state = step_dynamics(self.state, self.params, cmd, self.dt)
        loc = self.route.locate(state.x, state.y, state.route_s)
        delta = loc.s - state.route_s
        if self.route.closed:
            half = self.route.length / 2.0
            delta = (delta + half) % self.route.length - half
        self.progress += delta
        self.state = state.model_copy(update={"route_s": loc.s})
        return check_collision(self.state, self.params, self.map, self.route, self.obstacles())

    def reset_to_reference(self) -> TruckState:
        """Place the truck on the nearest reference-line point, keeping its speed."""
        s = self.state.route_s
        x, y, tangent = self.route.point_at(s)
        self.state = self.state.model_copy(update={"x": x, "y": y, "heading": tangent, "steering": 0.0})
        self.speed_estimator.reset(self.state.speed)
        logger.debug(f"Reset to reference line at s={s:.1f} m")
        return self.state

    @property
    def route_progress(self) -> float:
        """Unwrapped arc length driven along the route since the start."""
        return self.progress

    @property
    def finished(self) -> bool:
        if self.route.closed:
            return self.progress >= self.route.length
        return self.state.route_s >= self.route.length - 1.0
