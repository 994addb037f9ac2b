"""Closed-loop command executor.

Sensors are sampled and the planner queried at the sensor rate; the truck is
stepped at the world rate using the most recently fused command. Fusion is
recomputed whenever a new prediction arrives or the truck enters a new 1 m
odometer bin, and the command is held in between.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Protocol

import numpy as np
from pydantic import BaseModel, Field

from minehaul.config import DeploymentSection
from minehaul.schemas.benchmark import EventRecord
from minehaul.schemas.common import ControlCommand, FusionMode
from minehaul.schemas.driving import Observation
from minehaul.schemas.prediction import EvidentialPrediction
from minehaul.schemas.world import CollisionReport, TruckState
from minehaul.services.expert_service import ScriptedExpert
from minehaul.services.fusion_service import FusionBuffer
from minehaul.services.simulation_service import World

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "t",
    "x",
    "y",
    "heading",
    "speed",
    "steer_cmd",
    "acc_cmd",
    "dec_e_cmd",
    "dec_m_cmd",
    "lat_err",
    "head_err",
    "event",
]
DEVIATION_LIMIT = 1.0
EXPERT_CONFIDENCE = 1.0


class Planner(Protocol):
    """Anything that maps an observation to a K-lookahead prediction."""

    k: int

    def predict(self, obs: Observation, state: TruckState) -> EvidentialPrediction: ...


class ExpertPlanner:
    """Wraps the scripted expert as a planner.

    Every lookahead carries the current expert command with unit confidence,
    so all fusion modes reduce to the expert at the sensor rate.
    """

    def __init__(self, expert: ScriptedExpert, world: World, k: int = 5):
        self.expert = expert
        self.world = world
        self.k = k

    def predict(self, obs: Observation, state: TruckState) -> EvidentialPrediction:
        cmd = self.expert.policy(state, self.world.route, obs.scan)
        gamma = np.repeat(cmd.as_array()[:, None], self.k, axis=1)
        ones = np.full_like(gamma, EXPERT_CONFIDENCE)
        return EvidentialPrediction(gamma=gamma, nu=ones, alpha=ones + 1.0, beta=ones, speed=state.speed)


class EpisodeTrace(BaseModel):
    """Everything one executor run produced."""

    mode: FusionMode
    inference_calls: int = 0
    dynamics_steps: int = 0
    fusion_reads: int = 0
    events: List[EventRecord] = Field(default_factory=list)
    rows: List[Dict] = Field(default_factory=list)
    collisions: int = 0
    interventions: int = 0
    gnss_losses: int = 0
    safety_stop: bool = False
    stopped_by_monitor: bool = False
    progress: float = 0.0
    max_progress: float = 0.0
    max_speed: float = 0.0
    overspeed_ticks: int = 0
    deviation_ticks: int = 0
    duration: float = 0.0

    @property
    def overspeed_fraction(self) -> float:
        return self.overspeed_ticks / self.dynamics_steps if self.dynamics_steps else 0.0

    @property
    def deviation_fraction(self) -> float:
        return self.deviation_ticks / self.dynamics_steps if self.dynamics_steps else 0.0


Monitor = Callable[[World, CollisionReport], bool]


def _event(kind: str, world: World) -> EventRecord:
    s = world.state
    return EventRecord(
        kind=kind, t=s.time, odometer=s.odometer, x=s.x, y=s.y, route_s=world.start_s + world.progress
    )


def run_executor(
    world: World,
    planner: Planner,
    mode: FusionMode,
    max_time: float,
    hlc_source: Optional[ScriptedExpert] = None,
    deployment: Optional[DeploymentSection] = None,
    speed_limit: float = 20.0 / 3.6,
    record: bool = True,
    monitor: Optional[Monitor] = None,
    stop_at_route_end: bool = True,
) -> EpisodeTrace:
    """Drive ``world`` with ``planner`` for at most ``max_time`` seconds.

    Args:
        world: Episode world; mutated in place
        planner: Policy queried once per sensor frame
        mode: Fusion mode used for the whole episode
        max_time: Episode time limit (s)
        hlc_source: Rule-based HLC generator; straight/maintain when omitted
        deployment: Intervention thresholds
        speed_limit: Overspeed threshold for the regulation metrics (m/s)
        record: Keep one trajectory row per world step
        monitor: Called after every step; returning True ends the episode
        stop_at_route_end: End the episode once the route is completed

    Returns:
        Trace with counters, events and (optionally) trajectory rows
    """
    mode = FusionMode(mode)
    deployment = deployment or DeploymentSection()
    trace = EpisodeTrace(mode=mode)
    buffer = FusionBuffer(planner.k)
    heading_limit = math.radians(deployment.intervention_heading_deg)
    half_width = world.config.road_width / 2.0
    every = world.config.sensor_every
    ticks = int(round(max_time / world.dt))

    latest: Optional[EvidentialPrediction] = None
    command = ControlCommand()
    current_bin: Optional[int] = None
    cooldown_until = -math.inf
    in_contact = False

    for tick in range(ticks):
        tick_events: List[str] = []
        if tick % every == 0:
            scan = world.scan()
            hlc = hlc_source.hlc(world.state, world.route, scan=scan) if hlc_source is not None else None
            obs = world.sense(hlc, scan)
            if not obs.gnss.valid:
                trace.gnss_losses += 1
                trace.events.append(_event("gnss_loss", world))
                tick_events.append("gnss_loss")
            pred = planner.predict(obs, world.state)
            trace.inference_calls += 1
            if not pred.is_finite():
                trace.safety_stop = True
                trace.events.append(_event("safety_stop", world))
                logger.warning("Planner produced a non-finite prediction; safety stop")
                break
            latest = pred
            current_bin = math.floor(world.state.odometer)
            if mode is not FusionMode.INSTANTANEOUS:
                buffer.ingest(world.state.odometer, pred)
            command = buffer.fuse(current_bin, mode, latest)
        elif latest is not None and math.floor(world.state.odometer) != current_bin:
            current_bin = math.floor(world.state.odometer)
            command = buffer.fuse(current_bin, mode, latest)

        if not command.is_finite():
            trace.safety_stop = True
            trace.events.append(_event("safety_stop", world))
            logger.warning("Fused command is non-finite; safety stop")
            break

        applied = command
        report = world.step(command)
        trace.dynamics_steps += 1
        state = world.state
        trace.max_speed = max(trace.max_speed, state.speed)
        trace.overspeed_ticks += int(state.speed > speed_limit)
        trace.deviation_ticks += int(abs(report.lateral_error) > DEVIATION_LIMIT)
        trace.max_progress = max(trace.max_progress, world.progress)

        if report.collided and not in_contact:
            trace.collisions += 1
            trace.events.append(_event("collision", world))
            tick_events.append("collision")
        in_contact = report.collided
        departed = abs(report.lateral_error) > half_width or abs(report.heading_error) > heading_limit
        if (report.collided or departed) and state.time >= cooldown_until:
            trace.interventions += 1
            trace.events.append(_event("intervention", world))
            tick_events.append("intervention")
            world.reset_to_reference()
            buffer.clear()
            latest = None
            command = ControlCommand()
            cooldown_until = state.time + deployment.intervention_cooldown_s

        if record:
            trace.rows.append(_row(state, applied, report, tick_events))
        if monitor is not None and monitor(world, report):
            trace.stopped_by_monitor = True
            break
        if stop_at_route_end and world.finished:
            break

    trace.fusion_reads = buffer.reads
    trace.progress = world.progress
    trace.duration = world.state.time
    logger.debug(
        f"Episode ended after {trace.dynamics_steps} steps",
        extra={"mode": mode.value, "interventions": trace.interventions, "collisions": trace.collisions},
    )
    return trace


def _row(state: TruckState, cmd: ControlCommand, report: CollisionReport, events: List[str]) -> Dict:
    return {
        "t": state.time,
        "x": state.x,
        "y": state.y,
        "heading": state.heading,
        "speed": state.speed,
        "steer_cmd": cmd.steer,
        "acc_cmd": cmd.throttle,
        "dec_e_cmd": cmd.brake_e,
        "dec_m_cmd": cmd.brake_m,
        "lat_err": report.lateral_error,
        "head_err": report.heading_error,
        "event": ";".join(events),
    }
