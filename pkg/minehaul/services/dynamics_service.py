"""Kinematic truck dynamics with traction, electric and mechanical braking."""

import math

from minehaul.errors import InvalidInputError
from minehaul.schemas.common import ControlCommand
from minehaul.schemas.world import TruckParams, TruckState

MAX_DT = 0.1
# Below this speed a truck held by the mechanical brake is at rest.
REST_EPS = 1e-9


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def step_dynamics(state: TruckState, params: TruckParams, cmd: ControlCommand, dt: float) -> TruckState:
    """Advance the truck by ``dt`` seconds.

    Heading changes at v tan(delta) / L. Speed integrates traction minus the
    electric brake (fading linearly below the fade speed, so it cannot hold
    the truck at rest), the mechanical brake (constant deceleration) and
    rolling drag, and is clamped at zero. Commands are clipped to their
    channel ranges.

    Raises:
        InvalidInputError: On non-finite state/command or dt outside (0, 0.1]
    """
    if not _finite(dt) or not 0.0 < dt <= MAX_DT:
        raise InvalidInputError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    if not _finite(state.x, state.y, state.heading, state.speed, state.odometer, state.time):
        raise InvalidInputError("non-finite truck state", details={"state": state.model_dump()})
    if not cmd.is_finite():
        raise InvalidInputError("non-finite control command", details={"command": cmd.model_dump()})

    cmd = cmd.clipped()
    v = state.speed
    delta = cmd.steer * params.max_steer
    fade = min(1.0, v / params.e_brake_fade_speed)
    mech = params.m_brake_gain * cmd.brake_m
    accel = (
        params.max_accel * cmd.throttle
        - params.e_brake_gain * cmd.brake_e * fade
        - mech
        - params.drag * v
    )
    v_new = max(0.0, v + accel * dt)
    if mech > 0.0 and v_new < REST_EPS:
        v_new = 0.0

    heading = state.heading + v * math.tan(delta) / params.wheelbase * dt
    if not -math.pi <= heading < math.pi:
        heading = (heading + math.pi) % (2.0 * math.pi) - math.pi
    return TruckState(
        x=state.x + v * math.cos(state.heading) * dt,
        y=state.y + v * math.sin(state.heading) * dt,
        heading=heading,
        speed=v_new,
        steering=delta,
        odometer=state.odometer + v * dt,
        time=state.time + dt,
        route_s=state.route_s,
    )
