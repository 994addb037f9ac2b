"""Expert demonstration collection.

Episodes alternate between both loop directions and sampled network routes.
After the first, episodes start at cruise speed; some start perturbed off the
reference line and some execute the expert's steering with held zero-mean
noise. The recorded label is always the clean expert command.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from minehaul.config import Settings
from minehaul.errors import ExpertLostError
from minehaul.schemas.common import ControlCommand, Direction
from minehaul.schemas.driving import DemoFrame
from minehaul.schemas.world import MineMap, TruckParams
from minehaul.services.expert_service import ScriptedExpert
from minehaul.services.route_service import Route, loop_route, sample_navigation_route
from minehaul.services.simulation_service import World, initial_state_on_route
from minehaul.services.traffic_service import spawn_traffic

logger = logging.getLogger(__name__)


class CollectionService:
    """Rolls the scripted expert and records one frame per sensor tick.

    Args:
        settings: Resolved settings
        maps: Maps keyed ``loop_map`` / ``network_map``
    """

    def __init__(self, settings: Settings, maps: Dict[str, MineMap]):
        self.settings = settings
        self.maps = maps
        self.params = TruckParams.from_section(settings.truck)
        self.expert = ScriptedExpert(self.params, settings.expert, settings.world.road_width)

    def _route(self, episode: int, rng: np.random.Generator) -> Tuple[MineMap, Route]:
        slot = episode % 3
        loop_map = self.maps["loop_map"]
        if slot == 0:
            return loop_map, loop_route(loop_map, Direction.COUNTER_CLOCKWISE)
        if slot == 1:
            return loop_map, loop_route(loop_map, Direction.CLOCKWISE)
        network = self.maps["network_map"]
        for _ in range(20):
            route = sample_navigation_route(network, rng, min_length=self.settings.bench.route_min_m)
            if route is not None:
                return network, route
        logger.warning("No navigation route found; falling back to the loop")
        return loop_map, loop_route(loop_map, Direction.COUNTER_CLOCKWISE)

    def _world(self, episode: int, rng: np.random.Generator) -> Tuple[World, bool]:
        cfg = self.settings.collect
        mine_map, route = self._route(episode, rng)
        s0 = float(rng.uniform(0.0, route.length)) if route.closed else 0.0
        perturbed = bool(rng.random() < cfg.perturb_fraction)
        lateral = yaw = 0.0
        if perturbed:
            lateral = float(rng.uniform(-self.settings.bench.lateral_m, self.settings.bench.lateral_m))
            bound = math.radians(self.settings.bench.yaw_deg)
            yaw = float(rng.uniform(-bound, bound))
        speed = 0.0 if episode == 0 else self.settings.expert.speed_limit
        state = initial_state_on_route(route, s0, lateral, yaw, speed)
        traffic = spawn_traffic(
            mine_map, cfg.n_traffic, rng, route=route, ego_s=s0, params=self.params
        )
        world = World(
            mine_map,
            route,
            state,
            self.params,
            self.settings.world,
            self.settings.sensors,
            gnss_failure_prob=0.0,
            rng=np.random.default_rng(rng.integers(2**32)),
            traffic=traffic,
        )
        noisy = bool(rng.random() < cfg.noise_fraction)
        return world, noisy

    def run_episode(
        self, episode: int, rng: np.random.Generator, max_seconds: float
    ) -> List[DemoFrame]:
        """Record one episode of at most ``max_seconds``."""
        cfg = self.settings.collect
        world, noisy = self._world(episode, rng)
        every = self.settings.world.sensor_every
        hold_ticks = max(1, int(round(cfg.noise_hold_s / world.dt)))
        ticks = int(round(max_seconds / world.dt))
        frames: List[DemoFrame] = []
        executed = ControlCommand()
        noise = 0.0
        for tick in range(ticks):
            if noisy and tick % hold_ticks == 0:
                noise = float(rng.normal(0.0, cfg.steer_noise_std))
            if tick % every == 0:
                state = world.state
                scan = world.scan()
                try:
                    cmd = self.expert.policy(state, world.route, scan)
                except ExpertLostError as e:
                    logger.warning(f"Episode {episode} aborted: {e.message}")
                    break
                hlc = self.expert.hlc(state, world.route, scan=scan)
                obs = world.sense(hlc, scan)
                frames.append(
                    DemoFrame(
                        episode=episode,
                        index=len(frames),
                        t=state.time,
                        s=state.odometer,
                        scan=obs.scan,
                        gnss=obs.gnss,
                        speed=obs.speed,
                        hlc_lat=hlc.lateral,
                        hlc_lon=hlc.longitudinal,
                        steer=cmd.steer,
                        throttle=cmd.throttle,
                        brake_e=cmd.brake_e,
                        brake_m=cmd.brake_m,
                    )
                )
                executed = cmd
            applied = executed
            if noisy:
                applied = executed.model_copy(update={"steer": float(np.clip(executed.steer + noise, -1.0, 1.0))})
            report = world.step(applied)
            if report.collided:
                logger.warning(f"Episode {episode} ended on contact at t={world.state.time:.1f} s")
                break
            if world.finished:
                break
        return frames

    def collect(self, seed: Optional[int] = None) -> List[DemoFrame]:
        """Record ``collect.minutes`` of expert driving."""
        cfg = self.settings.collect
        rng = np.random.default_rng(self.settings.seed if seed is None else seed)
        budget = cfg.minutes * 60.0
        period = self.settings.world.dt * self.settings.world.sensor_every
        frames: List[DemoFrame] = []
        episode = 0
        while budget > period / 2.0:
            episode_frames = self.run_episode(episode, rng, min(cfg.episode_seconds, budget))
            if episode_frames:
                budget -= len(episode_frames) * period
            else:
                budget -= period
            frames.extend(episode_frames)
            logger.info(
                f"Collected episode {episode}: {len(episode_frames)} frames",
                extra={"episode": episode, "frames": len(episode_frames), "remaining_s": round(budget, 1)},
            )
            episode += 1
        return frames
