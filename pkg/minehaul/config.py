"""Run configuration management.

Every tunable of the simulator, the data pipeline, the network, training,
deployment and the benchmark lives in one ``Settings`` object. Values come from
field defaults, an optional TOML or JSON file, and ``MINEHAUL_*`` environment
variables (nested keys use ``__``), with the environment taking precedence.
"""

import hashlib
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

from minehaul.errors import ConfigError, InputMissingError

logger = logging.getLogger(__name__)

KMH = 1.0 / 3.6

# Fields that only change where or how loudly a run reports, never what it computes.
RUNTIME_ONLY_FIELDS = {"out_dir", "log_level", "log_format", "jobs"}


class Section(BaseModel):
    """Base for config sections: unknown keys are an error."""

    model_config = ConfigDict(extra="forbid", frozen=True)


class TruckSection(Section):
    wheelbase: float = Field(6.0, gt=0, description="Wheelbase L (m)")
    length: float = Field(13.0, gt=0, description="Footprint length (m)")
    width: float = Field(7.0, gt=0, description="Footprint width (m)")
    max_steer_deg: float = Field(35.0, gt=0, lt=90, description="Maximum steering angle (deg)")
    max_accel: float = Field(1.0, gt=0, description="Traction acceleration at full throttle (m/s^2)")
    e_brake_gain: float = Field(1.2, gt=0, description="Electric-brake deceleration at full command (m/s^2)")
    e_brake_fade_speed: float = Field(1.39, gt=0, description="Speed below which the electric brake fades (m/s)")
    m_brake_gain: float = Field(2.0, gt=0, description="Mechanical-brake deceleration at full command (m/s^2)")
    drag: float = Field(0.02, ge=0, description="Rolling-drag coefficient (1/s)")


class WorldSection(Section):
    road_width: float = Field(12.0, gt=0, description="Haul-road width (m)")
    junction_margin: float = Field(4.0, ge=0, description="Extra paved margin around turn fillets (m)")
    dt: float = Field(0.02, gt=0, le=0.1, description="Dynamics step (s)")
    sensor_every: int = Field(5, ge=1, description="Dynamics ticks per sensor frame")
    map_name: Literal["loop", "network"] = Field("loop", description="Map used by `eval`")


class SensorSection(Section):
    beams: int = Field(108, ge=8, description="Range-scan beam count")
    fov_deg: float = Field(270.0, gt=0, le=360, description="Range-scan field of view (deg)")
    r_min: float = Field(4.0, gt=0, description="Minimum reported range (m)")
    r_max: float = Field(120.0, gt=0, description="Maximum range; no hit beyond is invalid (m)")
    quantum: float = Field(0.2, gt=0, description="Range quantization grid (m)")
    gnss_noise_std: float = Field(0.0, ge=0, description="GNSS position noise (m), off by default")

    @property
    def fov(self) -> float:
        return math.radians(self.fov_deg)


class ExpertSection(Section):
    k_pp: float = Field(1.5, gt=0, description="Pure-pursuit lookahead gain (s)")
    lookahead_min: float = Field(8.0, gt=0, description="Pure-pursuit lookahead lower clamp (m)")
    lookahead_max: float = Field(25.0, gt=0, description="Pure-pursuit lookahead upper clamp (m)")
    speed_limit_kmh: float = Field(20.0, gt=0, description="Haul-road speed limit (km/h)")
    a_lat_max: float = Field(1.5, gt=0, description="Lateral acceleration bound for curve speed (m/s^2)")
    a_dec_plan: float = Field(0.5, gt=0, description="Deceleration used to plan slow-downs (m/s^2)")
    speed_kp: float = Field(0.5, gt=0, description="Proportional speed gain (1/s)")
    obstacle_standoff: float = Field(30.0, gt=0, description="Gap kept to in-lane obstacles (m)")
    obstacle_lane_halfwidth: float = Field(4.0, gt=0, description="Lateral band treated as in-lane (m)")
    hlc_activation: float = Field(50.0, gt=0, description="Distance ahead at which turn HLCs activate (m)")
    hlc_deadband_kmh: float = Field(1.0, ge=0, description="Longitudinal HLC hysteresis band (km/h)")

    @property
    def speed_limit(self) -> float:
        return self.speed_limit_kmh * KMH


class AugSection(Section):
    enabled: bool = Field(True, description="Append augmented copies when building the dataset")
    copies: int = Field(1, ge=0, description="Augmented copies per training sample")
    scale: Tuple[float, float] = Field((0.95, 1.05), description="Range scale interval")
    yaw_deg: float = Field(10.0, ge=0, description="Yaw rotation bound (deg)")
    gnss_drop: float = Field(0.003, ge=0, le=1, description="Probability of clearing the GNSS fix")


class DataSection(Section):
    k_lookahead: int = Field(5, ge=1, description="Number of lookahead predictions K")
    spacing_m: float = Field(1.0, gt=0, description="Lookahead spacing (m)")
    ci: float = Field(0.99, gt=0.9, lt=1.0, description="Confidence level of the bias filter")
    min_frames: int = Field(1000, ge=1, description="Frames required to fit thresholds")
    k_yaw: float = Field(1.0, description="Steering correction per radian of yaw augmentation")
    aug: AugSection = Field(default_factory=AugSection)


class CollectSection(Section):
    minutes: float = Field(30.0, gt=0, description="Total expert driving to record (min)")
    episode_seconds: float = Field(240.0, gt=0, description="Upper bound on one episode (s)")
    perturb_fraction: float = Field(0.3, ge=0, le=1, description="Episodes starting off the reference line")
    noise_fraction: float = Field(0.5, ge=0, le=1, description="Episodes with executed-steering noise")
    steer_noise_std: float = Field(0.08, ge=0, description="Std of held steering noise (normalized)")
    noise_hold_s: float = Field(1.0, gt=0, description="Hold time of one steering-noise draw (s)")
    n_traffic: int = Field(0, ge=0, description="Scripted participants per episode")


class ModelSection(Section):
    scan_hidden: Tuple[int, ...] = Field((256, 256), description="Scan encoder widths")
    meas_hidden: Tuple[int, ...] = Field((512, 512, 256), description="Measurement encoder widths")
    fusion_hidden: Tuple[int, ...] = Field((256, 256), description="Fusion trunk widths")
    speed_hidden: int = Field(64, ge=1, description="Speed branch hidden width")
    branch_hidden: int = Field(128, ge=1, description="Command branch hidden width")

    @model_validator(mode="after")
    def _fusion_input(self) -> "ModelSection":
        if not self.scan_hidden or not self.meas_hidden or not self.fusion_hidden:
            raise ValueError("encoder and trunk widths must be non-empty")
        return self


class TrainingSection(Section):
    epochs: int = Field(40, ge=1, description="Training epochs (250 for the full recipe)")
    batch_size: int = Field(32, ge=1, description="Mini-batch size")
    lr0: float = Field(2e-4, ge=0, description="Initial learning rate")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    alpha_scale: float = Field(1500.0, ge=0, description="MAE scale in the per-lookahead loss")
    boost_sigma: float = Field(1.0 / 15.0, gt=0, description="Width of the small-command boost")
    lambda_speed: float = Field(0.1, ge=0, description="Speed-branch loss weight")
    l_r_variant: Literal["alpha_weighted", "standard"] = Field(
        "alpha_weighted", description="Evidence regularizer coefficient: 2a+v (alpha_weighted) or 2v+a (standard)"
    )
    evidential: bool = Field(True, description="Include the NLL and regularizer terms")
    log_var_bounds: Tuple[float, float] = Field((-10.0, 15.0), description="Clamp for task log-variances")
    checkpoint_every: int = Field(5, ge=1, description="Epochs between periodic checkpoints")


class DeploymentSection(Section):
    mode: Literal["instantaneous", "uniform", "evidential"] = Field("evidential")
    intervention_heading_deg: float = Field(90.0, gt=0, description="Heading error triggering an intervention")
    intervention_cooldown_s: float = Field(1.0, ge=0, description="Grace period after a reset (s)")
    episode_seconds: float = Field(600.0, gt=0, description="Time limit of an `eval` episode (s)")
    gnss_failure_prob: float = Field(0.0, ge=0, le=1)
    direction: Literal["counter-clockwise", "clockwise"] = Field("counter-clockwise")


class BenchSection(Section):
    seeds: int = Field(20, ge=1, description="Seeds per lane-stable configuration")
    disturbance_trials: int = Field(30, ge=1, description="Trials per disturbance scenario class")
    yaw_deg: float = Field(10.0, ge=0, description="Disturbance yaw bound (deg)")
    lateral_m: float = Field(1.0, ge=0, description="Disturbance lateral offset bound (m)")
    recovery_s: float = Field(20.0, gt=0, description="Time allowed to reach the safe state (s)")
    safe_lateral: float = Field(0.5, gt=0, description="Safe-state lateral tolerance (m)")
    safe_heading_deg: float = Field(10.0, gt=0, description="Safe-state heading tolerance (deg)")
    safe_hold_s: float = Field(1.0, ge=0, description="Safe state must hold this long (s)")
    gnss_failure_prob: float = Field(0.04, ge=0, le=1, description="GNSS failure rate of the OOD run")
    route_min_m: float = Field(1000.0, gt=0, description="Minimum navigation route length (m)")
    navigation_routes: int = Field(12, ge=1, description="Navigation routes sampled")
    max_interventions_per_lap: float = Field(3.0, ge=0, description="Lane-stable acceptance threshold")
    min_completion: float = Field(0.9, ge=0, le=1, description="Lane-stable completion threshold")
    min_disturbance_success: float = Field(0.0, ge=0, le=1, description="Disturbance acceptance threshold")


class Settings(BaseSettings):
    """Resolved run configuration."""

    model_config = SettingsConfigDict(
        env_prefix="MINEHAUL_",
        env_nested_delimiter="__",
        extra="forbid",
        case_sensitive=False,
        frozen=True,
    )

    seed: int = Field(7, ge=0, description="Master seed")
    log_level: str = Field("INFO", description="Root log level")
    log_format: Literal["json", "console"] = Field("console", description="Log renderer")
    out_dir: str = Field("runs", description="Default artifact directory")
    jobs: int = Field(1, ge=1, description="Worker processes for `bench`")

    truck: TruckSection = Field(default_factory=TruckSection)
    world: WorldSection = Field(default_factory=WorldSection)
    sensors: SensorSection = Field(default_factory=SensorSection)
    expert: ExpertSection = Field(default_factory=ExpertSection)
    data: DataSection = Field(default_factory=DataSection)
    collect: CollectSection = Field(default_factory=CollectSection)
    model: ModelSection = Field(default_factory=ModelSection)
    training: TrainingSection = Field(default_factory=TrainingSection)
    deployment: DeploymentSection = Field(default_factory=DeploymentSection)
    bench: BenchSection = Field(default_factory=BenchSection)

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, v: str) -> str:
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v}")
        return v.upper()

    @model_validator(mode="after")
    def _road_fits_truck(self) -> "Settings":
        if self.world.road_width <= self.truck.width:
            raise ValueError("road width must exceed truck width")
        return self

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # File values arrive as init kwargs; the environment overrides them.
        return env_settings, init_settings


def read_config_file(path: Path) -> Dict[str, Any]:
    """Read a TOML or JSON config file into a plain dict.

    Args:
        path: ``.toml`` or ``.json`` file

    Returns:
        Parsed mapping

    Raises:
        InputMissingError: If the file does not exist
        ConfigError: If the file cannot be parsed
    """
    if not path.exists():
        raise InputMissingError(f"config file not found: {path}", details={"path": str(path)})
    try:
        if path.suffix == ".json":
            return json.loads(path.read_text())
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse {path}: {e}", details={"path": str(path)}) from e


def load_settings(path: Optional[Path] = None, **overrides: Any) -> Settings:
    """Build settings from defaults, an optional file and the environment.

    Args:
        path: Optional TOML/JSON config file
        **overrides: Top-level values applied on top of the file (CLI flags)

    Returns:
        Validated settings

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    values: Dict[str, Any] = read_config_file(path) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        settings = Settings(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}", details={"errors": e.errors()}) from e
    logger.debug(f"Configuration loaded (hash {config_hash(settings)[:12]})")
    return settings


def _canonical(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(settings: Settings) -> str:
    """SHA-256 over every field that influences computed outputs."""
    payload = settings.model_dump(mode="json", exclude=RUNTIME_ONLY_FIELDS)
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def model_hash(settings: Settings) -> str:
    """SHA-256 over the sections that fix a checkpoint's meaning."""
    payload = {
        "model": settings.model.model_dump(mode="json"),
        "data": settings.data.model_dump(mode="json"),
        "sensors": settings.sensors.model_dump(mode="json"),
        "l_r_variant": settings.training.l_r_variant,
    }
    return hashlib.sha256(_canonical(payload).encode()).hexdigest()


def write_run_config(settings: Settings, out_dir: Path) -> Path:
    """Write the resolved configuration next to a run's artifacts.

    Feeding the file back through ``--config`` reproduces the run.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "run_config.json"
    payload = settings.model_dump(mode="json", exclude=RUNTIME_ONLY_FIELDS)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return target


@lru_cache()
def get_settings() -> Settings:
    """Get cached default settings (defaults plus environment)."""
    return load_settings()
