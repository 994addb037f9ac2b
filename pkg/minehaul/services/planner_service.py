"""The FusionPlanner network and its checkpoints.

A range-scan encoder and a measurement encoder feed a shared fusion trunk.
From the trunk a speed branch regresses the current speed, one of three
lateral branches (picked by the lateral HLC) emits the steering NIG
parameters for K lookaheads, and one of three longitudinal branches (picked
by the longitudinal HLC) emits them for the three longitudinal channels.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import expit

from minehaul.errors import ConfigMismatchError, DimensionError, InputMissingError
from minehaul.neural.layers import MLP, activate_grad, softplus
from minehaul.neural.params import ParamStore
from minehaul.schemas.common import CHANNELS
from minehaul.schemas.driving import Observation, TrainingSample
from minehaul.schemas.prediction import EvidentialPrediction, ModelConfig
from minehaul.schemas.world import GnssFix, RangeScan, TruckState

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
POSITION_SCALE = 1000.0
SPEED_SCALE = 20.0 / 3.6
RANGE_SCALE = 120.0
FLOOR = 1e-6
N_PARAMS = 4  # gamma, nu, alpha, beta


def scan_input(scan: RangeScan, beams: int) -> np.ndarray:
    """Normalized ranges (invalid beams read 1.0) followed by the validity mask."""
    if scan.beams != beams:
        raise DimensionError("scan_encoder", beams, scan.beams)
    ranges = np.where(scan.valid, scan.ranges / RANGE_SCALE, 1.0)
    return np.concatenate([ranges, scan.valid.astype(np.float64)])


def measurement_input(fix: GnssFix, speed: float) -> np.ndarray:
    if not fix.valid:
        return np.array([0.0, 0.0, 0.0, speed / SPEED_SCALE])
    return np.array([fix.x / POSITION_SCALE, fix.y / POSITION_SCALE, 1.0, speed / SPEED_SCALE])


class Batch(BaseModel):
    """Network inputs and targets for a group of samples."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scan: np.ndarray
    meas: np.ndarray
    lateral: np.ndarray
    longitudinal: np.ndarray
    labels: Optional[np.ndarray] = None
    speed: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.scan.shape[0])


def make_batch(samples: Sequence[TrainingSample], beams: int) -> Batch:
    return Batch(
        scan=np.stack([scan_input(s.scan, beams) for s in samples]),
        meas=np.stack([measurement_input(s.gnss, s.speed) for s in samples]),
        lateral=np.array([s.hlc_lat.branch for s in samples], dtype=np.int64),
        longitudinal=np.array([s.hlc_lon.branch for s in samples], dtype=np.int64),
        labels=np.stack([s.labels for s in samples]),
        speed=np.array([s.speed / SPEED_SCALE for s in samples]),
    )


def observation_batch(obs: Observation, beams: int) -> Batch:
    return Batch(
        scan=scan_input(obs.scan, beams)[None, :],
        meas=measurement_input(obs.gnss, obs.speed)[None, :],
        lateral=np.array([obs.hlc.lateral.branch]),
        longitudinal=np.array([obs.hlc.longitudinal.branch]),
    )


class Outputs(BaseModel):
    """Batched NIG parameters, each (B, 4, K), plus normalized speed (B,)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    speed: np.ndarray

    def prediction(self, i: int = 0) -> EvidentialPrediction:
        return EvidentialPrediction(
            gamma=self.gamma[i],
            nu=self.nu[i],
            alpha=self.alpha[i],
            beta=self.beta[i],
            speed=float(self.speed[i] * SPEED_SCALE),
        )


class FusionPlanner:
    """Branched evidential planner over a ``ParamStore``.

    Args:
        config: Layer widths, beam count and K
        seed: Initialization seed
    """

    def __init__(self, config: Optional[ModelConfig] = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.seed = seed
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        cfg = self.config
        k = cfg.k
        self.k = k
        trunk_out = cfg.fusion_hidden[-1]
        self.scan_encoder = MLP(self.store, "scan", [2 * cfg.beams, *cfg.scan_hidden], rng)
        self.meas_encoder = MLP(self.store, "meas", [4, *cfg.meas_hidden], rng)
        self.trunk = MLP(self.store, "trunk", [cfg.fusion_input, *cfg.fusion_hidden], rng)
        self.speed_branch = MLP(
            self.store, "speed", [trunk_out, cfg.speed_hidden, 1], rng, final_activation="identity"
        )
        self.lateral_branches = [
            MLP(self.store, f"lat{i}", [trunk_out, cfg.branch_hidden, N_PARAMS * k], rng, final_activation="identity")
            for i in range(cfg.n_lateral)
        ]
        self.longitudinal_branches = [
            MLP(
                self.store,
                f"lon{i}",
                [trunk_out, cfg.branch_hidden, 3 * N_PARAMS * k],
                rng,
                final_activation="identity",
            )
            for i in range(cfg.n_longitudinal)
        ]
        self.log_var = self.store.add("task.log_var", np.zeros(len(CHANNELS)))

    # -- encoders -----------------------------------------------------------

    def encode_scan(self, scan: RangeScan) -> np.ndarray:
        """256-wide scan feature."""
        features, _ = self.scan_encoder.forward(scan_input(scan, self.config.beams)[None, :])
        return features[0]

    def encode_measurement(self, fix: GnssFix, speed: float) -> np.ndarray:
        features, _ = self.meas_encoder.forward(measurement_input(fix, speed)[None, :])
        return features[0]

    # -- batched forward / backward ----------------------------------------

    def forward(self, batch: Batch) -> Tuple[Outputs, Dict[str, Any]]:
        f_scan, c_scan = self.scan_encoder.forward(batch.scan)
        f_meas, c_meas = self.meas_encoder.forward(batch.meas)
        h, c_trunk = self.trunk.forward(np.concatenate([f_scan, f_meas], axis=1))
        v, c_speed = self.speed_branch.forward(h)

        n, k = len(batch), self.k
        raw = np.zeros((n, len(CHANNELS), N_PARAMS, k))
        lat_caches, lon_caches = {}, {}
        for i, branch in enumerate(self.lateral_branches):
            rows = np.flatnonzero(batch.lateral == i)
            if len(rows):
                out, cache = branch.forward(h[rows])
                raw[rows, 0] = out.reshape(len(rows), N_PARAMS, k)
                lat_caches[i] = (rows, cache)
        for i, branch in enumerate(self.longitudinal_branches):
            rows = np.flatnonzero(batch.longitudinal == i)
            if len(rows):
                out, cache = branch.forward(h[rows])
                raw[rows, 1:] = out.reshape(len(rows), 3, N_PARAMS, k)
                lon_caches[i] = (rows, cache)

        z_gamma, z_nu, z_alpha, z_beta = (raw[:, :, j, :] for j in range(N_PARAMS))
        gamma = np.empty_like(z_gamma)
        gamma[:, 0] = np.tanh(z_gamma[:, 0])
        gamma[:, 1:] = expit(z_gamma[:, 1:])
        outputs = Outputs(
            gamma=gamma,
            nu=softplus(z_nu) + FLOOR,
            alpha=1.0 + softplus(z_alpha) + FLOOR,
            beta=softplus(z_beta) + FLOOR,
            speed=v[:, 0],
        )
        cache = {
            "scan": c_scan,
            "meas": c_meas,
            "trunk": c_trunk,
            "speed": c_speed,
            "lat": lat_caches,
            "lon": lon_caches,
            "raw": raw,
            "scan_width": f_scan.shape[1],
        }
        return outputs, cache

    def backward(self, grads: Dict[str, np.ndarray], cache: Dict[str, Any]) -> None:
        """Accumulate parameter gradients from output gradients.

        ``grads`` holds dL/d``gamma``, ``nu``, ``alpha``, ``beta`` (B, 4, K)
        and dL/d``speed`` (B,).
        """
        raw = cache["raw"]
        d_raw = np.zeros_like(raw)
        z_gamma = raw[:, :, 0, :]
        d_raw[:, 0, 0] = grads["gamma"][:, 0] * activate_grad("tanh", z_gamma[:, 0])
        d_raw[:, 1:, 0] = grads["gamma"][:, 1:] * activate_grad("sigmoid", z_gamma[:, 1:])
        for j, name in ((1, "nu"), (2, "alpha"), (3, "beta")):
            d_raw[:, :, j] = grads[name] * activate_grad("softplus", raw[:, :, j, :])

        k = self.k
        d_h = np.zeros((raw.shape[0], self.config.fusion_hidden[-1]))
        for i, (rows, branch_cache) in cache["lat"].items():
            dy = d_raw[rows, 0].reshape(len(rows), N_PARAMS * k)
            d_h[rows] += self.lateral_branches[i].backward(dy, branch_cache)
        for i, (rows, branch_cache) in cache["lon"].items():
            dy = d_raw[rows, 1:].reshape(len(rows), 3 * N_PARAMS * k)
            d_h[rows] += self.longitudinal_branches[i].backward(dy, branch_cache)
        d_h += self.speed_branch.backward(grads["speed"][:, None], cache["speed"])

        d_fused = self.trunk.backward(d_h, cache["trunk"])
        width = cache["scan_width"]
        self.scan_encoder.backward(d_fused[:, :width], cache["scan"])
        self.meas_encoder.backward(d_fused[:, width:], cache["meas"])

    def relu_signature(self, cache: Dict[str, Any]) -> bytes:
        """ReLU sign pattern of one forward pass, for kink-aware gradient checks."""
        parts = [
            self.scan_encoder.relu_pattern(cache["scan"]),
            self.meas_encoder.relu_pattern(cache["meas"]),
            self.trunk.relu_pattern(cache["trunk"]),
            self.speed_branch.relu_pattern(cache["speed"]),
        ]
        for i, (_, c) in sorted(cache["lat"].items()):
            parts.append(self.lateral_branches[i].relu_pattern(c))
        for i, (_, c) in sorted(cache["lon"].items()):
            parts.append(self.longitudinal_branches[i].relu_pattern(c))
        return b"".join(parts)

    # -- inference ------------------------------------------------------------

    def fuse_and_predict(self, obs: Observation) -> Tuple[EvidentialPrediction, float]:
        """NIG prediction for one observation plus the predicted speed (m/s)."""
        outputs, _ = self.forward(observation_batch(obs, self.config.beams))
        pred = outputs.prediction(0)
        return pred, pred.speed

    def predict(self, obs: Observation, state: Optional[TruckState] = None) -> EvidentialPrediction:
        return self.fuse_and_predict(obs)[0]

    def task_log_var(self) -> Dict[str, float]:
        return {c: float(s) for c, s in zip(CHANNELS, self.store.params[self.log_var])}


def save_checkpoint(path: Path, planner: FusionPlanner, meta: Optional[Dict[str, Any]] = None) -> Path:
    """Parameters, ADAM moments and a JSON metadata record in one ``.npz``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    store = planner.store
    arrays: Dict[str, np.ndarray] = {}
    for name in store.names():
        arrays[f"p/{name}"] = store.params[name]
        arrays[f"m/{name}"] = store.m[name]
        arrays[f"v/{name}"] = store.v[name]
    record = {
        "format": CHECKPOINT_FORMAT,
        "step": store.step,
        "seed": planner.seed,
        "model_config": planner.config.model_dump(mode="json"),
        "parameters": {name: list(store.params[name].shape) for name in store.names()},
    }
    record.update(meta or {})
    arrays["__meta__"] = np.array(json.dumps(record, sort_keys=True))
    with path.open("wb") as fh:
        np.savez_compressed(fh, **arrays)
    return path


def read_checkpoint_meta(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise InputMissingError(f"checkpoint not found: {path}", details={"path": str(path)})
    with np.load(path, allow_pickle=False) as data:
        return json.loads(str(data["__meta__"]))


def load_checkpoint(
    path: Path, expected_model_hash: Optional[str] = None, force: bool = False
) -> Tuple[FusionPlanner, Dict[str, Any]]:
    """Rebuild a planner from a checkpoint.

    Raises:
        InputMissingError: If the file does not exist
        ConfigMismatchError: If the checkpoint's model hash differs and ``force`` is not set
    """
    meta = read_checkpoint_meta(path)
    stored_hash = meta.get("model_hash")
    if expected_model_hash is not None and stored_hash != expected_model_hash:
        if not force:
            raise ConfigMismatchError(
                f"checkpoint {path} was trained under a different model configuration",
                details={"checkpoint": stored_hash, "current": expected_model_hash},
            )
        logger.warning(f"Loading {path} despite a model-hash mismatch (forced)")
    planner = FusionPlanner(ModelConfig(**meta["model_config"]), seed=meta.get("seed", 0))
    with np.load(path, allow_pickle=False) as data:
        params = {n: data[f"p/{n}"] for n in meta["parameters"]}
        m = {n: data[f"m/{n}"] for n in meta["parameters"]}
        v = {n: data[f"v/{n}"] for n in meta["parameters"]}
    planner.store.load(params, m, v, meta.get("step", 0))
    logger.info(f"Loaded checkpoint {path}", extra={"step": meta.get("step", 0)})
    return planner, meta
