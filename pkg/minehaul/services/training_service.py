"""Offline training of the FusionPlanner plus the task-uncertainty calibration run."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from minehaul.config import Settings, config_hash, model_hash
from minehaul.errors import InsufficientDataError, LossOverflowError, TrainingDivergenceError
from minehaul.neural.optim import adam_step, cosine_lr
from minehaul.neural.params import ParamStore
from minehaul.schemas.common import CHANNELS
from minehaul.schemas.driving import TrainingSample
from minehaul.schemas.prediction import LossBreakdown, ModelConfig, TaskUncertainty
from minehaul.services.objective_service import MultiTaskObjective, uncertainty_weighted
from minehaul.services.planner_service import Batch, FusionPlanner, make_batch, save_checkpoint

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "epoch",
    "step",
    "total",
    "mae",
    "nll",
    "reg",
    "log_sigma_term",
    "speed",
    "lr",
    "sigma_str",
    "sigma_acc",
    "sigma_dec_e",
    "sigma_dec_m",
]


def loss_and_grads(
    planner: FusionPlanner, batch: Batch, objective: MultiTaskObjective
) -> Tuple[LossBreakdown, Dict[str, Any]]:
    """One forward/backward pass; parameter gradients accumulate in the planner's store."""
    outputs, cache = planner.forward(batch)
    log_var = planner.store.params[planner.log_var]
    breakdown, grads = objective(
        outputs.gamma,
        outputs.nu,
        outputs.alpha,
        outputs.beta,
        batch.labels,
        log_var,
        outputs.speed,
        batch.speed,
    )
    planner.backward(grads, cache)
    planner.store.grads[planner.log_var] += grads["log_var"]
    return breakdown, cache


class Trainer:
    """Mini-batch ADAM with cosine decay over the whole run.

    Args:
        settings: Resolved settings (``training``, ``model``, ``data`` sections)
        out_dir: Directory for checkpoints and the loss trace
    """

    def __init__(self, settings: Settings, out_dir: Path):
        self.settings = settings
        self.out_dir = out_dir
        self.objective = MultiTaskObjective.from_settings(settings)
        self.planner = FusionPlanner(ModelConfig.from_settings(settings), seed=settings.seed)
        self.trace: List[Dict[str, float]] = []

    def _meta(self, epoch: int) -> Dict[str, Any]:
        return {
            "epoch": epoch,
            "config_hash": config_hash(self.settings),
            "model_hash": model_hash(self.settings),
            "task_log_var": self.planner.task_log_var(),
        }

    def _checkpoint(self, name: str, epoch: int) -> Path:
        return save_checkpoint(self.out_dir / name, self.planner, self._meta(epoch))

    def train(self, samples: Sequence[TrainingSample]) -> Path:
        """Train on ``samples``; returns the final checkpoint path.

        Raises:
            InsufficientDataError: If ``samples`` is empty
            TrainingDivergenceError: On a non-finite loss or gradient, naming the last good checkpoint
        """
        if not samples:
            raise InsufficientDataError("training set is empty")
        cfg = self.settings.training
        beams = self.planner.config.beams
        rng = np.random.default_rng(self.settings.seed)
        n = len(samples)
        per_epoch = int(np.ceil(n / cfg.batch_size))
        total_steps = per_epoch * cfg.epochs
        low, high = cfg.log_var_bounds
        last_good = self._checkpoint("checkpoint_init.npz", 0)
        store = self.planner.store
        step = 0
        logger.info(f"Training on {n} samples for {cfg.epochs} epochs ({total_steps} steps)")
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            sums: Dict[str, float] = {k: 0.0 for k in ("total", "mae", "nll", "reg", "log_sigma_term", "speed")}
            lr = cfg.lr0
            for b in range(per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                batch = make_batch([samples[i] for i in idx], beams)
                try:
                    breakdown, _ = loss_and_grads(self.planner, batch, self.objective)
                    lr = cosine_lr(step, max(total_steps - 1, 0), cfg.lr0)
                    adam_step(store, lr, cfg.beta1, cfg.beta2, cfg.eps)
                except (LossOverflowError, TrainingDivergenceError) as e:
                    store.zero_grad()
                    raise TrainingDivergenceError(
                        f"training diverged at epoch {epoch}, step {step}: {e.message}",
                        last_checkpoint=str(last_good),
                    ) from e
                np.clip(store.params[self.planner.log_var], low, high, out=store.params[self.planner.log_var])
                step += 1
                sums["total"] += breakdown.total
                sums["mae"] += breakdown.mae_sum
                sums["nll"] += breakdown.nll_sum
                sums["reg"] += breakdown.reg_sum
                sums["log_sigma_term"] += breakdown.log_sigma_term
                sums["speed"] += breakdown.speed
            row: Dict[str, float] = {"epoch": epoch, "step": step}
            row.update({k: v / per_epoch for k, v in sums.items()})
            row["lr"] = lr
            sigma = TaskUncertainty(log_var=self.planner.task_log_var()).sigma
            row.update({f"sigma_{c}": sigma[c] for c in CHANNELS})
            self.trace.append(row)
            logger.info(
                f"Epoch {epoch}/{cfg.epochs}: loss {row['total']:.4f}",
                extra={"epoch": epoch, "mae": row["mae"], "nll": row["nll"], "lr": lr},
            )
            if epoch % cfg.checkpoint_every == 0:
                last_good = self._checkpoint(f"checkpoint_epoch{epoch:04d}.npz", epoch)
        self.write_trace()
        return self._checkpoint("checkpoint_final.npz", cfg.epochs)

    def write_trace(self) -> Path:
        path = self.out_dir / "loss_trace.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.trace, columns=TRACE_COLUMNS).to_csv(path, index=False, float_format="%.10g")
        return path


def train(samples: Sequence[TrainingSample], settings: Settings, out_dir: Path) -> Tuple[Path, List[Dict[str, float]]]:
    """Checkpoint path and per-epoch loss trace."""
    trainer = Trainer(settings, out_dir)
    final = trainer.train(samples)
    return final, trainer.trace


def calibrate_task_uncertainty(
    seed: int = 0,
    noise: Sequence[float] = (0.01, 0.3),
    features: int = 8,
    steps: int = 1500,
    batch_size: int = 64,
    lr: float = 0.05,
    log_var_bounds: Tuple[float, float] = (-10.0, 15.0),
) -> TaskUncertainty:
    """Fit one linear regressor per task under learned uncertainty weighting.

    Each task regresses a random linear target corrupted by Gaussian noise of
    its own level; the learned sigma of each task tracks its residual noise.
    Log-variances are keyed ``task0``, ``task1``, ...
    """
    rng = np.random.default_rng(seed)
    tasks = len(noise)
    true_w = rng.normal(size=(tasks, features))
    store = ParamStore()
    w = store.add("w", np.zeros((tasks, features)))
    s = store.add("log_var", np.zeros(tasks))
    for step in range(steps):
        x = rng.normal(size=(batch_size, features))
        y = x @ true_w.T + rng.normal(size=(batch_size, tasks)) * np.asarray(noise)
        r = x @ store.params[w].T - y
        mse = np.mean(r * r, axis=0)
        _, d_loss, d_s = uncertainty_weighted(mse, store.params[s])
        store.grads[w] += (2.0 / batch_size) * (r * d_loss).T @ x
        store.grads[s] += d_s
        adam_step(store, cosine_lr(step, steps - 1, lr))
        np.clip(store.params[s], *log_var_bounds, out=store.params[s])
    return TaskUncertainty(log_var={f"task{i}": float(v) for i, v in enumerate(store.params[s])})
