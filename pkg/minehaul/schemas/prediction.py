"""Planner output and loss schemas."""

from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from minehaul.schemas.common import CHANNELS, ArrayModel, ControlCommand, FloatArray


class ModelConfig(BaseModel):
    """Shape description of a planner; embedded in every checkpoint."""

    model_config = ConfigDict(frozen=True)

    beams: int = Field(108, ge=8)
    k: int = Field(5, ge=1)
    scan_hidden: Tuple[int, ...] = (256, 256)
    meas_hidden: Tuple[int, ...] = (512, 512, 256)
    fusion_hidden: Tuple[int, ...] = (256, 256)
    speed_hidden: int = 64
    branch_hidden: int = 128
    n_lateral: int = 3
    n_longitudinal: int = 3

    @model_validator(mode="after")
    def _trunk_sizes(self) -> "ModelConfig":
        if any(w <= 0 for w in self.scan_hidden + self.meas_hidden + self.fusion_hidden):
            raise ValueError("layer widths must be positive")
        return self

    @property
    def fusion_input(self) -> int:
        return self.scan_hidden[-1] + self.meas_hidden[-1]

    @classmethod
    def from_settings(cls, settings) -> "ModelConfig":
        return cls(
            beams=settings.sensors.beams,
            k=settings.data.k_lookahead,
            scan_hidden=settings.model.scan_hidden,
            meas_hidden=settings.model.meas_hidden,
            fusion_hidden=settings.model.fusion_hidden,
            speed_hidden=settings.model.speed_hidden,
            branch_hidden=settings.model.branch_hidden,
        )


class EvidentialPrediction(ArrayModel):
    """Normal-Inverse-Gamma parameters per channel and lookahead.

    Every array has shape (4, K) in channel order str, acc, dec_e, dec_m.
    """

    gamma: FloatArray
    nu: FloatArray
    alpha: FloatArray
    beta: FloatArray
    speed: float = 0.0

    @model_validator(mode="after")
    def _shapes(self) -> "EvidentialPrediction":
        shape = self.gamma.shape
        if len(shape) != 2 or shape[0] != len(CHANNELS):
            raise ValueError("prediction arrays must have shape (4, K)")
        if not (self.nu.shape == self.alpha.shape == self.beta.shape == shape):
            raise ValueError("prediction arrays must share one shape")
        return self

    @property
    def k(self) -> int:
        return int(self.gamma.shape[1])

    def variance(self) -> np.ndarray:
        """Epistemic variance beta / (nu (alpha - 1))."""
        return self.beta / (self.nu * (self.alpha - 1.0))

    def command(self, k: int = 0) -> ControlCommand:
        return ControlCommand.from_array(self.gamma[:, k])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.gamma, self.nu, self.alpha, self.beta))

    def satisfies_invariants(self) -> bool:
        if not self.is_finite():
            return False
        steer_ok = np.all(np.abs(self.gamma[0]) <= 1.0)
        long_ok = np.all((self.gamma[1:] >= 0.0) & (self.gamma[1:] <= 1.0))
        var = self.variance()
        return bool(
            steer_ok
            and long_ok
            and np.all(self.nu > 0)
            and np.all(self.beta > 0)
            and np.all(self.alpha > 1)
            and np.all(np.isfinite(var))
            and np.all(var > 0)
        )


class TaskUncertainty(BaseModel):
    """Learned log-variances s = log sigma^2 per command channel."""

    model_config = ConfigDict(frozen=True)

    log_var: Dict[str, float] = Field(default_factory=lambda: {c: 0.0 for c in CHANNELS})

    @property
    def sigma(self) -> Dict[str, float]:
        return {c: float(np.exp(0.5 * s)) for c, s in self.log_var.items()}

    def as_array(self) -> np.ndarray:
        return np.array([self.log_var[c] for c in CHANNELS])


class LossBreakdown(BaseModel):
    """Components of one multitask loss evaluation (batch means)."""

    model_config = ConfigDict(frozen=True)

    mae: Dict[str, float]
    nll: Dict[str, float]
    reg: Dict[str, float]
    task_total: Dict[str, float] = Field(..., description="Boost-weighted per-task loss")
    weighted: Dict[str, float] = Field(..., description="exp(-s)/T times the per-task loss")
    log_sigma_term: float
    speed: float
    total: float

    def composed_total(self) -> float:
        return sum(self.weighted.values()) + self.log_sigma_term + self.speed

    @property
    def mae_sum(self) -> float:
        return sum(self.mae.values())

    @property
    def nll_sum(self) -> float:
        return sum(self.nll.values())

    @property
    def reg_sum(self) -> float:
        return sum(self.reg.values())


class GradientCheckResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    probes: int
    max_rel_error: float
    passed: bool
    skipped: int = 0


class GradientCheckReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    tolerance: float
    results: List[GradientCheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)
