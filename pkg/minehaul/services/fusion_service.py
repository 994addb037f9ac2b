"""Distance-binned fusion of lookahead predictions.

Each inference stores its K lookahead commands in the 1 m odometer bins they
refer to, together with their inverse epistemic variance. When the truck
enters a bin, the stored commands for that bin are fused: instantaneous uses
the freshest prediction only, uniform averages the bin, evidential weights the
bin by confidence.
"""

import logging
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from minehaul.errors import ParameterDomainError
from minehaul.schemas.common import CHANNEL_HIGH, CHANNEL_LOW, ControlCommand, FusionMode
from minehaul.schemas.prediction import EvidentialPrediction

logger = logging.getLogger(__name__)


def confidence(pred: EvidentialPrediction) -> np.ndarray:
    """lambda = 1 / Var = nu (alpha - 1) / beta, shape (4, K).

    Raises:
        ParameterDomainError: If any alpha <= 1 or nu, beta <= 0
    """
    if np.any(pred.alpha <= 1.0) or np.any(pred.nu <= 0.0) or np.any(pred.beta <= 0.0):
        raise ParameterDomainError("prediction has alpha <= 1 or non-positive nu/beta; variance undefined")
    return 1.0 / pred.variance()


class FusionBuffer:
    """Bins keyed by integer odometer metre.

    Every bin holds a list of (commands, confidences) pairs, one per
    contributing prediction, each an array over the four channels.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("lookahead count must be at least 1")
        self.k = k
        self.bins: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
        self.reads = 0
        self.ingests = 0

    def __len__(self) -> int:
        return len(self.bins)

    def entries(self, d: int) -> List[Tuple[np.ndarray, np.ndarray]]:
        return self.bins.get(d, [])

    def evict(self, current: int) -> None:
        for d in [d for d in self.bins if d < current]:
            del self.bins[d]

    def clear(self) -> None:
        self.bins.clear()

    def ingest(self, s: float, pred: EvidentialPrediction) -> "FusionBuffer":
        """Store prediction ``pred`` made at odometer ``s``.

        Raises:
            ParameterDomainError: If the prediction's variance is undefined
            ValueError: If the prediction's K differs from the buffer's
        """
        if pred.k != self.k:
            raise ValueError(f"buffer holds K={self.k}, prediction has K={pred.k}")
        lam = confidence(pred)
        base = math.floor(s)
        self.evict(base)
        for k in range(self.k):
            self.bins.setdefault(base + k, []).append((pred.gamma[:, k].copy(), lam[:, k].copy()))
        self.ingests += 1
        return self

    def fuse(self, d: int, mode: FusionMode, latest: EvidentialPrediction) -> ControlCommand:
        """Command for bin ``d``, clamped to the channel ranges."""
        mode = FusionMode(mode)
        if mode is FusionMode.INSTANTANEOUS:
            return _clamped(latest.gamma[:, 0])
        self.reads += 1
        entries = self.bins.get(d)
        if not entries:
            return _clamped(latest.gamma[:, 0])
        values = np.stack([v for v, _ in entries])
        if mode is FusionMode.UNIFORM:
            return _clamped(values.mean(axis=0))
        weights = np.stack([w for _, w in entries])
        return _clamped((values * weights).sum(axis=0) / weights.sum(axis=0))


def _clamped(values: np.ndarray) -> ControlCommand:
    return ControlCommand.from_array(np.clip(values, CHANNEL_LOW, CHANNEL_HIGH))


def ingest(buffer: FusionBuffer, s: float, pred: EvidentialPrediction) -> FusionBuffer:
    return buffer.ingest(s, pred)


def fuse(
    buffer: FusionBuffer, d: int, mode: FusionMode, latest: Optional[EvidentialPrediction]
) -> ControlCommand:
    if latest is None:
        raise ValueError("fusion needs at least one prediction")
    return buffer.fuse(d, mode, latest)
