"""Central finite-difference gradient checking."""

import logging
from typing import Callable, Dict, Hashable, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def relative_error(analytic: float, numeric: float, scale: float) -> float:
    """|a - n| relative to the larger magnitude, floored by the loss scale.

    Gradient components far below the loss's own round-off level cannot be
    resolved by finite differences, hence the floor.
    """
    denom = max(abs(analytic), abs(numeric), 1e-6 * max(1.0, abs(scale)))
    return abs(analytic - numeric) / denom


def check_gradients(
    loss_fn: Callable[[], float],
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    rng: np.random.Generator,
    n_probes: int = 64,
    h: float = 1e-5,
    signature: Optional[Callable[[], Hashable]] = None,
    max_redraws: int = 20,
) -> Tuple[float, int, int]:
    """Compare analytic gradients with central differences on random entries.

    ``loss_fn`` must read the arrays in ``params`` (they are perturbed in
    place and restored). ``signature`` optionally returns the piecewise
    regime of the loss (ReLU masks, residual signs); a probe whose
    perturbation changes the regime straddles a kink and is redrawn. A probe
    still straddling one after ``max_redraws`` redraws is skipped.

    Args:
        loss_fn: Scalar loss evaluated at the current parameter values
        params: Arrays to probe, by name
        grads: Analytic gradients, same names and shapes
        rng: Generator selecting probe locations
        n_probes: Number of probes
        h: Finite-difference step
        signature: Optional kink-regime fingerprint
        max_redraws: Redraw budget per probe

    Returns:
        (max relative error, probes evaluated, probes skipped)
    """
    names = [n for n in params if params[n].size > 0]
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    weights = sizes / sizes.sum()
    f0 = loss_fn()
    base_sig = signature() if signature is not None else None
    worst = 0.0
    evaluated = 0
    skipped = 0
    for _ in range(n_probes):
        for _attempt in range(max_redraws + 1):
            name = names[int(rng.choice(len(names), p=weights))]
            flat = params[name].reshape(-1)
            idx = int(rng.integers(flat.size))
            original = flat[idx]
            flat[idx] = original + h
            f_plus = loss_fn()
            sig_plus = signature() if signature is not None else None
            flat[idx] = original - h
            f_minus = loss_fn()
            sig_minus = signature() if signature is not None else None
            flat[idx] = original
            if signature is None or (sig_plus == base_sig and sig_minus == base_sig):
                break
        else:
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(grads[name].reshape(-1)[idx])
        err = relative_error(analytic, numeric, f0)
        if err > worst:
            logger.debug(f"probe {name}[{idx}]: analytic={analytic:.6e} numeric={numeric:.6e}")
        worst = max(worst, err)
        evaluated += 1
    if skipped:
        logger.debug(f"{skipped} of {n_probes} probes skipped at ReLU kinks")
    return worst, evaluated, skipped
