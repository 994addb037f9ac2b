"""Finite-difference gradient-check suite.

Each case builds a small random problem, computes its analytic gradient once
and compares it with central differences on random entries. Piecewise-linear
terms (ReLU, absolute error) pass a regime signature so probes that straddle
a kink are redrawn.
"""

import logging
import time
from typing import Callable, Dict, Hashable, List, Optional, Tuple

import numpy as np

from minehaul.errors import GradientCheckError
from minehaul.neural.gradcheck import check_gradients
from minehaul.neural.layers import MLP, Dense, activate, activate_grad
from minehaul.neural.params import ParamStore
from minehaul.schemas.common import CHANNEL_HIGH, CHANNEL_LOW, CHANNELS
from minehaul.schemas.prediction import GradientCheckReport, GradientCheckResult, ModelConfig
from minehaul.services.objective_service import (
    MultiTaskObjective,
    boost_factor,
    evidence_regularizer,
    evidence_regularizer_grads,
    evidential_nll,
    evidential_nll_grads,
    uncertainty_weighted,
)
from minehaul.services.planner_service import Batch, FusionPlanner
from minehaul.services.training_service import loss_and_grads

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4

CaseResult = Tuple[Callable[[], float], Dict[str, np.ndarray], Dict[str, np.ndarray], Optional[Callable[[], Hashable]]]


def _nig_params(rng: np.random.Generator, shape) -> Dict[str, np.ndarray]:
    return {
        "gamma": rng.uniform(-1.0, 1.0, shape),
        "nu": rng.uniform(0.2, 3.0, shape),
        "alpha": rng.uniform(1.2, 4.0, shape),
        "beta": rng.uniform(0.2, 3.0, shape),
    }


def _dense_case(rng: np.random.Generator) -> CaseResult:
    store = ParamStore()
    layer = Dense(store, "dense", 5, 4, rng)
    x = {"x": rng.normal(size=(3, 5))}
    c = rng.normal(size=(3, 4))

    def loss() -> float:
        return float(np.sum(c * layer.forward(x["x"])[0]))

    _, cache = layer.forward(x["x"])
    dx = layer.backward(c, cache)
    params = dict(store.params, **x)
    grads = dict(store.grads, x=dx)
    return loss, params, grads, None


def _activation_case(kind: str) -> Callable[[np.random.Generator], CaseResult]:
    def build(rng: np.random.Generator) -> CaseResult:
        params = {"x": rng.normal(size=(4, 6))}
        c = rng.normal(size=(4, 6))

        def loss() -> float:
            return float(np.sum(c * activate(kind, params["x"])))

        grads = {"x": c * activate_grad(kind, params["x"])}
        signature = (lambda: (params["x"] > 0.0).tobytes()) if kind == "relu" else None
        return loss, params, grads, signature

    return build


def _mlp_case(rng: np.random.Generator) -> CaseResult:
    store = ParamStore()
    net = MLP(store, "mlp", [6, 8, 8, 3], rng, final_activation="identity")
    x = rng.normal(size=(5, 6))
    c = rng.normal(size=(5, 3))

    def loss() -> float:
        return float(np.sum(c * net.forward(x)[0]))

    def signature() -> bytes:
        return net.relu_pattern(net.forward(x)[1])

    _, caches = net.forward(x)
    net.backward(c, caches)
    return loss, store.params, dict(store.grads), signature


def _nll_case(rng: np.random.Generator) -> CaseResult:
    params = _nig_params(rng, (16,))
    y = rng.uniform(-1.5, 1.5, 16)
    c = rng.uniform(0.5, 1.5, 16)

    def loss() -> float:
        return float(np.sum(c * evidential_nll(y, **params)))

    g = evidential_nll_grads(y, **params)
    grads = {name: c * d for name, d in zip(("gamma", "nu", "alpha", "beta"), g)}
    return loss, params, grads, None


def _regularizer_case(variant: str) -> Callable[[np.random.Generator], CaseResult]:
    def build(rng: np.random.Generator) -> CaseResult:
        params = {k: v for k, v in _nig_params(rng, (16,)).items() if k != "beta"}
        y = rng.uniform(-1.0, 1.0, 16)

        def loss() -> float:
            return float(np.sum(evidence_regularizer(y, params["gamma"], params["nu"], params["alpha"], variant)))

        d_gamma, d_nu, d_alpha = evidence_regularizer_grads(y, params["gamma"], params["nu"], params["alpha"], variant)
        grads = {"gamma": d_gamma, "nu": d_nu, "alpha": d_alpha}
        return loss, params, grads, lambda: np.sign(y - params["gamma"]).tobytes()

    return build


def _boosted_mae_case(rng: np.random.Generator, alpha_scale: float = 1500.0) -> CaseResult:
    y = rng.uniform(-0.3, 0.3, 16)
    params = {"gamma": rng.uniform(-1.0, 1.0, 16)}
    boost = boost_factor(y)

    def loss() -> float:
        return float(np.sum(boost * alpha_scale * np.abs(y - params["gamma"])))

    grads = {"gamma": -boost * alpha_scale * np.sign(y - params["gamma"])}
    return loss, params, grads, lambda: np.sign(y - params["gamma"]).tobytes()


def _labels(rng: np.random.Generator, batch: int, k: int) -> np.ndarray:
    low, high = CHANNEL_LOW[None, :, None], CHANNEL_HIGH[None, :, None]
    return low + (high - low) * rng.uniform(size=(batch, len(CHANNELS), k))


def _uncertainty_case(rng: np.random.Generator) -> CaseResult:
    params = {"losses": rng.uniform(0.1, 5.0, 4), "log_var": rng.uniform(-2.0, 2.0, 4)}

    def loss() -> float:
        return uncertainty_weighted(params["losses"], params["log_var"])[0]

    _, d_losses, d_log_var = uncertainty_weighted(params["losses"], params["log_var"])
    return loss, params, {"losses": d_losses, "log_var": d_log_var}, None


def _multitask_case(rng: np.random.Generator, only_speed: bool = False) -> CaseResult:
    batch, k = 3, 3
    objective = MultiTaskObjective()
    labels = _labels(rng, batch, k)
    speed_target = rng.uniform(0.0, 1.0, batch)
    nig = _nig_params(rng, (batch, len(CHANNELS), k))
    params = dict(nig, log_var=rng.uniform(-1.0, 1.0, len(CHANNELS)), speed=rng.uniform(0.0, 1.0, batch))

    def evaluate():
        return objective(
            params["gamma"],
            params["nu"],
            params["alpha"],
            params["beta"],
            labels,
            params["log_var"],
            params["speed"],
            speed_target,
        )

    def loss() -> float:
        return evaluate()[0].total

    def signature() -> bytes:
        return np.sign(labels - params["gamma"]).tobytes() + np.sign(params["speed"] - speed_target).tobytes()

    _, grads = evaluate()
    if only_speed:
        return loss, {"speed": params["speed"]}, {"speed": grads["speed"]}, signature
    return loss, params, grads, signature


def _planner_case(rng: np.random.Generator) -> CaseResult:
    config = ModelConfig(
        beams=8,
        k=3,
        scan_hidden=(10,),
        meas_hidden=(6,),
        fusion_hidden=(12,),
        speed_hidden=5,
        branch_hidden=7,
    )
    planner = FusionPlanner(config, seed=int(rng.integers(2**31)))
    planner.store.params[planner.log_var][:] = rng.uniform(-0.5, 0.5, len(CHANNELS))
    n = 9
    valid = rng.uniform(size=(n, config.beams)) > 0.2
    batch = Batch(
        scan=np.concatenate([np.where(valid, rng.uniform(0.05, 1.0, (n, config.beams)), 1.0), valid], axis=1),
        meas=np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), np.ones(n), rng.uniform(0, 1, n)]),
        lateral=np.arange(n) % 3,
        longitudinal=(np.arange(n) // 3) % 3,
        labels=_labels(rng, n, config.k),
        speed=rng.uniform(0.0, 1.0, n),
    )
    objective = MultiTaskObjective(alpha_scale=1.0)

    def loss() -> float:
        outputs, _ = planner.forward(batch)
        breakdown, _ = objective(
            outputs.gamma,
            outputs.nu,
            outputs.alpha,
            outputs.beta,
            batch.labels,
            planner.store.params[planner.log_var],
            outputs.speed,
            batch.speed,
        )
        return breakdown.total

    def signature() -> bytes:
        outputs, cache = planner.forward(batch)
        return (
            planner.relu_signature(cache)
            + np.sign(batch.labels - outputs.gamma).tobytes()
            + np.sign(outputs.speed - batch.speed).tobytes()
        )

    planner.store.zero_grad()
    loss_and_grads(planner, batch, objective)
    grads = {name: g.copy() for name, g in planner.store.grads.items()}
    return loss, planner.store.params, grads, signature


CASES: Dict[str, Callable[[np.random.Generator], CaseResult]] = {
    "dense": _dense_case,
    "relu": _activation_case("relu"),
    "tanh": _activation_case("tanh"),
    "sigmoid": _activation_case("sigmoid"),
    "softplus": _activation_case("softplus"),
    "mlp": _mlp_case,
    "evidential_nll": _nll_case,
    "evidence_regularizer": _regularizer_case("alpha_weighted"),
    "evidence_regularizer_standard": _regularizer_case("standard"),
    "boosted_mae": _boosted_mae_case,
    "uncertainty_weighting": _uncertainty_case,
    "multitask_total": _multitask_case,
    "speed_term": lambda rng: _multitask_case(rng, only_speed=True),
    "fusion_planner": _planner_case,
}


def run_gradcheck(
    seed: int = 0,
    n_probes: int = 64,
    tolerance: float = DEFAULT_TOLERANCE,
    cases: Optional[List[str]] = None,
) -> GradientCheckReport:
    """Run the suite (or the named ``cases``) and collect one result per case.

    Raises:
        ValueError: If an unknown case is requested
    """
    names = cases or list(CASES)
    unknown = [n for n in names if n not in CASES]
    if unknown:
        raise ValueError(f"unknown gradient-check cases: {unknown}")
    results = []
    started = time.perf_counter()
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        loss, params, grads, signature = CASES[name](rng)
        worst, probes, skipped = check_gradients(loss, params, grads, rng, n_probes=n_probes, signature=signature)
        passed = worst < tolerance
        results.append(
            GradientCheckResult(name=name, probes=probes, max_rel_error=worst, passed=passed, skipped=skipped)
        )
        log = logger.info if passed else logger.error
        log(
            f"Gradient check {name}: max relative error {worst:.2e}",
            extra={"probes": probes, "skipped": skipped, "passed": passed},
        )
    logger.info(f"Gradient-check suite finished in {time.perf_counter() - started:.1f} s")
    return GradientCheckReport(tolerance=tolerance, results=results)


def require_passing(report: GradientCheckReport) -> GradientCheckReport:
    """Raises:
    GradientCheckError: If any case exceeds the tolerance
    """
    failed = [r.name for r in report.results if not r.passed]
    if failed:
        raise GradientCheckError(
            f"gradient check failed for {', '.join(failed)}",
            details={r.name: r.max_rel_error for r in report.results if not r.passed},
        )
    return report
