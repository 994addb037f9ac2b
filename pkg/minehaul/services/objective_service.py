"""Training objectives.

Per command channel and lookahead the planner is scored by a boosted sum of a
scaled absolute error, the Normal-Inverse-Gamma negative log-likelihood and an
evidence regularizer. Channel totals are combined with learned log-variances
s = log sigma^2: (1/T) sum exp(-s_t) L_t + (1/T) sum s_t. A speed-branch
absolute error is added on top.

Every loss here comes with its analytic gradient.
"""

import logging
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from minehaul.errors import LossOverflowError, ParameterDomainError
from minehaul.neural.special import digamma, log_gamma
from minehaul.schemas.common import CHANNELS
from minehaul.schemas.prediction import LossBreakdown

logger = logging.getLogger(__name__)

RegularizerVariant = Literal["alpha_weighted", "standard"]

LOG_PI = float(np.log(np.pi))


def _check_domain(nu: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> None:
    if np.any(~(nu > 0.0)) or np.any(~(alpha > 1.0)) or np.any(~(beta > 0.0)):
        raise ParameterDomainError("evidential parameters need nu > 0, alpha > 1, beta > 0")


def evidential_nll(y, gamma, nu, alpha, beta):
    """Negative log marginal likelihood of y under NIG(gamma, nu, alpha, beta).

    Equal to -log of a Student-t density with 2 alpha degrees of freedom,
    location gamma and scale sqrt(beta (1 + nu) / (nu alpha)).

    Raises:
        ParameterDomainError: If nu <= 0, alpha <= 1 or beta <= 0
    """
    y, gamma, nu, alpha, beta = (np.asarray(a, dtype=np.float64) for a in (y, gamma, nu, alpha, beta))
    _check_domain(nu, alpha, beta)
    omega = 2.0 * beta * (1.0 + nu)
    value = (
        0.5 * (LOG_PI - np.log(nu))
        - alpha * np.log(omega)
        + (alpha + 0.5) * np.log((y - gamma) ** 2 * nu + omega)
        + log_gamma(alpha)
        - log_gamma(alpha + 0.5)
    )
    return float(value) if np.ndim(value) == 0 else value


def evidential_nll_grads(y, gamma, nu, alpha, beta) -> Tuple[np.ndarray, ...]:
    """(d/dgamma, d/dnu, d/dalpha, d/dbeta) of ``evidential_nll``."""
    y, gamma, nu, alpha, beta = (np.asarray(a, dtype=np.float64) for a in (y, gamma, nu, alpha, beta))
    _check_domain(nu, alpha, beta)
    r = y - gamma
    omega = 2.0 * beta * (1.0 + nu)
    d = r * r * nu + omega
    a_half = alpha + 0.5
    d_gamma = -a_half * 2.0 * r * nu / d
    d_nu = -0.5 / nu - alpha * 2.0 * beta / omega + a_half * (r * r + 2.0 * beta) / d
    d_alpha = -np.log(omega) + np.log(d) + digamma(alpha) - digamma(a_half)
    d_beta = -alpha / beta + a_half * 2.0 * (1.0 + nu) / d
    return d_gamma, d_nu, d_alpha, d_beta


def _regularizer_weights(variant: RegularizerVariant) -> Tuple[float, float]:
    """(coefficient of alpha, coefficient of nu)."""
    if variant == "alpha_weighted":
        return 2.0, 1.0
    if variant == "standard":
        return 1.0, 2.0
    raise ValueError(f"unknown regularizer variant '{variant}'")


def evidence_regularizer(y, gamma, nu, alpha, variant: RegularizerVariant = "alpha_weighted"):
    """|y - gamma| (2 alpha + nu), or |y - gamma| (2 nu + alpha) for the standard variant."""
    c_alpha, c_nu = _regularizer_weights(variant)
    value = np.abs(np.asarray(y) - np.asarray(gamma)) * (c_alpha * np.asarray(alpha) + c_nu * np.asarray(nu))
    return float(value) if np.ndim(value) == 0 else value


def evidence_regularizer_grads(y, gamma, nu, alpha, variant: RegularizerVariant = "alpha_weighted"):
    """(d/dgamma, d/dnu, d/dalpha); the gamma derivative is 0 at y = gamma."""
    c_alpha, c_nu = _regularizer_weights(variant)
    r = np.asarray(y, dtype=np.float64) - np.asarray(gamma, dtype=np.float64)
    coef = c_alpha * np.asarray(alpha) + c_nu * np.asarray(nu)
    return -np.sign(r) * coef, c_nu * np.abs(r), c_alpha * np.abs(r)


def boost_factor(y, sigma: float = 1.0 / 15.0):
    """1 + exp(-y^2 / (2 sigma^2)): small commands weigh up to twice as much."""
    value = 1.0 + np.exp(-np.square(y) / (2.0 * sigma * sigma))
    return float(value) if np.ndim(value) == 0 else value


def uncertainty_weighted(losses: np.ndarray, log_var: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """(1/T) sum exp(-s) L + (1/T) sum s, with gradients w.r.t. L and s."""
    losses = np.asarray(losses, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    t = len(losses)
    precision = np.exp(-log_var) / t
    total = float(np.sum(precision * losses) + np.sum(log_var) / t)
    return total, precision, 1.0 / t - precision * losses


def gaussian_task_objective(residual_sq: np.ndarray, log_var: np.ndarray) -> float:
    """sum r^2 / (2 sigma^2) + log sigma, the two-task Gaussian form; minimized at sigma^2 = r^2."""
    residual_sq = np.asarray(residual_sq, dtype=np.float64)
    log_var = np.asarray(log_var, dtype=np.float64)
    return float(np.sum(residual_sq / (2.0 * np.exp(log_var)) + 0.5 * log_var))


def _finite(term: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise LossOverflowError(term)


class MultiTaskObjective:
    """Four-channel evidential objective with learned task log-variances.

    Args:
        alpha_scale: Weight of the absolute-error term
        boost_sigma: Width of the small-command boost
        lambda_speed: Weight of the speed-branch absolute error
        variant: Evidence regularizer form
        evidential: Include the NLL and regularizer terms
    """

    def __init__(
        self,
        alpha_scale: float = 1500.0,
        boost_sigma: float = 1.0 / 15.0,
        lambda_speed: float = 0.1,
        variant: RegularizerVariant = "alpha_weighted",
        evidential: bool = True,
    ):
        self.alpha_scale = alpha_scale
        self.boost_sigma = boost_sigma
        self.lambda_speed = lambda_speed
        self.variant = variant
        self.evidential = evidential

    @classmethod
    def from_settings(cls, settings) -> "MultiTaskObjective":
        t = settings.training
        return cls(t.alpha_scale, t.boost_sigma, t.lambda_speed, t.l_r_variant, t.evidential)

    def __call__(
        self,
        gamma: np.ndarray,
        nu: np.ndarray,
        alpha: np.ndarray,
        beta: np.ndarray,
        labels: np.ndarray,
        log_var: np.ndarray,
        speed_pred: Optional[np.ndarray] = None,
        speed_target: Optional[np.ndarray] = None,
    ) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
        """Loss breakdown and gradients.

        All NIG arrays and ``labels`` have shape (B, 4, K); ``log_var`` has
        shape (4,). Gradients are returned for ``gamma``, ``nu``, ``alpha``,
        ``beta``, ``log_var`` and ``speed``.

        Raises:
            LossOverflowError: If any term is non-finite, naming the term
            ValueError: If shapes disagree
        """
        if not (gamma.shape == nu.shape == alpha.shape == beta.shape == labels.shape):
            raise ValueError("prediction and label shapes must agree")
        if gamma.ndim != 3 or gamma.shape[1] != len(CHANNELS) or log_var.shape != (len(CHANNELS),):
            raise ValueError("expected (B, 4, K) predictions and 4 log-variances")
        n = gamma.shape[0]
        boost = boost_factor(labels, self.boost_sigma)
        r = labels - gamma

        mae = self.alpha_scale * np.abs(r)
        _finite("mae", mae)
        if self.evidential:
            nll = evidential_nll(labels, gamma, nu, alpha, beta)
            reg = evidence_regularizer(labels, gamma, nu, alpha, self.variant)
        else:
            nll = np.zeros_like(gamma)
            reg = np.zeros_like(gamma)
        for ch, name in enumerate(CHANNELS):
            _finite(f"nll[{name}]", nll[:, ch])
            _finite(f"reg[{name}]", reg[:, ch])

        # Per-channel batch means of boosted sums over the horizon.
        mae_t = (boost * mae).sum(axis=2).mean(axis=0)
        nll_t = (boost * nll).sum(axis=2).mean(axis=0)
        reg_t = (boost * reg).sum(axis=2).mean(axis=0)
        task = mae_t + nll_t + reg_t
        _finite("task_total", task)
        _, d_task, d_log_var = uncertainty_weighted(task, log_var)
        log_sigma_term = float(np.sum(log_var) / len(CHANNELS))
        weighted = np.exp(-log_var) / len(CHANNELS) * task

        speed_loss = 0.0
        d_speed = None
        if speed_pred is not None and speed_target is not None:
            diff = speed_pred - speed_target
            speed_loss = float(self.lambda_speed * np.mean(np.abs(diff)))
            d_speed = self.lambda_speed * np.sign(diff) / n
            _finite("speed", speed_loss)
        # Same summation order as LossBreakdown.composed_total.
        total = sum(float(w) for w in weighted) + log_sigma_term + speed_loss
        _finite("total", total)

        # dL/d(per-element) = d_task[ch] / n * boost * d(term).
        scale = d_task[None, :, None] / n * boost
        d_gamma = scale * (-self.alpha_scale * np.sign(r))
        d_nu = np.zeros_like(nu)
        d_alpha = np.zeros_like(alpha)
        d_beta = np.zeros_like(beta)
        if self.evidential:
            g_gamma, g_nu, g_alpha, g_beta = evidential_nll_grads(labels, gamma, nu, alpha, beta)
            rg_gamma, rg_nu, rg_alpha = evidence_regularizer_grads(labels, gamma, nu, alpha, self.variant)
            d_gamma = d_gamma + scale * (g_gamma + rg_gamma)
            d_nu = scale * (g_nu + rg_nu)
            d_alpha = scale * (g_alpha + rg_alpha)
            d_beta = scale * g_beta

        breakdown = LossBreakdown(
            mae={c: float(v) for c, v in zip(CHANNELS, mae_t)},
            nll={c: float(v) for c, v in zip(CHANNELS, nll_t)},
            reg={c: float(v) for c, v in zip(CHANNELS, reg_t)},
            task_total={c: float(v) for c, v in zip(CHANNELS, task)},
            weighted={c: float(v) for c, v in zip(CHANNELS, weighted)},
            log_sigma_term=log_sigma_term,
            speed=speed_loss,
            total=total,
        )
        grads = {
            "gamma": d_gamma,
            "nu": d_nu,
            "alpha": d_alpha,
            "beta": d_beta,
            "log_var": d_log_var,
            "speed": d_speed if d_speed is not None else np.zeros(n),
        }
        return breakdown, grads


def multitask_total_loss(
    gamma: np.ndarray,
    nu: np.ndarray,
    alpha: np.ndarray,
    beta: np.ndarray,
    labels: np.ndarray,
    log_var: np.ndarray,
    speed_pred: Optional[np.ndarray] = None,
    speed_target: Optional[np.ndarray] = None,
    objective: Optional[MultiTaskObjective] = None,
) -> LossBreakdown:
    """Loss breakdown only; see ``MultiTaskObjective`` for gradients."""
    objective = objective or MultiTaskObjective()
    breakdown, _ = objective(gamma, nu, alpha, beta, labels, log_var, speed_pred, speed_target)
    return breakdown
