"""Clipped-surrogate objective with an entropy or complexity bonus, and the update loop.

The objective is maximised:

    mean(clip term) - c_vf * value loss + c_reg * mean(regularizer)

With ``RegularizerKind.COMPLEXITY`` this is CDPO, with ``ENTROPY`` it is
entropy-regularised PPO and with ``NONE`` plain PPO.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import regularizers as reg
from .nn import AdamState, NonFiniteError, ParamSet, backward, forward_tape, log_softmax, optimizer_step
from .regularizers import RegularizerKind
from .rollout import Minibatch, RolloutBuffer, minibatches


@dataclass(frozen=True)
class LossConfig:
    clip_range: float = 0.2
    vf_coef: float = 0.5
    reg_coef: float = 0.0
    regularizer: RegularizerKind = RegularizerKind.NONE

    def __post_init__(self):
        object.__setattr__(self, "regularizer", RegularizerKind(self.regularizer))
        if not 0.0 < self.clip_range < 1.0:
            raise ValueError("clip_range must lie in (0, 1)")
        if self.vf_coef < 0 or self.reg_coef < 0:
            raise ValueError("coefficients must be non-negative")

    @property
    def effective_reg_coef(self) -> float:
        return 0.0 if self.regularizer is RegularizerKind.NONE else self.reg_coef


@dataclass
class UpdateMetrics:
    objective: float
    clip_objective: float
    value_loss: float
    entropy: float
    disequilibrium: float
    complexity: float
    clip_fraction: float
    approx_kl: float

    @classmethod
    def mean(cls, items: list[UpdateMetrics]) -> UpdateMetrics:
        return cls(**{f.name: float(np.mean([getattr(m, f.name) for m in items])) for f in fields(cls)})


def clip_objective(ratio, adv, eps: float):
    """Elementwise ``min(ratio * adv, clip(ratio, 1-eps, 1+eps) * adv)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def value_loss(v_pred, v_targ) -> float:
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_targ = np.asarray(v_targ, dtype=np.float64)
    if v_pred.shape != v_targ.shape:
        raise ValueError("prediction and target lengths differ")
    return float(np.mean((v_pred - v_targ) ** 2))


def _objective(mb: Minibatch, params: ParamSet, cfg: LossConfig, need_grad: bool):
    logits, values, tape = forward_tape(params, mb.obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    B = len(mb)
    rows = np.arange(B)
    adv = mb.advantages

    log_ratio = logp_all[rows, mb.actions] - mb.old_log_probs
    ratio = np.exp(log_ratio)
    lo, hi = 1.0 - cfg.clip_range, 1.0 + cfg.clip_range
    surr = clip_objective(ratio, adv, cfg.clip_range)
    clip_term = float(surr.mean())
    vl = value_loss(values, mb.returns)

    s = reg.entropy(probs)
    d = reg.disequilibrium(probs)
    c = s * d
    c_reg = cfg.effective_reg_coef
    if cfg.regularizer is RegularizerKind.ENTROPY:
        reg_value = float(s.mean())
    elif cfg.regularizer is RegularizerKind.COMPLEXITY:
        reg_value = float(c.mean())
    else:
        reg_value = 0.0
    objective = clip_term - cfg.vf_coef * vl + c_reg * reg_value
    if not np.isfinite(objective):
        raise NonFiniteError(
            f"objective is {objective} (clip={clip_term}, value_loss={vl}, reg={reg_value})")

    metrics = UpdateMetrics(
        objective=objective, clip_objective=clip_term, value_loss=vl,
        entropy=float(s.mean()), disequilibrium=float(d.mean()), complexity=float(c.mean()),
        clip_fraction=float(np.mean((ratio < lo) | (ratio > hi))),
        approx_kl=float(np.mean(ratio - 1.0 - log_ratio)),
    )
    if not need_grad:
        return objective, metrics, None

    # d(surr)/d(ratio): the unclipped branch is active unless clipping binds
    # on the side that min() selects.
    active = ~(((adv > 0) & (ratio > hi)) | ((adv < 0) & (ratio < lo)))
    coef = np.where(active, adv * ratio, 0.0) / B
    dlogits = -coef[:, None] * probs
    dlogits[rows, mb.actions] += coef

    if c_reg > 0.0:
        if cfg.regularizer is RegularizerKind.ENTROPY:
            g = reg.entropy_grad(probs)
        else:
            g = reg.complexity_grad(probs)
        # chain through softmax: dR/dz_j = p_j (g_j - sum_k p_k g_k)
        gz = probs * (g - np.sum(probs * g, axis=1, keepdims=True))
        dlogits += (c_reg / B) * gz

    dvalue = -cfg.vf_coef * 2.0 * (values - mb.returns) / B
    grads = backward(params, tape, dlogits, dvalue)
    return objective, metrics, grads


def total_objective(mb: Minibatch, params: ParamSet, cfg: LossConfig) -> tuple[float, UpdateMetrics]:
    objective, metrics, _ = _objective(mb, params, cfg, need_grad=False)
    return objective, metrics


def objective_and_grad(mb: Minibatch, params: ParamSet, cfg: LossConfig) -> tuple[float, UpdateMetrics, ParamSet]:
    """Objective, metrics and the gradient of the objective w.r.t. ``params``."""
    return _objective(mb, params, cfg, need_grad=True)


def update(params: ParamSet, buffer: RolloutBuffer, cfg: LossConfig, n_epochs: int, *,
           opt_state: AdamState, rng: np.random.Generator, batch_size: int,
           lr: float, max_grad_norm: float) -> tuple[ParamSet, AdamState, UpdateMetrics | None]:
    """Run ``n_epochs`` passes of minibatch gradient ascent over ``buffer``.

    Returns the new parameters, optimizer state and metrics averaged over
    every minibatch step (``None`` when no step was taken).
    """
    if buffer.advantages is None:
        raise ValueError("buffer has no advantages; run compute_gae first")
    history: list[UpdateMetrics] = []
    for _ in range(n_epochs):
        for mb in minibatches(buffer, batch_size, rng):
            _, metrics, grads = objective_and_grad(mb, params, cfg)
            params, opt_state = optimizer_step(params, grads, opt_state, lr, max_grad_norm)
            history.append(metrics)
    return params, opt_state, (UpdateMetrics.mean(history) if history else None)
