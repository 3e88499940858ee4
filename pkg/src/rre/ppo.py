"""Clipped-surrogate policy updates and bootstrapped value regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rre import agent as ag
from rre import dts
from rre.numerics import autodiff as ad
from rre.numerics.autodiff import Tensor
from rre.numerics.optim import adam_step, evaluate_with_gradients


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.95
    lr_policy: float = 1e-4
    lr_value: float = 1e-3
    # both off by default; neither term is part of the objective being reproduced
    entropy_coef: float = 0.0
    normalize_advantages: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0 and self.clip != float("inf"):
            raise ValueError("clip must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.lr_policy <= 0 or self.lr_value <= 0:
            raise ValueError("learning rates must be positive")


def advantages(rewards, v_s, v_next, terminal, gamma: float) -> np.ndarray:
    """One-step TD advantages; identical to the TD errors used for priorities."""
    return dts.td_errors(rewards, v_s, v_next, terminal, gamma)


def advantage(value_fn, transition: dts.Transition, gamma: float) -> float:
    return dts.td_error(value_fn, transition, gamma)


def bootstrapped_returns(rewards, v_next, terminal, gamma: float) -> np.ndarray:
    v_next = np.where(np.asarray(terminal, bool), 0.0, v_next)
    return np.asarray(rewards, float) + gamma * v_next


def bootstrapped_return(value_fn, transition: dts.Transition, gamma: float) -> float:
    v_next = 0.0 if transition.terminal else float(value_fn(transition.s_next[None])[0])
    return transition.r + gamma * v_next


def clipped_surrogate(new_log_probs: Tensor, old_log_probs, adv, clip: float) -> Tensor:
    """Mean of ``min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)``; to be maximised."""
    adv = np.asarray(adv, float)
    ratio = ad.exp(new_log_probs - np.asarray(old_log_probs, float), name="ratio")
    unclipped = ratio * adv
    if np.isinf(clip):
        return ad.mean(unclipped, name="policy_objective")
    clipped = ad.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    return ad.mean(ad.minimum(unclipped, clipped), name="policy_objective")


def policy_loss(p, cfg: ag.AgentConfig, states, actions, old_log_probs, adv, clip: float,
                rng=None, entropy_coef: float = 0.0) -> Tensor:
    """Surrogate objective of the policy tensors ``p`` on a minibatch."""
    logps = ag.policy_log_probs(p, cfg, states, rng)
    objective = clipped_surrogate(ag.joint_log_prob(logps, actions), old_log_probs, adv, clip)
    if entropy_coef:
        ent = None
        for h in ag.HEADS:
            term = -ad.sum_(ad.exp(logps[h]) * logps[h], axis=-1)
            ent = term if ent is None else ent + term
        objective = objective + entropy_coef * ad.mean(ent)
    return objective


def value_loss(p, cfg: ag.AgentConfig, states, returns, rng=None) -> Tensor:
    """Mean squared error between predicted values and fixed return targets."""
    diff = ag.value_tensor(p, cfg, states, rng) - np.asarray(returns, float)
    return ad.mean(diff * diff, name="value_loss")


def agent_epoch(agent: ag.Agent, buffer: dts.ReplayBuffer, dts_cfg: dts.DtsConfig,
                ppo_cfg: PpoConfig, g: int, G: int, rng) -> dict:
    """One DTS draw plus one Adam ascent (policy) and descent (value) step.

    TD errors, advantages and return targets all come from the current value
    network, evaluated once without dropout before either update. Dropout is
    active inside the two loss evaluations.
    """
    value_fn = lambda S: ag.value_forward(agent, S)  # noqa: E731
    stats = dts.sampling_stats(buffer, value_fn, g, G, dts_cfg)
    idx = dts.sample_minibatch(buffer, stats.probs, dts_cfg.minibatch, rng)
    mb = buffer.subset(idx)
    adv = stats.delta[idx]
    # same discount as the TD errors above, so R - v(s) == A
    returns = mb.rewards + dts_cfg.gamma * stats.v_next[idx]
    if ppo_cfg.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    drop_rng = rng if agent.cfg.dropout > 0 else None
    pol_obj, pol_grads = evaluate_with_gradients(
        policy_loss, agent.policy, agent.cfg, mb.states, mb.actions, mb.old_log_probs, adv,
        ppo_cfg.clip, drop_rng, ppo_cfg.entropy_coef,
    )
    val_loss, val_grads = evaluate_with_gradients(
        value_loss, agent.value, agent.cfg, mb.states, returns, drop_rng,
    )
    adam_step(agent.policy, pol_grads, ppo_cfg.lr_policy, ascend=True)
    adam_step(agent.value, val_grads, ppo_cfg.lr_value, ascend=False)
    return {
        "policy_objective": pol_obj,
        "value_loss": val_loss,
        "mean_abs_td": float(np.abs(stats.delta).mean()),
        "indices": idx,
    }
