"""Dynamic transition sampling over a replay buffer.

Each transition gets a priority mixing its normalised TD error with a bounded
forecast-error score. The priority also sets a per-transition temperature that
is annealed towards ``lambda_min`` over the agent epochs with a sinusoidal
wobble, and the temperature-scaled softmax of the priorities is the sampling
distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from rre.errors import BufferError, ShapeError


@dataclass
class DtsConfig:
    beta: float = 0.5
    lambda_min: float = 0.1
    lambda_max: float = 2.0
    mu: float = 0.2
    omega: int = 2
    alpha: float = 1.0
    gamma: float = 0.95
    minibatch: int = 64

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 < self.lambda_min <= self.lambda_max:
            raise ValueError("need 0 < lambda_min <= lambda_max")
        if int(self.omega) != self.omega or self.omega < 1:
            raise ValueError("omega must be a positive integer")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("mu must lie in [0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.minibatch < 1:
            raise ValueError("minibatch must be positive")


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    old_log_prob: float
    r: float
    s_next: np.ndarray
    y_hat: np.ndarray
    y: np.ndarray
    terminal: bool


@dataclass
class ReplayBuffer:
    """Column-wise storage of ``M = T * |D|`` transitions from one data batch."""

    states: np.ndarray        # (M, S)
    actions: np.ndarray       # (M, 3) int
    old_log_probs: np.ndarray  # (M,)
    rewards: np.ndarray       # (M,)
    next_states: np.ndarray   # (M, S)
    y_hat: np.ndarray         # (M, H)
    y: np.ndarray             # (M, H)
    terminal: np.ndarray      # (M,) bool

    def __post_init__(self):
        m = len(self.rewards)
        for name in ("states", "actions", "old_log_probs", "next_states", "y_hat", "y", "terminal"):
            if len(getattr(self, name)) != m:
                raise ShapeError(f"buffer column {name} has {len(getattr(self, name))} rows, expected {m}")

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            self.states[i], self.actions[i], float(self.old_log_probs[i]), float(self.rewards[i]),
            self.next_states[i], self.y_hat[i], self.y[i], bool(self.terminal[i]),
        )

    def subset(self, idx) -> "ReplayBuffer":
        idx = np.asarray(idx, dtype=np.int64)
        return ReplayBuffer(
            self.states[idx], self.actions[idx], self.old_log_probs[idx], self.rewards[idx],
            self.next_states[idx], self.y_hat[idx], self.y[idx], self.terminal[idx],
        )

    @classmethod
    def from_rollout(cls, states, next_states, actions, log_probs, rewards, y_hat, y) -> "ReplayBuffer":
        """Flatten (B, T, ...) rollout arrays example by example; step T is terminal."""
        B, T = rewards.shape
        terminal = np.zeros((B, T), dtype=bool)
        terminal[:, -1] = True

        def flat(a):
            a = np.asarray(a)
            return a.reshape((B * T,) + a.shape[2:])

        return cls(flat(states), flat(actions).astype(np.int64), flat(log_probs), flat(rewards),
                   flat(next_states), flat(y_hat), flat(y), flat(terminal))


def td_errors(rewards, v_s, v_next, terminal, gamma: float) -> np.ndarray:
    """``r + gamma * v(s') - v(s)`` with ``v(s') = 0`` on terminal transitions."""
    v_next = np.where(np.asarray(terminal, bool), 0.0, v_next)
    return np.asarray(rewards, float) + gamma * v_next - np.asarray(v_s, float)


def td_error(value_fn, transition: Transition, gamma: float) -> float:
    """TD error of one transition; ``value_fn`` maps (N, S) states to (N,) values."""
    v = value_fn(np.stack([transition.s, transition.s_next]))
    return float(td_errors([transition.r], v[:1], v[1:], [transition.terminal], gamma)[0])


def forecast_error_metric(y_hat, y, alpha: float) -> np.ndarray:
    """``1 - alpha / (alpha + ||y_hat - y||_1)``, in ``[0, 1)``; batched over rows."""
    err = np.abs(np.asarray(y_hat, float) - np.asarray(y, float)).sum(axis=-1)
    return 1.0 - alpha / (alpha + err)


def priority(delta, delta_max: float, E, beta: float) -> np.ndarray:
    """``beta * |delta| / delta_max + (1 - beta) * E``; the TD term is 0 when delta_max is 0."""
    delta = np.abs(np.asarray(delta, float))
    td_term = delta / delta_max if delta_max > 0 else np.zeros_like(delta)
    return beta * td_term + (1.0 - beta) * np.asarray(E, float)


def base_temperature(p, cfg: DtsConfig) -> np.ndarray:
    return cfg.lambda_min + np.asarray(p, float) * (cfg.lambda_max - cfg.lambda_min)


def effective_temperature(p, g: int, G: int, cfg: DtsConfig) -> np.ndarray:
    """Annealed, cyclically modulated temperature for agent epoch ``g`` of ``G``."""
    if not 1 <= g <= G:
        raise ValueError(f"epoch g={g} outside 1..{G}")
    lam = base_temperature(p, cfg)
    frac = g / G
    wobble = 1.0 + cfg.mu * np.sin(2.0 * np.pi * cfg.omega * frac)
    return lam * (cfg.lambda_min / lam) ** frac * wobble


def sampling_distribution(priorities, temperatures) -> np.ndarray:
    """Softmax of ``p_m / lambda_m`` with max subtraction."""
    z = np.asarray(priorities, float) / np.asarray(temperatures, float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_minibatch(buffer, probs, n: int, rng) -> np.ndarray:
    """Indices of ``n`` draws with replacement from ``probs`` over the buffer."""
    if len(buffer) == 0:
        raise BufferError("cannot sample from an empty replay buffer")
    probs = np.asarray(probs, float)
    if probs.shape != (len(buffer),):
        raise ShapeError(f"probs has shape {probs.shape}, buffer has {len(buffer)} entries")
    return rng.categorical_many(probs, n)


class SamplingStats(NamedTuple):
    delta: np.ndarray
    v_s: np.ndarray
    v_next: np.ndarray
    E: np.ndarray
    priority: np.ndarray
    temperature: np.ndarray
    probs: np.ndarray


def sampling_stats(buffer: ReplayBuffer, value_fn, g: int, G: int, cfg: DtsConfig) -> SamplingStats:
    """Recompute TD errors, priorities, temperatures and probabilities for epoch ``g``."""
    values = value_fn(np.concatenate([buffer.states, buffer.next_states]))
    m = len(buffer)
    v_s, v_next = values[:m], values[m:]
    delta = td_errors(buffer.rewards, v_s, v_next, buffer.terminal, cfg.gamma)
    E = forecast_error_metric(buffer.y_hat, buffer.y, cfg.alpha)
    p = priority(delta, float(np.abs(delta).max()), E, cfg.beta)
    lam = effective_temperature(p, g, G, cfg)
    return SamplingStats(delta, v_s, np.where(buffer.terminal, 0.0, v_next), E, p, lam,
                         sampling_distribution(p, lam))


def dump_stats_csv(path, stats: SamplingStats) -> None:
    """Debug dump: one row per transition with |delta|, E, p, temperature, probability."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "abs_delta", "E", "p", "temperature", "prob"])
        for i in range(len(stats.delta)):
            w.writerow([i, repr(abs(float(stats.delta[i]))), repr(float(stats.E[i])),
                        repr(float(stats.priority[i])), repr(float(stats.temperature[i])),
                        repr(float(stats.probs[i]))])
