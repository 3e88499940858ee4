"""The recurrent forecasting environment.

An encoder-only RNN whose step ``t`` is controlled by an action
``(u, k, q)``: ``u`` gates the input, ``k`` picks a past hidden state to feed
back through a learned skip projection (``k = 0`` means no skip) and ``q``
decides whether the step's forecast is supervised and rewarded.

Everything here is batched: hidden states are ``(B, D_h)`` tensors and
actions are integer arrays of length ``B``. Row-vector convention throughout,
so the skip drive is ``h_skip @ W_skip``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from rre.errors import ActionError, ShapeError
from rre.numerics import autodiff as ad
from rre.numerics.autodiff import Tensor
from rre.numerics.optim import ParamStore, uniform_init

log = logging.getLogger(__name__)

CELL_KINDS = ("RNN", "MGU", "GRU", "LSTM")
_GATES = {"RNN": 1, "MGU": 2, "GRU": 3, "LSTM": 4}


@dataclass
class EnvConfig:
    cell: str = "GRU"
    d_in: int = 1
    d_h: int = 32
    horizon: int = 1
    skip_window: int = 8
    alpha: float = 1.0
    c: float = 0.5

    def __post_init__(self):
        self.cell = self.cell.upper()
        if self.cell not in CELL_KINDS:
            raise ValueError(f"cell must be one of {CELL_KINDS}, got {self.cell!r}")
        if self.skip_window < 1:
            raise ValueError("skip_window must be >= 1")
        if not 0.0 < self.c < 1.0:
            raise ValueError("reward threshold c must lie in (0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.d_h <= 0 or self.d_in <= 0 or self.horizon <= 0:
            raise ValueError("dimensions must be positive")

    @property
    def state_dim(self) -> int:
        return self.d_h + self.d_in


def init_env_params(cfg: EnvConfig, rng) -> ParamStore:
    """Cell weights uniform in +-1/sqrt(fan_in), biases zero, ``W_skip`` zero.

    Starting ``W_skip`` at zero makes the untrained network coincide with the
    plain cell whatever skips the agent picks.
    """
    g = _GATES[cfg.cell]
    dh, din = cfg.d_h, cfg.d_in
    store = ParamStore()
    store.add("env.cell.W_x", uniform_init(rng, din, (din, g * dh)))
    store.add("env.cell.b", np.zeros(g * dh))
    if cfg.cell in ("MGU", "GRU"):
        store.add("env.cell.W_h", uniform_init(rng, dh, (dh, (g - 1) * dh)))
        store.add("env.cell.W_hc", uniform_init(rng, dh, (dh, dh)))
    else:
        store.add("env.cell.W_h", uniform_init(rng, dh, (dh, g * dh)))
    store.add("env.W_skip", np.zeros((dh, dh)))
    store.add("env.out.W", uniform_init(rng, dh, (dh, cfg.horizon)))
    store.add("env.out.b", np.zeros(cfg.horizon))
    return store


def _tensors(params) -> dict:
    if isinstance(params, ParamStore):
        return params.tensors()
    return {k: ad.as_tensor(v) for k, v in params.items()}


def cell_update(kind: str, p, x, r, c_prev=None):
    """The textbook cell with ``r`` as its recurrent input.

    Returns ``(h, c)``; ``c`` is ``None`` except for LSTM.
    """
    dh = r.shape[-1]
    xw = ad.linear(x, p["env.cell.W_x"], p["env.cell.b"], name="cell.xw")
    if kind == "RNN":
        return ad.tanh(xw + ad.linear(r, p["env.cell.W_h"]), name="cell.h"), None
    if kind == "LSTM":
        z = xw + ad.linear(r, p["env.cell.W_h"])
        i = ad.sigmoid(z[..., :dh])
        f = ad.sigmoid(z[..., dh : 2 * dh])
        g = ad.tanh(z[..., 2 * dh : 3 * dh])
        o = ad.sigmoid(z[..., 3 * dh :])
        c = i * g if c_prev is None else f * c_prev + i * g
        return ad.mul(o, ad.tanh(c), name="cell.h"), c
    if kind == "GRU":
        zr = xw[..., : 2 * dh] + ad.linear(r, p["env.cell.W_h"])
        z = ad.sigmoid(zr[..., :dh])
        reset = ad.sigmoid(zr[..., dh:])
        n = ad.tanh(xw[..., 2 * dh :] + ad.linear(reset * r, p["env.cell.W_hc"]))
        return ad.add((1.0 - z) * r, z * n, name="cell.h"), None
    if kind == "MGU":
        f = ad.sigmoid(xw[..., :dh] + ad.linear(r, p["env.cell.W_h"]))
        n = ad.tanh(xw[..., dh:] + ad.linear(f * r, p["env.cell.W_hc"]))
        return ad.add((1.0 - f) * r, f * n, name="cell.h"), None
    raise ValueError(f"unknown cell kind {kind!r}")


def cell_forward(params, cfg: EnvConfig, x_gated, h_prev, h_skip=None, c_prev=None):
    """One skip-augmented cell step.

    The recurrent drive is ``h_prev + h_skip @ W_skip``; when ``h_skip`` is
    ``None`` (or omitted) the cell reduces exactly to the plain recurrence.
    """
    p = _tensors(params)
    h_prev = ad.as_tensor(h_prev)
    r = h_prev
    if h_skip is not None:
        r = ad.add(h_prev, ad.linear(ad.as_tensor(h_skip), p["env.W_skip"]), name="cell.drive")
    return cell_update(cfg.cell, p, ad.as_tensor(x_gated), r, c_prev)


def output_layer(params, h):
    p = _tensors(params)
    return ad.linear(h, p["env.out.W"], p["env.out.b"], name="output")


def make_state(h_prev, x_t) -> np.ndarray:
    """MDP state ``concat(h_{t-1}, x_t)`` along the last axis."""
    h = h_prev.data if isinstance(h_prev, Tensor) else np.asarray(h_prev, float)
    return np.concatenate([h, np.asarray(x_t, float)], axis=-1)


class HiddenHistory:
    """The last ``K + 1`` hidden outputs ``h_{t-K-1} .. h_{t-1}``.

    Time is 1-based as in the recurrence: before step ``t`` the history holds
    ``h_0`` (the zero initial state) up to ``h_{t-1}``. Candidate ``k`` at step
    ``t`` is ``h_{t-k-1}``. Indices ``<= 0`` are padding and read as zeros
    (``h_0`` is zero anyway), which gives ``K - t + 2`` padded slots while
    ``t - K <= 1``.
    """

    def __init__(self, K: int, h0):
        self.K = K
        self.t = 1
        self._states = {0: ad.as_tensor(h0)}

    def push(self, h) -> None:
        self._states[self.t] = ad.as_tensor(h)
        self._states.pop(self.t - self.K - 1, None)
        self.t += 1

    @property
    def h_prev(self):
        return self._states[self.t - 1]

    def is_padding(self, k: int) -> bool:
        self._check_k(k)
        return self.t - k - 1 <= 0

    def zero_pad_count(self) -> int:
        return sum(self.is_padding(k) for k in range(1, self.K + 1))

    def candidate(self, k: int):
        """``h_{t-k-1}`` as a tensor, or an exact zero tensor if padded."""
        self._check_k(k)
        j = self.t - k - 1
        if j <= 0:
            return Tensor(np.zeros_like(self._states[self.t - 1].data))
        return self._states[j]

    def gather(self, k) -> Tensor | None:
        """Per-row skip states for an integer array ``k`` (0 = no skip).

        Returns ``None`` when no row has a real (non-padded) skip target, so
        callers can take the exact plain-cell path.
        """
        k = np.asarray(k)
        if np.any((k < 0) | (k > self.K)):
            raise ActionError(f"skip index out of range [0, {self.K}]")
        out = None
        for kk in np.unique(k):
            kk = int(kk)
            if kk == 0 or self.t - kk - 1 <= 0:
                continue
            mask = (k == kk).astype(np.float64)[:, None]
            term = ad.mul(self._states[self.t - kk - 1], mask, name="skip.select")
            out = term if out is None else ad.add(out, term, name="skip.sum")
        return out

    def _check_k(self, k: int) -> None:
        if not 1 <= k <= self.K:
            raise ActionError(f"skip index {k} outside 1..{self.K}")


def candidate_state(history: HiddenHistory, k: int):
    return history.candidate(k)


def reward(y_hat, y, q, alpha: float, c: float):
    """``q * (alpha / (alpha + ||y_hat - y||_1) - c)`` with a raw L1 sum.

    Works on single vectors or on ``(B, H)`` batches with ``q`` of length B.
    """
    y_hat = np.asarray(y_hat, float)
    y = np.asarray(y, float)
    if y_hat.shape != y.shape:
        raise ShapeError(f"{y_hat.shape} != {y.shape}")
    err = np.abs(y_hat - y).sum(axis=-1)
    return np.asarray(q, float) * (alpha / (alpha + err) - c)


class StepResult(NamedTuple):
    h: Tensor
    c: Tensor | None
    y_hat: Tensor
    reward: np.ndarray
    next_state: np.ndarray | None


def _split_action(action, batch: int):
    a = np.asarray(action, dtype=np.int64)
    if a.ndim == 1:
        a = np.broadcast_to(a, (batch, 3))
    if a.shape != (batch, 3):
        raise ActionError(f"actions must have shape ({batch}, 3), got {a.shape}")
    u, k, q = a[:, 0], a[:, 1], a[:, 2]
    if np.any((u != 0) & (u != 1)) or np.any((q != 0) & (q != 1)):
        raise ActionError("u and q must be 0 or 1")
    return u, k, q


def env_step(params, cfg: EnvConfig, history: HiddenHistory, x_t, action, y_t=None,
             x_next=None, c_prev=None) -> StepResult:
    """Advance the environment by one step and push ``h_t`` onto ``history``.

    ``x_t`` is ``(B, D_in)`` (a single vector is treated as a batch of one);
    ``action`` is ``(B, 3)`` or one ``(u, k, q)`` shared by the batch. The
    reward is zero when ``y_t`` is absent. ``next_state`` needs ``x_next``.
    """
    p = _tensors(params)
    x_t = np.atleast_2d(np.asarray(x_t, float))
    batch = x_t.shape[0]
    u, k, q = _split_action(action, batch)
    x_gated = x_t * u[:, None].astype(np.float64)
    h_skip = history.gather(k)
    h, c = cell_forward(p, cfg, x_gated, history.h_prev, h_skip, c_prev)
    y_hat = output_layer(p, h)
    r = np.zeros(batch) if y_t is None else reward(y_hat.data, y_t, q, cfg.alpha, cfg.c)
    history.push(h)
    nxt = None if x_next is None else make_state(h, np.atleast_2d(x_next))
    return StepResult(h, c, y_hat, r, nxt)


class Rollout(NamedTuple):
    preds: Tensor          # (B, T, H) forecasts at every step
    states: np.ndarray     # (B, T, D_h + D_in), s_t
    next_states: np.ndarray  # (B, T, D_h + D_in), s_{t+1}; x-part zero at t = T
    actions: np.ndarray    # (B, T, 3)
    rewards: np.ndarray    # (B, T)
    h_last: Tensor


def unroll(params, cfg: EnvConfig, X, policy: Callable[[np.ndarray, int], np.ndarray],
           Y=None) -> Rollout:
    """Run the environment over whole windows ``X`` of shape (B, T, D_in).

    ``policy(states, t)`` receives the ``(B, D_h + D_in)`` states of step
    ``t`` (1-based) and returns ``(B, 3)`` integer actions. Forecasts keep
    their autodiff graph so a loss over ``preds`` trains ``params``.
    """
    p = _tensors(params)
    X = np.asarray(X, float)
    if X.ndim != 3 or X.shape[2] != cfg.d_in:
        raise ShapeError(f"X must be (B, T, {cfg.d_in}), got {X.shape}")
    B, T, _ = X.shape
    h0 = Tensor(np.zeros((B, cfg.d_h)))
    history = HiddenHistory(cfg.skip_window, h0)
    c = Tensor(np.zeros((B, cfg.d_h))) if cfg.cell == "LSTM" else None
    preds, states, acts, rewards = [], [], [], []
    for t in range(1, T + 1):
        x_t = X[:, t - 1]
        s_t = make_state(history.h_prev, x_t)
        a = np.asarray(policy(s_t, t), dtype=np.int64)
        y_t = None if Y is None else Y[:, t - 1]
        step = env_step(p, cfg, history, x_t, a, y_t, c_prev=c)
        c = step.c
        preds.append(step.y_hat)
        states.append(s_t)
        acts.append(a)
        rewards.append(step.reward)
    states = np.stack(states, axis=1)
    next_states = np.empty_like(states)
    next_states[:, :-1] = states[:, 1:]
    next_states[:, -1] = make_state(history.h_prev, np.zeros((B, cfg.d_in)))
    return Rollout(
        ad.stack(preds, axis=1, name="preds"),
        states,
        next_states,
        np.stack(acts, axis=1),
        np.stack(rewards, axis=1),
        history.h_prev,
    )


def fixed_policy(u: int = 1, k: int = 0, q: int = 1):
    """Policy that returns the same action at every step (the baseline one by default)."""
    def policy(states, t):
        return np.tile(np.array([u, k, q], dtype=np.int64), (states.shape[0], 1))
    return policy


def masked_training_loss(preds, targets, q):
    """Per-example ``sum_t q_t * mse_t / ||q||_1``, averaged over the batch.

    ``preds`` and ``targets`` are (T, H) or (B, T, H); ``q`` is (T,) or (B, T).
    An example whose mask is all zeros falls back to supervising its final
    step; the event is logged.
    """
    preds = ad.as_tensor(preds)
    targets = np.asarray(targets, float)
    q = np.asarray(q, dtype=np.float64)
    single = preds.ndim == 2
    if single:
        preds = ad.reshape(preds, (1,) + preds.shape)
        targets = targets[None]
        q = q[None]
    if preds.shape != targets.shape or q.shape != preds.shape[:2]:
        raise ShapeError(f"preds {preds.shape}, targets {targets.shape}, q {q.shape}")
    empty = q.sum(axis=1) == 0
    if empty.any():
        log.info("degenerate output mask for %d example(s); supervising the final step",
                    int(empty.sum()))
        q = q.copy()
        q[empty, -1] = 1.0
    diff = preds - targets
    step_loss = ad.mean(diff * diff, axis=2, name="step_mse")
    per_example = ad.div(ad.sum_(step_loss * q, axis=1), q.sum(axis=1), name="masked_loss")
    return ad.mean(per_example, name="batch_loss")
