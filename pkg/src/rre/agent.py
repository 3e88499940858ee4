"""Transformer policy and value networks over MDP states.

A state ``s = concat(h_{t-1}, x_t)`` is split into two tokens, the hidden
part and the input part, each projected to ``d_e`` and tagged with a learned
token-type embedding. A stack of pre-norm Transformer encoder layers mixes
the two tokens; mean pooling gives the state embedding. The policy puts three
independent softmax heads (input gate, skip index, output mask) on top; the
value network, with its own encoder, puts a scalar regression head on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from rre.numerics import autodiff as ad
from rre.numerics.autodiff import Tensor
from rre.numerics.optim import ParamStore, uniform_init

HEADS = ("u", "k", "q")


@dataclass
class AgentConfig:
    d_h: int
    d_in: int
    skip_window: int = 8
    d_e: int = 256
    layers: int = 3
    heads: int = 8
    d_ff: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if min(self.d_h, self.d_in, self.d_e, self.layers, self.heads, self.d_ff) <= 0:
            raise ValueError("agent dimensions must be positive")
        if self.d_e % self.heads:
            raise ValueError(f"d_e={self.d_e} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def head_sizes(self) -> dict:
        return {"u": 2, "k": self.skip_window + 1, "q": 2}


def _init_encoder(store: ParamStore, prefix: str, cfg: AgentConfig, rng) -> None:
    d = cfg.d_e
    store.add(f"{prefix}.tok_h.W", uniform_init(rng, cfg.d_h, (cfg.d_h, d)))
    store.add(f"{prefix}.tok_h.b", np.zeros(d))
    store.add(f"{prefix}.tok_x.W", uniform_init(rng, cfg.d_in, (cfg.d_in, d)))
    store.add(f"{prefix}.tok_x.b", np.zeros(d))
    store.add(f"{prefix}.type", uniform_init(rng, d, (2, d)))
    for i in range(cfg.layers):
        L = f"{prefix}.layer{i}"
        store.add(f"{L}.ln1.g", np.ones(d))
        store.add(f"{L}.ln1.b", np.zeros(d))
        for m in ("q", "k", "v", "o"):
            store.add(f"{L}.attn.W{m}", uniform_init(rng, d, (d, d)))
            store.add(f"{L}.attn.b{m}", np.zeros(d))
        store.add(f"{L}.ln2.g", np.ones(d))
        store.add(f"{L}.ln2.b", np.zeros(d))
        store.add(f"{L}.ff.W1", uniform_init(rng, d, (d, cfg.d_ff)))
        store.add(f"{L}.ff.b1", np.zeros(cfg.d_ff))
        store.add(f"{L}.ff.W2", uniform_init(rng, cfg.d_ff, (cfg.d_ff, d)))
        store.add(f"{L}.ff.b2", np.zeros(d))
    store.add(f"{prefix}.ln_f.g", np.ones(d))
    store.add(f"{prefix}.ln_f.b", np.zeros(d))


def _init_mlp(store: ParamStore, prefix: str, d: int, n_out: int, rng) -> None:
    store.add(f"{prefix}.W1", uniform_init(rng, d, (d, d)))
    store.add(f"{prefix}.b1", np.zeros(d))
    store.add(f"{prefix}.W2", uniform_init(rng, d, (d, n_out)))
    store.add(f"{prefix}.b2", np.zeros(n_out))


class Agent:
    """Policy and value parameters with separate Adam state."""

    def __init__(self, cfg: AgentConfig, policy: ParamStore, value: ParamStore):
        self.cfg = cfg
        self.policy = policy
        self.value = value

    @classmethod
    def init(cls, cfg: AgentConfig, rng) -> "Agent":
        policy = ParamStore()
        _init_encoder(policy, "policy.enc", cfg, rng)
        for head, n in cfg.head_sizes().items():
            _init_mlp(policy, f"policy.head_{head}", cfg.d_e, n, rng)
        value = ParamStore()
        _init_encoder(value, "value.enc", cfg, rng)
        _init_mlp(value, "value.head", cfg.d_e, 1, rng)
        return cls(cfg, policy, value)

    def copy(self) -> "Agent":
        return Agent(self.cfg, self.policy.copy(), self.value.copy())

    def digest(self) -> str:
        return self.policy.digest() + self.value.digest()


# ---------------------------------------------------------------------------
# forward passes on tensors (differentiable)


def tokens(p, prefix: str, cfg: AgentConfig, S) -> Tensor:
    """(N, 2, d_e) token sequence for a batch of states (N, d_h + d_in)."""
    S = np.atleast_2d(np.asarray(S, float))
    if S.shape[-1] != cfg.d_h + cfg.d_in:
        raise ValueError(f"state length {S.shape[-1]} != d_h + d_in = {cfg.d_h + cfg.d_in}")
    typ = p[f"{prefix}.type"]
    th = ad.linear(S[:, : cfg.d_h], p[f"{prefix}.tok_h.W"], p[f"{prefix}.tok_h.b"]) + typ[0]
    tx = ad.linear(S[:, cfg.d_h :], p[f"{prefix}.tok_x.W"], p[f"{prefix}.tok_x.b"]) + typ[1]
    return ad.stack([th, tx], axis=1, name=f"{prefix}.tokens")


def _attention(p, L: str, x: Tensor, heads: int, rate: float, rng) -> Tensor:
    n, s, d = x.shape
    dh = d // heads

    def split(t):
        return ad.swapaxes(ad.reshape(t, (n, s, heads, dh)), 1, 2)

    q = split(ad.linear(x, p[f"{L}.attn.Wq"], p[f"{L}.attn.bq"]))
    k = split(ad.linear(x, p[f"{L}.attn.Wk"], p[f"{L}.attn.bk"]))
    v = split(ad.linear(x, p[f"{L}.attn.Wv"], p[f"{L}.attn.bv"]))
    scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) / math.sqrt(dh)
    w = ad.dropout(ad.softmax(scores, axis=-1, name=f"{L}.attn.weights"), rate, rng)
    o = ad.reshape(ad.swapaxes(ad.matmul(w, v), 1, 2), (n, s, d))
    return ad.linear(o, p[f"{L}.attn.Wo"], p[f"{L}.attn.bo"])


def encode_tokens(p, prefix: str, cfg: AgentConfig, x: Tensor, rng=None) -> Tensor:
    """Pre-norm encoder stack, final layer norm, mean pool over tokens."""
    rate = cfg.dropout if rng is not None else 0.0
    for i in range(cfg.layers):
        L = f"{prefix}.layer{i}"
        a = ad.layer_norm(x, p[f"{L}.ln1.g"], p[f"{L}.ln1.b"])
        x = x + ad.dropout(_attention(p, L, a, cfg.heads, rate, rng), rate, rng)
        f = ad.layer_norm(x, p[f"{L}.ln2.g"], p[f"{L}.ln2.b"])
        f = ad.linear(ad.relu(ad.linear(f, p[f"{L}.ff.W1"], p[f"{L}.ff.b1"])), p[f"{L}.ff.W2"], p[f"{L}.ff.b2"])
        x = x + ad.dropout(f, rate, rng)
    x = ad.layer_norm(x, p[f"{prefix}.ln_f.g"], p[f"{prefix}.ln_f.b"])
    return ad.mean(x, axis=1, name=f"{prefix}.embedding")


def embed(p, prefix: str, cfg: AgentConfig, S, rng=None) -> Tensor:
    return encode_tokens(p, prefix, cfg, tokens(p, prefix, cfg, S), rng)


def _mlp(p, prefix: str, e: Tensor) -> Tensor:
    hidden = ad.tanh(ad.linear(e, p[f"{prefix}.W1"], p[f"{prefix}.b1"]))
    return ad.linear(hidden, p[f"{prefix}.W2"], p[f"{prefix}.b2"])


def policy_log_probs(p, cfg: AgentConfig, S, rng=None) -> dict:
    """Per-head log-probabilities ``{"u": (N,2), "k": (N,K+1), "q": (N,2)}``."""
    e = embed(p, "policy.enc", cfg, S, rng)
    return {h: ad.log_softmax(_mlp(p, f"policy.head_{h}", e), name=f"logp_{h}") for h in HEADS}


def joint_log_prob(logps: dict, actions) -> Tensor:
    """``log p_u(u) + log p_k(k) + log p_q(q)`` for (N, 3) integer actions."""
    a = np.asarray(actions, dtype=np.int64)
    rows = np.arange(a.shape[0])
    total = None
    for j, h in enumerate(HEADS):
        term = logps[h][rows, a[:, j]]
        total = term if total is None else total + term
    return total


def value_tensor(p, cfg: AgentConfig, S, rng=None) -> Tensor:
    e = embed(p, "value.enc", cfg, S, rng)
    return ad.reshape(_mlp(p, "value.head", e), (-1,))


# ---------------------------------------------------------------------------
# inference-mode helpers on numpy arrays


class ActionDistribution(NamedTuple):
    p_u: np.ndarray
    p_k: np.ndarray
    p_q: np.ndarray
    log_u: np.ndarray
    log_k: np.ndarray
    log_q: np.ndarray

    def log_prob(self, actions) -> np.ndarray:
        a = np.asarray(actions, dtype=np.int64).reshape(-1, 3)
        rows = np.arange(a.shape[0])
        return self.log_u[rows, a[:, 0]] + self.log_k[rows, a[:, 1]] + self.log_q[rows, a[:, 2]]


def embed_state(agent: Agent, S, which: str = "policy") -> np.ndarray:
    store = agent.policy if which == "policy" else agent.value
    with ad.no_grad():
        e = embed(store.tensors(), f"{which}.enc", agent.cfg, S)
    return e.data


def policy_forward(agent: Agent, S) -> ActionDistribution:
    with ad.no_grad():
        lp = policy_log_probs(agent.policy.tensors(), agent.cfg, S)
    lu, lk, lq = (lp[h].data for h in HEADS)
    return ActionDistribution(np.exp(lu), np.exp(lk), np.exp(lq), lu, lk, lq)


def value_forward(agent: Agent, S) -> np.ndarray:
    with ad.no_grad():
        return value_tensor(agent.value.tensors(), agent.cfg, S).data


def sample_action(dist: ActionDistribution, rng) -> tuple[np.ndarray, np.ndarray]:
    """Independent draws per head; returns (N, 3) actions and joint log-probs."""
    u = rng.categorical_rows(dist.p_u)
    k = rng.categorical_rows(dist.p_k)
    q = rng.categorical_rows(dist.p_q)
    actions = np.stack([u, k, q], axis=1).astype(np.int64)
    return actions, dist.log_prob(actions)


def greedy_action(dist: ActionDistribution) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. lowest-index tie-break
    return np.stack(
        [np.argmax(dist.log_u, axis=-1), np.argmax(dist.log_k, axis=-1), np.argmax(dist.log_q, axis=-1)],
        axis=1,
    ).astype(np.int64)


def greedy_policy(agent: Agent):
    """Environment policy callback choosing per-head argmax actions."""
    def policy(states, t):
        return greedy_action(policy_forward(agent, states))
    return policy


def sampling_policy(agent: Agent, rng):
    def policy(states, t):
        return sample_action(policy_forward(agent, states), rng)[0]
    return policy
