"""Two-state contextual bandit used to check that the PPO update learns.

State A rewards u = 1, state B rewards u = 0; the other two heads are
irrelevant. Every epoch collects a fresh buffer from the current policy
(so the clipped ratio starts at 1), runs one agent epoch, and then resets
the value network to zero so the advantage is the raw reward.
"""

import numpy as np

from rre import agent as ag
from rre import dts
from rre.ppo import PpoConfig, agent_epoch
from rre.numerics.rng import Rng

STATES = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, -0.5]])
BEST_U = np.array([1, 0])


def zero_value(agent):
    for n in agent.value.names():
        if n.startswith("value.head."):
            agent.value.set(n, np.zeros_like(agent.value[n]))


def collect(agent, rng, n=64):
    which = rng.integers(0, 2, size=n)
    S = STATES[which]
    acts, lp = ag.sample_action(ag.policy_forward(agent, S), rng)
    r = (acts[:, 0] == BEST_U[which]).astype(float)
    y = np.zeros((n, 1))
    return dts.ReplayBuffer(S, acts, lp, r, S.copy(), y, y.copy(), np.ones(n, bool))


def p_best(agent) -> float:
    d = ag.policy_forward(agent, STATES)
    return float(np.mean(d.p_u[np.arange(2), BEST_U]))


def run_bandit(seed: int, epochs: int = 50, lr: float = 3e-3):
    cfg = ag.AgentConfig(2, 1, 2, d_e=16, layers=1, heads=2, d_ff=16, dropout=0.0)
    rng = Rng(seed)
    agent = ag.Agent.init(cfg, rng.spawn("init"))
    zero_value(agent)
    value0 = agent.value.copy()
    dcfg = dts.DtsConfig(minibatch=64)
    pcfg = PpoConfig(lr_policy=lr)
    start = p_best(agent)
    for g in range(1, epochs + 1):
        buf = collect(agent, rng.spawn("collect", g))
        agent_epoch(agent, buf, dcfg, pcfg, g, epochs, rng.spawn("epoch", g))
        agent.value = value0.copy()
    return start, p_best(agent)
