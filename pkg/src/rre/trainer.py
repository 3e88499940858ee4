"""Co-evolutionary training of the forecaster and its controlling agent.

Round structure: pretrain the RNN with the baseline action (u=1, k=0, q=1);
then for each round collect experience with the previous policy on the
frozen RNN, train the agent for ``agent_epochs`` epochs, and fine-tune the RNN
under the new policy's greedy actions. Model selection everywhere uses the
last-step validation MSE in scaled space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from rre import agent as ag
from rre import dts, env
from rre.data import Dataset, mse_mae
from rre.errors import NumericalError, ShapeError, TrainingError
from rre.numerics import autodiff as ad
from rre.numerics.optim import ParamStore, adam_step, evaluate_with_gradients
from rre.numerics.rng import Rng
from rre.ppo import PpoConfig, agent_epoch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    rounds: int = 20
    agent_epochs: int = 50
    env_epochs: int = 20
    pretrain_epochs: int = 20
    pretrain_patience: int = 10
    finetune_patience: int = 6
    round_patience: int = 5
    min_delta: float = 1e-3
    batch_size: int = 32
    lr_env: float = 1e-3
    seed: int = 0
    stochastic_inference: bool = False

    def __post_init__(self):
        # zero counts are allowed: they make a stage a no-op
        for name in ("rounds", "agent_epochs", "env_epochs", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        for pat, count in (("pretrain_patience", "pretrain_epochs"),
                           ("finetune_patience", "env_epochs"), ("round_patience", "rounds")):
            if getattr(self, pat) < 1:
                raise ValueError(f"{pat} must be >= 1")
            if 0 < getattr(self, count) < getattr(self, pat):
                raise ValueError(f"{pat} exceeds {count}")
        if self.lr_env <= 0 or self.min_delta < 0:
            raise ValueError("lr_env must be positive and min_delta nonnegative")


@dataclass
class RoundState:
    """Best-so-far bookkeeping across co-evolution rounds."""

    round: int
    env: ParamStore
    agent: "ag.Agent | None"
    best_score: float = np.inf
    best_round: int = 0
    best_env: ParamStore | None = None
    best_agent: "ag.Agent | None" = None

    def record(self, score: float) -> None:
        if score < self.best_score:
            self.best_score, self.best_round = score, self.round
            self.best_env, self.best_agent = self.env, self.agent


# ---------------------------------------------------------------------------
# helpers


def seed_streams(seed: int) -> dict:
    """Named sub-streams of one master seed; shared with the baseline trainer."""
    master = Rng(seed)
    return {
        "env_init": master.spawn("env-init"),
        "pretrain": master.spawn("pretrain"),
        "agent_init": master.spawn("agent-init"),
        "master": master,
    }


def batch_indices(n: int, batch_size: int, rng=None) -> list:
    order = np.arange(n) if rng is None else rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


class EarlyStopper:
    """Patience counter with a minimum-improvement threshold.

    The best checkpoint moves on any strict improvement; the patience counter
    resets only when the score beats the score at the last reset by more than
    ``min_delta``.
    """

    def __init__(self, patience: int, min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_state = None
        self.best_epoch = -1
        self._ref = np.inf
        self.wait = 0

    def update(self, score: float, state, epoch: int) -> bool:
        """Record ``score``; returns True when training should stop."""
        if score < self.best:
            self.best, self.best_state, self.best_epoch = score, state, epoch
        if score < self._ref - self.min_delta or not np.isfinite(self._ref):
            self._ref = score
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


def predict_last(store, env_cfg: env.EnvConfig, X, policy, chunk: int = 512):
    """Last-step forecasts (N, H) and actions (N, T, 3) without gradients."""
    preds, acts = [], []
    p = store.tensors() if isinstance(store, ParamStore) else store
    with ad.no_grad():
        for i in range(0, len(X), chunk):
            ro = env.unroll(p, env_cfg, X[i : i + chunk], policy)
            preds.append(ro.preds.data[:, -1])
            acts.append(ro.actions)
    return np.concatenate(preds), np.concatenate(acts)


def last_step_mse(store, env_cfg, X, Y, policy) -> float:
    pred, _ = predict_last(store, env_cfg, X, policy)
    d = pred - Y[:, -1]
    return float(np.mean(d * d))


def _env_loss(p, env_cfg, X, Y, policy):
    ro = env.unroll(p, env_cfg, X, policy)
    return env.masked_training_loss(ro.preds, Y, ro.actions[:, :, 2])


def _env_epoch(store, env_cfg, X, Y, policy, batch_size, lr, rng) -> float:
    losses = []
    for idx in batch_indices(len(X), batch_size, rng):
        loss, grads = evaluate_with_gradients(_env_loss, store, env_cfg, X[idx], Y[idx], policy)
        if not np.isfinite(loss):
            raise TrainingError("training loss diverged")
        adam_step(store, grads, lr)
        losses.append(loss)
    return float(np.mean(losses))


def fit_env(store: ParamStore, env_cfg, data: Dataset, train_policy, val_policy, epochs: int,
            patience: int, min_delta: float, lr: float, batch_size: int, rng,
            log_rows=None, round_index: int = 0, phase: str = "pretrain"):
    """Adam over shuffled batches with early stopping on last-step val MSE.

    The starting parameters count as epoch 0, so the result is never worse on
    validation than the input. Returns ``(best_store, best_score)``.
    """
    Xtr, Ytr = data.train
    Xva, Yva = data.val
    stopper = EarlyStopper(patience, min_delta)
    stopper.update(last_step_mse(store, env_cfg, Xva, Yva, val_policy), store.copy(), 0)
    for epoch in range(1, epochs + 1):
        try:
            train_loss = _env_epoch(store, env_cfg, Xtr, Ytr, train_policy, batch_size, lr, rng)
        except NumericalError as exc:
            raise TrainingError(f"{phase} diverged at epoch {epoch}: {exc}") from exc
        val = last_step_mse(store, env_cfg, Xva, Yva, val_policy)
        if log_rows is not None:
            log_rows.append(dict(round=round_index, epoch=epoch, phase=phase,
                                 train_loss=train_loss, val_loss=val, mean_reward=np.nan))
        if stopper.update(val, store.copy(), epoch):
            log.info("%s: early stop at epoch %d (best epoch %d)", phase, epoch, stopper.best_epoch)
            break
    return stopper.best_state, stopper.best


# ---------------------------------------------------------------------------
# stages


def pretrain_env(env_cfg: env.EnvConfig, data: Dataset, cfg: TrainConfig, log_rows=None):
    """Baseline-configuration pretraining; the result is the Naive-all model."""
    streams = seed_streams(cfg.seed)
    store = env.init_env_params(env_cfg, streams["env_init"])
    policy = env.fixed_policy(1, 0, 1)
    return fit_env(store, env_cfg, data, policy, policy, cfg.pretrain_epochs,
                   cfg.pretrain_patience, cfg.min_delta, cfg.lr_env, cfg.batch_size,
                   streams["pretrain"], log_rows, 0, "pretrain")


def collect_experience(env_store, env_cfg: env.EnvConfig, agent: ag.Agent, X, Y, rng) -> dts.ReplayBuffer:
    """Roll the frozen environment with actions sampled from ``agent``'s policy."""
    log_probs = []

    def policy(states, t):
        dist = ag.policy_forward(agent, states)
        a, lp = ag.sample_action(dist, rng)
        log_probs.append(lp)
        return a

    with ad.no_grad():
        ro = env.unroll(env_store.tensors(), env_cfg, X, policy, Y)
    return dts.ReplayBuffer.from_rollout(
        ro.states, ro.next_states, ro.actions, np.stack(log_probs, axis=1), ro.rewards,
        ro.preds.data, Y,
    )


def collect_all(env_store, env_cfg, agent, data: Dataset, batch_size: int, rng) -> list:
    X, Y = data.train
    return [collect_experience(env_store, env_cfg, agent, X[idx], Y[idx], rng)
            for idx in batch_indices(len(X), batch_size)]


def train_agent_round(agent: ag.Agent, buffers: list, dts_cfg: dts.DtsConfig, ppo_cfg: PpoConfig,
                      epochs: int, rng, log_rows=None, round_index: int = 0) -> ag.Agent:
    """``epochs`` passes; each pass runs one DTS-sampled PPO update per buffer."""
    agent = agent.copy()
    for g in range(1, epochs + 1):
        objs, vls = [], []
        for buf in buffers:
            out = agent_epoch(agent, buf, dts_cfg, ppo_cfg, g, epochs, rng)
            objs.append(out["policy_objective"])
            vls.append(out["value_loss"])
        if log_rows is not None:
            log_rows.append(dict(round=round_index, epoch=g, phase="agent",
                                 train_loss=float(np.mean(vls)), val_loss=np.nan,
                                 mean_reward=float(np.mean(objs))))
    return agent


def finetune_env_round(env_store, env_cfg, agent: ag.Agent, data: Dataset, cfg: TrainConfig, rng,
                       log_rows=None, round_index: int = 0):
    """Fine-tune a copy of ``env_store`` under the agent's greedy actions."""
    policy = ag.greedy_policy(agent)
    return fit_env(env_store.copy(), env_cfg, data, policy, policy, cfg.env_epochs,
                   cfg.finetune_patience, cfg.min_delta, cfg.lr_env, cfg.batch_size, rng,
                   log_rows, round_index, "finetune")


def mean_reward(buffers) -> float:
    return float(np.mean(np.concatenate([b.rewards for b in buffers])))


@dataclass
class CoEvolutionResult:
    env: ParamStore
    agent: ag.Agent | None      # None: the baseline fixed policy won selection
    best_round: int
    val_score: float
    pretrained: ParamStore
    pretrain_val: float
    round_log: list = field(default_factory=list)
    epoch_log: list = field(default_factory=list)

    def policy(self, stochastic: bool = False, rng=None):
        return inference_policy(self.agent, stochastic, rng)


def inference_policy(agent, stochastic: bool = False, rng=None):
    if agent is None:
        return env.fixed_policy(1, 0, 1)
    if stochastic:
        return ag.sampling_policy(agent, rng)
    return ag.greedy_policy(agent)


def co_evolve(data: Dataset, env_cfg: env.EnvConfig, agent_cfg: ag.AgentConfig,
              dts_cfg: dts.DtsConfig, ppo_cfg: PpoConfig, cfg: TrainConfig) -> CoEvolutionResult:
    """Pretrain, then alternate agent training and RNN fine-tuning for ``cfg.rounds`` rounds.

    The pretrained model with the baseline policy is the round-0 candidate;
    the returned pair is the best by last-step validation MSE.
    """
    if dts_cfg.gamma != ppo_cfg.gamma:
        raise ValueError("DTS and PPO discount factors must match")
    streams = seed_streams(cfg.seed)
    epoch_log: list = []
    theta0, val0 = pretrain_env(env_cfg, data, cfg, epoch_log)
    state = RoundState(0, theta0, None)
    state.record(val0)
    round_log: list = []
    agent = ag.Agent.init(agent_cfg, streams["agent_init"])
    stopper = EarlyStopper(cfg.round_patience, cfg.min_delta)
    stopper.update(val0, None, 0)
    for i in range(1, cfg.rounds + 1):
        r_rng = streams["master"].spawn("round", i)
        try:
            buffers = collect_all(state.env, env_cfg, agent, data, cfg.batch_size, r_rng.spawn("collect"))
            agent = train_agent_round(agent, buffers, dts_cfg, ppo_cfg, cfg.agent_epochs,
                                      r_rng.spawn("agent"), epoch_log, i)
            theta, val = finetune_env_round(state.env, env_cfg, agent, data, cfg,
                                            r_rng.spawn("finetune"), epoch_log, i)
        except (TrainingError, NumericalError) as exc:
            log.error("round %d failed (%s); keeping the last good checkpoint", i, exc)
            break
        state = RoundState(i, theta, agent, state.best_score, state.best_round,
                           state.best_env, state.best_agent)
        state.record(val)
        round_log.append(dict(round=i, train_loss=_train_loss(theta, env_cfg, data, agent),
                              val_loss=val, mean_reward=mean_reward(buffers)))
        log.info("round %d: val %.6f, mean reward %.4f", i, val, round_log[-1]["mean_reward"])
        if stopper.update(val, None, i):
            log.info("round-level early stop after round %d", i)
            break
    return CoEvolutionResult(state.best_env, state.best_agent, state.best_round, state.best_score,
                             theta0, val0, round_log, epoch_log)


def _train_loss(store, env_cfg, data: Dataset, agent) -> float:
    """Masked training objective over the whole training split under the greedy policy."""
    X, Y = data.train
    policy = inference_policy(agent)
    with ad.no_grad():
        losses = [_env_loss(store.tensors(), env_cfg, X[idx], Y[idx], policy).item() * len(idx)
                  for idx in batch_indices(len(X), 512)]
    return float(np.sum(losses) / len(X))


def infer(env_store, env_cfg: env.EnvConfig, agent, X, stochastic: bool = False, rng=None):
    """Forecast ``Y_T`` for windows ``X`` (N, T, D_in) or a single (T, D_in).

    Only ``u`` and ``k`` act at inference; ``q`` is recorded but ignored.
    Returns ``(predictions, actions)`` in scaled space.
    """
    X = np.asarray(X, float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != env_cfg.d_in:
        raise ShapeError(f"expected windows of shape (N, T, {env_cfg.d_in}), got {X.shape}")
    pred, acts = predict_last(env_store, env_cfg, X, inference_policy(agent, stochastic, rng))
    return (pred[0], acts[0]) if single else (pred, acts)


def test_metrics(env_store, env_cfg, agent, data: Dataset) -> dict:
    """Test-split MSE/MAE in the original scale of the target variable."""
    X, Y = data.test
    pred, _ = infer(env_store, env_cfg, agent, X)
    mse, mae = mse_mae(data.to_original(pred), data.to_original(Y[:, -1]))
    return {"mse": mse, "mae": mae}
