"""Fixed-configuration baselines, written independently of the action plumbing.

Naive-all supervises the forecast at every step, Naive-last only the final
one; both feed the full input and use no skips. The code below calls the
bare cell update directly, so it serves as an oracle for the controlled
environment run with the action ``(u=1, k=0, q=1)``. Randomness comes from
the same named streams as the co-evolution trainer.
"""

from __future__ import annotations

import numpy as np

from rre.data import Dataset, mse_mae
from rre.env import EnvConfig, cell_update, init_env_params
from rre.errors import NumericalError, TrainingError
from rre.numerics import autodiff as ad
from rre.numerics.autodiff import Tensor
from rre.numerics.optim import adam_step, evaluate_with_gradients

MODES = ("all", "last")
EVAL_CHUNK = 512


def plain_forward(p, cfg: EnvConfig, X) -> Tensor:
    """Forecasts (B, T, H) of the plain encoder-only RNN from ``h_0 = 0``."""
    X = np.asarray(X, float)
    B, T, _ = X.shape
    h = Tensor(np.zeros((B, cfg.d_h)))
    c = Tensor(np.zeros((B, cfg.d_h))) if cfg.cell == "LSTM" else None
    out = []
    for t in range(T):
        h, c = cell_update(cfg.cell, p, ad.as_tensor(X[:, t]), h, c)
        out.append(ad.linear(h, p["env.out.W"], p["env.out.b"]))
    return ad.stack(out, axis=1)


def naive_loss(p, cfg: EnvConfig, X, Y, mode: str = "all") -> Tensor:
    preds = plain_forward(p, cfg, X)
    diff = preds - np.asarray(Y, float)
    step = ad.mean(diff * diff, axis=2)
    if mode == "all":
        per_example = ad.div(ad.sum_(step, axis=1), step.shape[1])
    elif mode == "last":
        per_example = step[:, -1]
    else:
        raise ValueError(f"mode must be one of {MODES}")
    return ad.mean(per_example)


def predict(store, cfg: EnvConfig, X) -> np.ndarray:
    """Last-step forecasts (N, H) in scaled space."""
    p = store.tensors()
    with ad.no_grad():
        return np.concatenate([plain_forward(p, cfg, X[i : i + EVAL_CHUNK]).data[:, -1]
                               for i in range(0, len(X), EVAL_CHUNK)])


def val_mse(store, cfg, X, Y) -> float:
    d = predict(store, cfg, X) - Y[:, -1]
    return float(np.mean(d * d))


def train_naive(data: Dataset, env_cfg: EnvConfig, train_cfg, mode: str = "all"):
    """Adam over shuffled batches, early stopping on last-step validation MSE.

    Returns ``(best_store, best_val_mse)``. ``train_cfg`` supplies the seed,
    learning rate, batch size, epoch budget, patience and min improvement.
    """
    from rre.trainer import seed_streams  # named streams only; no training code

    streams = seed_streams(train_cfg.seed)
    store = init_env_params(env_cfg, streams["env_init"])
    rng = streams["pretrain"]
    Xtr, Ytr = data.train
    Xva, Yva = data.val
    best = val_mse(store, env_cfg, Xva, Yva)
    best_store = store.copy()
    ref, wait = best, 0
    for epoch in range(1, train_cfg.pretrain_epochs + 1):
        order = rng.permutation(len(Xtr))
        for i in range(0, len(Xtr), train_cfg.batch_size):
            idx = order[i : i + train_cfg.batch_size]
            try:
                loss, grads = evaluate_with_gradients(naive_loss, store, env_cfg, Xtr[idx], Ytr[idx], mode)
            except NumericalError as exc:
                raise TrainingError(f"naive-{mode} diverged at epoch {epoch}: {exc}") from exc
            adam_step(store, grads, train_cfg.lr_env)
        score = val_mse(store, env_cfg, Xva, Yva)
        if score < best:
            best, best_store = score, store.copy()
        if score < ref - train_cfg.min_delta:
            ref, wait = score, 0
        else:
            wait += 1
            if wait >= train_cfg.pretrain_patience:
                break
    return best_store, best


def test_metrics(store, env_cfg: EnvConfig, data: Dataset) -> dict:
    X, Y = data.test
    mse, mae = mse_mae(data.to_original(predict(store, env_cfg, X)), data.to_original(Y[:, -1]))
    return {"mse": mse, "mae": mae}
