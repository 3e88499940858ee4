"""Small end-to-end run in under half a minute.

Generates the synthetic series, pretrains the plain GRU (the Naive-all
model), runs four co-evolution rounds, and prints test metrics plus the
average action the trained agent takes at each step of a window.

    python demos/quickstart.py
"""

import logging

import numpy as np

from rre import agent as ag
from rre import data, dts, env, ppo, trainer

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("rre.env").setLevel(logging.WARNING)

ds = data.prepare(data.synthetic_series(800, seed=0), T=12, H=3)
env_cfg = env.EnvConfig("GRU", ds.d_in, d_h=16, horizon=ds.H, skip_window=4, alpha=1.25)
agent_cfg = ag.AgentConfig(env_cfg.d_h, ds.d_in, env_cfg.skip_window, d_e=16, layers=1, heads=2, d_ff=32)
dts_cfg = dts.DtsConfig(alpha=env_cfg.alpha, lambda_min=0.5, minibatch=32)
ppo_cfg = ppo.PpoConfig(lr_policy=3e-4)
cfg = trainer.TrainConfig(rounds=4, round_patience=4, agent_epochs=30, env_epochs=10, finetune_patience=5,
                          pretrain_epochs=15, pretrain_patience=5, seed=0)

res = trainer.co_evolve(ds, env_cfg, agent_cfg, dts_cfg, ppo_cfg, cfg)

print()
print("naive-all test:", trainer.test_metrics(res.pretrained, env_cfg, None, ds))
print("selected      :", trainer.test_metrics(res.env, env_cfg, res.agent, ds),
      f"(round {res.best_round})")
for row in res.round_log:
    print(f"round {row['round']}: val {row['val_loss']:.5f}  mean reward {row['mean_reward']:+.4f}")

if res.agent is not None:
    _, acts = trainer.infer(res.env, env_cfg, res.agent, ds.test[0])
    print("\nper-step share of u=1 / k>0 / q=1 on the test windows")
    for name, col in (("u", acts[..., 0]), ("k>0", acts[..., 1] > 0), ("q", acts[..., 2])):
        print(f"{name:>4}", np.round(col.mean(axis=0), 2))
