"""Command-line entry points: train, infer, bench and synth.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from rre import agent as ag
from rre import baselines, data, trainer
from rre.config import RunConfig, load_config
from rre.env import EnvConfig
from rre.errors import CheckpointError, ConfigError, RREError, ShapeError
from rre.numerics import checkpoint

log = logging.getLogger("rre")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_CHECKPOINT = 0, 1, 2, 3
LOG_COLUMNS = ("round", "epoch", "phase", "train_loss", "val_loss", "mean_reward")


def _setup_logging() -> None:
    level = os.environ.get("RRE_LOG", "error").lower()
    if level not in ("error", "info", "debug"):
        level = "error"
    logging.basicConfig(level=getattr(logging, level.upper()), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _inside(out_dir: Path, *parts) -> Path:
    """Join ``parts`` onto ``out_dir`` and refuse anything escaping it."""
    root = out_dir.resolve()
    path = root.joinpath(*parts).resolve()
    if root != path and root not in path.parents:
        raise ConfigError(f"output path {path} escapes {root}")
    return path


def load_series(cfg: RunConfig) -> data.RawSeries:
    d = cfg.data
    if d.path:
        return data.load_csv(d.path, d.target)
    return data.synthetic_series(d.synth_steps, d.synth_noise_frac, d.synth_seed)


# ---------------------------------------------------------------------------
# training


def train_one(cfg: RunConfig, ds: data.Dataset, mode: str, seed: int, backbone: str | None = None):
    """Train one model; returns ``(env_store, env_cfg, agent_or_None, epoch_log, best_round)``."""
    env_cfg = cfg.env_config(ds.d_in, backbone)
    tcfg = cfg.train_config(seed)
    if mode == "rre":
        res = trainer.co_evolve(ds, env_cfg, cfg.agent_config(env_cfg), cfg.dts_config(env_cfg),
                                cfg.ppo_config(), tcfg)
        return res.env, env_cfg, res.agent, res.epoch_log, res.best_round
    store, _ = baselines.train_naive(ds, env_cfg, tcfg, mode.split("-")[1])
    return store, env_cfg, None, [], 0


def evaluate(store, env_cfg, agent, ds) -> dict:
    return trainer.test_metrics(store, env_cfg, agent, ds)


def summarize(per_seed: dict) -> dict:
    """``{"mse": {mean, std, per_seed}, "mae": {...}}``; std is the population std."""
    out = {}
    for metric in ("mse", "mae"):
        vals = {str(s): float(m[metric]) for s, m in per_seed.items()}
        arr = np.array(list(vals.values()))
        out[metric] = {"mean": float(arr.mean()), "std": float(arr.std()), "per_seed": vals}
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_epoch_log(path: Path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in LOG_COLUMNS])


def save_model(path: Path, store, env_cfg: EnvConfig, agent, ds: data.Dataset, mode: str,
               seed: int, best_round: int) -> None:
    sections = {"env": store}
    meta = {
        "mode": mode, "seed": seed, "best_round": best_round,
        "env": {f: getattr(env_cfg, f) for f in ("cell", "d_in", "d_h", "horizon", "skip_window", "alpha", "c")},
        "T": ds.T, "H": ds.H, "names": list(ds.series.names), "target": ds.series.target,
        "scaler": ds.scaler.to_dict(),
    }
    if agent is not None:
        sections["policy"] = agent.policy
        sections["value"] = agent.value
        c = agent.cfg
        meta["agent"] = {f: getattr(c, f) for f in ("d_h", "d_in", "skip_window", "d_e", "layers",
                                                     "heads", "d_ff", "dropout")}
    checkpoint.save(path, sections, meta)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seeds = (args.seed,) if args.seed is not None else cfg.run.seeds
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = data.prepare(load_series(cfg), cfg.data.T, cfg.data.H)
    per_seed = {}
    for seed in seeds:
        log.info("training mode=%s seed=%d", cfg.run.mode, seed)
        store, env_cfg, agent, epoch_log, best_round = train_one(cfg, ds, cfg.run.mode, seed)
        per_seed[seed] = evaluate(store, env_cfg, agent, ds)
        save_model(_inside(out, f"seed{seed}.ckpt"), store, env_cfg, agent, ds, cfg.run.mode, seed, best_round)
        write_epoch_log(_inside(out, f"seed{seed}_log.csv"), epoch_log)
    _inside(out, "metrics.json").write_text(dump_json(summarize(per_seed)), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inference


def load_model(path):
    sections, meta = checkpoint.load(path)
    try:
        env_cfg = EnvConfig(**meta["env"])
        agent = None
        if "agent" in meta:
            agent = ag.Agent(ag.AgentConfig(**meta["agent"]), sections["policy"], sections["value"])
        scaler = data.Scaler.from_dict(meta["scaler"])
        return sections["env"], env_cfg, agent, scaler, meta
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint metadata incomplete: {exc}") from exc


def sliding_windows(values: np.ndarray, T: int) -> np.ndarray:
    n = len(values) - T + 1
    if n < 1:
        raise ShapeError(f"input has {len(values)} rows, need at least T = {T}")
    return np.stack([values[i : i + T] for i in range(n)])


def cmd_infer(args) -> int:
    store, env_cfg, agent, scaler, meta = load_model(args.checkpoint)
    names, target = meta["names"], meta["target"]
    series = data.load_csv(args.input, names[target])
    if list(series.names) != list(names):
        raise ShapeError(f"input columns {series.names} differ from training columns {names}")
    X = sliding_windows(data.transform(scaler, series.values), meta["T"])
    pred, actions = trainer.infer(store, env_cfg, agent, X)
    pred = scaler.inverse_column(pred, target)
    out = Path(args.output)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"y_plus_{j + 1}" for j in range(pred.shape[1])])
        for row in pred:
            w.writerow([repr(float(v)) for v in row])
    act_path = out.with_name(out.stem + "_actions.csv")
    with open(act_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "t", "u", "k"])
        for i, seq in enumerate(actions):
            for t, (u, k, _q) in enumerate(seq, start=1):
                w.writerow([i, t, int(u), int(k)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark


def improvement(baseline: float, ours: float) -> float:
    """Relative improvement ``(baseline - ours) / baseline`` as a percentage."""
    return 100.0 * (baseline - ours) / baseline


def bench_table(results: dict) -> list:
    """Rows from ``{(backbone, mode): {seed: metrics}}``, sorted by (backbone, mode).

    Each group lists its per-seed rows, then a ``mean`` row whose improvement
    is measured against naive-all on the same backbone.
    """
    rows = []
    for backbone, mode in sorted(results):
        per_seed = results[(backbone, mode)]
        for seed in sorted(per_seed):
            m = per_seed[seed]
            rows.append([mode, backbone, str(seed), m["mse"], m["mae"], ""])
        mse = float(np.mean([m["mse"] for m in per_seed.values()]))
        mae = float(np.mean([m["mae"] for m in per_seed.values()]))
        base = results.get((backbone, "naive-all"))
        imp = ""
        if base:
            base_mse = float(np.mean([m["mse"] for m in base.values()]))
            imp = f"{improvement(base_mse, mse):.2f}"
        rows.append([mode, backbone, "mean", mse, mae, imp])
    return rows


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    out = Path(cfg.run.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = data.prepare(load_series(cfg), cfg.data.T, cfg.data.H)
    results = {}
    for backbone in cfg.run.backbones:
        for mode in cfg.run.modes:
            for seed in cfg.run.seeds:
                log.info("bench backbone=%s mode=%s seed=%d", backbone, mode, seed)
                store, env_cfg, agent, _, _ = train_one(cfg, ds, mode, seed, backbone)
                results.setdefault((backbone.upper(), mode), {})[seed] = evaluate(store, env_cfg, agent, ds)
    with open(_inside(out, "bench.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "backbone", "seed", "mse", "mae", "improvement_pct"])
        for row in bench_table(results):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthetic data


def cmd_synth(args) -> int:
    if args.steps < 1 or not 0.0 <= args.noise_frac <= 1.0:
        raise ConfigError("need steps >= 1 and noise-frac in [0, 1]")
    data.write_csv(args.out, data.synthetic_series(args.steps, args.noise_frac, args.seed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rre", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train per seed; writes checkpoints, logs and metrics.json")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="forecast every length-T window of a CSV")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="compare modes and backbones over seeds")
    b.add_argument("--config", required=True)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="write the synthetic noise-injection series")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--noise-frac", type=float, default=0.15)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (RREError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
