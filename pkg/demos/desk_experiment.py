"""Desk-scale comparison of RRE against the Naive-all baseline.

Runs ``rre train`` on ``demos/desk.ini`` for each seed in both modes (the
synthetic series is regenerated from the same seed) and prints per-seed
test MSE with the relative improvement. Roughly six minutes per seed on one
CPU core.

    python demos/desk_experiment.py [seed ...]
"""

import json
import sys
import tempfile
from pathlib import Path

from rre import cli

HERE = Path(__file__).resolve().parent


def run(tmp: Path, mode: str, seed: int) -> float:
    out = tmp / f"{mode}-{seed}"
    text = (HERE / "desk.ini").read_text().replace("synth_seed = 0", f"synth_seed = {seed}")
    text += f"\n[run]\nmode = {mode}\nseeds = {seed}\noutput_dir = {out}\n"
    cfg = tmp / f"{mode}-{seed}.ini"
    cfg.write_text(text)
    if cli.main(["train", "--config", str(cfg)]) != 0:
        sys.exit(f"training failed for {mode} seed {seed}")
    return json.loads((out / "metrics.json").read_text())["mse"]["mean"]


def main(seeds):
    rows = []
    with tempfile.TemporaryDirectory() as d:
        for seed in seeds:
            naive = run(Path(d), "naive-all", seed)
            rre = run(Path(d), "rre", seed)
            rows.append((seed, naive, rre, cli.improvement(naive, rre)))
            print(f"seed {seed}: naive-all {naive:.4f}  rre {rre:.4f}  improvement {rows[-1][3]:+.2f}%",
                  flush=True)
    wins = sum(r[2] <= r[1] for r in rows)
    mean_imp = sum(r[3] for r in rows) / len(rows)
    print(f"\nrre <= naive-all in {wins}/{len(rows)} seeds, mean improvement {mean_imp:.2f}%")


if __name__ == "__main__":
    main([int(s) for s in sys.argv[1:]] or [0, 1, 2, 3, 4])
