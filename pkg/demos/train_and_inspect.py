"""Train a small three-follower platoon, evaluate it, and look at the links it learned to use.

The channel drops 20% of packets and delays the rest by 1-3 steps. Returns
usually start to climb after ten thousand or so steps; shorter runs only show
the workflow. The learned policy is then compared against the same checkpoint
with every delivered link forced on, and the link frequencies are printed.
The default budget takes about five minutes on one core.

    python demos/train_and_inspect.py [total_steps]
"""
import sys
from pathlib import Path

import numpy as np

from dctmarl.config import load_config
from dctmarl.marl import evaluate, learner_from_checkpoint, read_curve, train
from dctmarl.metrics import mean_stability
from dctmarl.plots import heatmap_svg, learning_curve_svg
from dctmarl.topology import communication_heatmap

ROOT = Path(__file__).resolve().parent
OUT = ROOT / "out_train"


def main(steps: int):
    cfg = load_config(ROOT.parent / "configs" / "robustness.ini").replace(train={"total_steps": steps})
    res = train(cfg, seed=1, out_dir=OUT)
    curve = read_curve(res.curve_path)
    print(f"{len(curve)} episodes in {steps} steps")
    for row in curve[:: max(1, len(curve) // 8)]:
        print(f"  step {int(row[1]):6d}  mean return {row[2]:10.1f}")
    learning_curve_svg(OUT / "learning_curve.svg", [("seed 1", curve[:, 1:3])])

    learned = learner_from_checkpoint(cfg, res.checkpoint_path).execution_mode(True)
    results = evaluate(cfg, learned, episodes=5, seed=3)
    fixed_cfg = cfg.replace(train={"ablation": "fixed-topology"})
    fixed = learner_from_checkpoint(fixed_cfg, res.checkpoint_path).execution_mode(True)
    fixed_results = evaluate(fixed_cfg, fixed, episodes=5, seed=3)
    print(f"mean S, learned links: {mean_stability([r[0] for r in results]):.3f}")
    print(f"mean S, all delivered links: {mean_stability([r[0] for r in fixed_results]):.3f}")

    freq = communication_heatmap([adj for _, adj, _ in results])
    print("link frequency (rows: sender, columns: receiver; nan = not applicable)")
    print(np.array2string(freq, precision=2))
    heatmap_svg(OUT / "heatmap.svg", freq)
    print(f"figures in {OUT}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 12000)
