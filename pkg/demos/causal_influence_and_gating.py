"""How neighbour relevance is scored and how links are chosen from it.

Part one builds small Q tables for two agents. A separable table, where
agent j's action only shifts agent i's value, scores exactly zero influence.
Coupled tables score more as the coupling grows.

Part two runs the binary Gumbel gate on a single receiver with five
candidate senders. It prints how often each sender is picked under the
top-m cap, and shows that undelivered senders are never picked.

    python demos/causal_influence_and_gating.py
"""
import numpy as np

from dctmarl.config import ScenarioConfig
from dctmarl.nn import Tensor
from dctmarl.topology import action_bins, causal_influence, gated_keys, influence_confidence


def influence_tables():
    bins = action_bins(ScenarioConfig(), 11)
    ui, uj = np.meshgrid(bins, bins, indexing="ij")
    print("coupling  influence  confidence")
    for k in (0.0, 0.05, 0.2, 0.5, 1.0):
        def q(a, b, k=k):
            return -(a - 0.5) ** 2 - 0.3 * b - k * (a - b) ** 2
        kl = causal_influence(q, 0, 1, bins, lam=1.0)
        print(f"{k:8.2f}  {kl:9.5f}  {influence_confidence(kl):10.5f}")
    print(f"separable table (k = 0) is exactly {causal_influence(lambda a, b: a * 0.1 - b, 0, 1, bins, 1.0)!r}")


def gate_frequencies():
    rng = np.random.default_rng(0)
    logits = np.array([2.0, 0.5, 0.0, -1.0, 1.0])
    delivered = np.array([True, True, True, True, False])      # sender 4 was lost this step
    n = 20_000
    noise = rng.logistic(size=(n, 5))
    hard, _ = gated_keys(Tensor(np.tile(logits, (n, 1))), np.tile(delivered, (n, 1)), 2, 1.0, noise)
    print("\nsender  logit  delivered  picked")
    for s in range(5):
        print(f"{s:6d}  {logits[s]:5.1f}  {str(delivered[s]):9s}  {hard[:, s].mean():6.3f}")
    print(f"links per step: mean {hard.sum(axis=1).mean():.2f}, max {hard.sum(axis=1).max()} (cap 2)")


if __name__ == "__main__":
    influence_tables()
    gate_frequencies()
