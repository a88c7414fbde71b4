"""Pruning in a random rotated basis beats a fixed random subspace.

A small MLP is trained on Gaussian blobs. We run iterative magnitude
pruning twice: once in the canonical basis (ordinary weight pruning), and
once in a Haar-random orthonormal basis of the whole parameter space. At
the sizes the pruning schedule reaches, we also train inside a random
subspace picked before any training happens.

Run:  python3 demos/random_dictionary_vs_fixed_subspace.py [--out curves.svg]
"""

import argparse

import numpy as np

from glth import data, nn, pruning, plotting
from glth import dictionary as D

parser = argparse.ArgumentParser()
parser.add_argument("--out", default="curves.svg")
parser.add_argument("--seeds", type=int, default=2)
args = parser.parse_args()

spec = nn.mlp((1, 1, 32), hidden=(32,), classes=10)
layout = nn.param_layout(spec)
d = layout[-1].stop
print(f"network has {d} parameters")

schedule = pruning.PruneSchedule(tau=0.8, rounds=15)
curves = {"canonical": [], "random": [], "fixed subspace": []}

for seed in range(args.seeds):
    train, test = data.synthetic_blobs(10, 200, (1, 1, 32), noise_dims=8, seed=seed, separation=4.0)
    cfg = nn.TrainConfig(learning_rate=0.05, batch_size=64, epochs_per_round=15, seed=seed)

    canon = pruning.run_imp(spec, D.Canonical(d), schedule, cfg, train, test)
    rotated = D.random_dictionary(layout, 1000 + seed, mode="global")
    rand = pruning.run_imp(spec, rotated, schedule, cfg, train, test)
    # the baseline uses the same rotated basis but a random, untrained choice of directions
    fixed = [pruning.run_fixed_subspace(spec, rotated, r.active_count, seed, cfg, train, test) for r in rand[1:]]

    curves["canonical"].append(canon)
    curves["random"].append(rand)
    curves["fixed subspace"].append(fixed)

print(f"\n{'compression':>11}  {'canonical':>9}  {'random':>9}  {'fixed':>9}")
mean = {k: np.mean([[r.test_accuracy for r in recs] for recs in v], axis=0) for k, v in curves.items()}
comp = [r.compression_ratio for r in curves["canonical"][0]]
for i, c in enumerate(comp):
    fixed = f"{mean['fixed subspace'][i - 1]:9.3f}" if i else " " * 9
    print(f"{c:11.3f}  {mean['canonical'][i]:9.3f}  {mean['random'][i]:9.3f}  {fixed}")

series = [(k, [r.compression_ratio for r in v[0]], mean[k]) for k, v in curves.items()]
with open(args.out, "w") as fh:
    fh.write(plotting.curves_svg(series))
print(f"\nwrote {args.out}")
