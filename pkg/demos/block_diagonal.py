"""Mixing dictionaries layer by layer.

A block-diagonal dictionary applies a separate orthonormal block to each
range of parameters. Here the hidden layer is pruned in a rotated basis per
unit, while the output head is pruned weight by weight. The pruning step
then compares magnitudes across both kinds of coefficient.

Run:  python3 demos/block_diagonal.py
"""

from glth import data, nn, pruning
from glth import dictionary as D

spec = nn.mlp((1, 1, 16), hidden=(24,), classes=4)
layout = nn.param_layout(spec)
for seg in layout:
    print(f"layer {seg.layer} {seg.kind:6s} {str(seg.shape):10s} entries {seg.offset}:{seg.stop}")

blocks = D.unit_blocks(layout, 1, seed=5)  # one 16x16 rotation per hidden unit
blocks[(3, "weight")] = "identity"
dictionary = D.make_block_diagonal(layout, blocks)

train, test = data.synthetic_blobs(4, 150, (1, 1, 16), noise_dims=4, seed=1)
cfg = nn.TrainConfig(learning_rate=0.05, batch_size=32, epochs_per_round=10, seed=1)
recs = pruning.run_imp(spec, dictionary, pruning.PruneSchedule(tau=0.7, rounds=8), cfg, train, test)

print()
for r in recs:
    print(f"round {r.round}: {r.active_count:4d} coefficients, compression {r.compression_ratio:.3f}, "
          f"test accuracy {r.test_accuracy:.3f}, pruning residual {r.sparsify_residual:.4f}")
