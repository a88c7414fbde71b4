"""Grouped pruning through a bottleneck finds the informative inputs.

The first dense layer of an MLP is written as ``W = U C``. With ``U`` the
identity, pruning whole columns of ``U`` removes input coordinates, so the
coordinates that survive are the ones the network reads. In the first part
three quarters of the inputs are label-independent noise.

In the second part the class means are smooth images built from the
lowest spatial frequencies, buried in white pixel noise. No small set of
pixels carries the signal, but a small set of DCT frequencies does, so the
DCT bottleneck can shrink much further than the identity one.

Run:  python3 demos/bottleneck_pixels.py
"""

import numpy as np

from glth import data, linalg, nn, plotting, pruning
from glth import dictionary as D


def prune(spec, u_kind, train, test, min_groups, epochs=15):
    bottleneck = D.make_bottleneck(spec, 1, u_kind)
    cfg = nn.TrainConfig(learning_rate=0.05, batch_size=64, epochs_per_round=epochs, seed=0)
    schedule = pruning.PruneSchedule(tau=0.8, rounds=50, grouped=True, min_active=min_groups)
    rounds = []

    def on_round(rec, active, coeffs, w):
        rounds.append((rec, bottleneck.surviving_groups(active), active, w))

    pruning.run_imp(spec, bottleneck, schedule, cfg, train, test, on_round=on_round)
    for rec, groups, _, _ in rounds:
        print(f"  round {rec.round:2d}: {groups.size:3d} groups, test accuracy {rec.test_accuracy:.3f}")
    return bottleneck, rounds


print("Part 1: identity bottleneck, 16 signal and 48 noise inputs")
shape = (4, 4, 4)
spec = nn.mlp(shape, hidden=(32,), classes=10)
train, test = data.synthetic_blobs(10, 200, shape, noise_dims=48, seed=0, separation=4.0)
bottleneck, rounds = prune(spec, "identity", train, test, min_groups=16)
_, groups, active, w = rounds[-1]
signal = set(data.signal_coordinates(shape, 48).tolist())
print(f"  surviving inputs: {groups.tolist()}")
print(f"  {sum(g in signal for g in groups)} of {groups.size} are signal coordinates")
print("  surviving pixels per channel:", plotting.pixel_masks(groups, shape).sum(axis=(1, 2)).tolist())

layer = pruning.export_factorized(bottleneck, active, w, input_shape=shape)
x = test.images.transpose(0, 3, 1, 2).reshape(len(test), -1)  # channel-planar flattening
dense = D.project(bottleneck, active, w)
wmat = dense[bottleneck.offset : bottleneck.stop].reshape(bottleneck.d_out, bottleneck.d_in)
bias = dense[bottleneck.stop : bottleneck.stop + bottleneck.d_out]
gap = np.max(np.abs(layer.apply(x) - (x @ wmat.T + bias)))
print(f"  factorized layer reads {layer.m} inputs; max gap to the dense layer {gap:.1e}")


print("\nPart 2: smooth images, identity vs DCT bottleneck")
side, classes, per_class = 8, 6, 200
rng = np.random.default_rng(1)
basis = linalg.dct_basis(side)
low = [p * side + q for p in range(3) for q in range(3)]  # 9 lowest frequencies
means = 2.0 * rng.standard_normal((classes, len(low))) @ basis[:, low].T
x = means[:, None, :] + rng.standard_normal((classes, per_class, side * side))
y = np.repeat(np.arange(classes), per_class).reshape(classes, per_class)
split = per_class // 5
to_ds = lambda xs, ys, name: data.Dataset(xs.reshape(-1, side, side, 1), ys.reshape(-1), name)
train, test = to_ds(x[:, split:], y[:, split:], "train"), to_ds(x[:, :split], y[:, :split], "test")

spec = nn.mlp((side, side, 1), hidden=(16,), classes=classes)
for u_kind in ("identity", "dct"):
    print(f" u = {u_kind}")
    _, rounds = prune(spec, u_kind, train, test, min_groups=len(low), epochs=10)
    groups = rounds[-1][1]
    if u_kind == "dct":
        freqs = sorted((int(g) // side, int(g) % side) for g in groups)
        print(f"  surviving frequencies (p, q): {freqs}")
