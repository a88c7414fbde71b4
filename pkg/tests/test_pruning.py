import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glth import data, io, linalg, nn, pruning
from glth import dictionary as D
from oracles import exhaustive_group_residual, exhaustive_min_residual


class TestSparsity:
    def test_zero(self):
        assert pruning.sparsity(D.Canonical(4), np.zeros(4)) == 0

    def test_canonical(self):
        assert pruning.sparsity(D.Canonical(4), np.array([0.0, 5, 0, -2])) == 2

    def test_roundtrip_count(self):
        dic = D.DenseOrthogonal(linalg.random_orthogonal(20, 0))
        a = np.zeros(20)
        a[[1, 4, 5, 9, 11, 17, 19]] = np.arange(1, 8)
        assert pruning.sparsity(dic, dic.forward(a), zero_tol=1e-12) == 7


class TestKeepCount:
    def test_geometric(self):
        n, seen = 1000, [1000]
        for _ in range(3):
            n = pruning.keep_count(n, 0.5)
            seen.append(n)
        assert seen == [1000, 500, 250, 125]

    def test_always_shrinks(self):
        assert pruning.keep_count(3, 0.9) == 2
        assert pruning.keep_count(3, 0.67) == 2

    def test_exhausted(self):
        with pytest.raises(pruning.ScheduleExhausted):
            pruning.keep_count(1, 0.5)
        with pytest.raises(pruning.ScheduleExhausted):
            pruning.keep_count(4, 0.5, floor=4)

    def test_schedule_validation(self):
        for tau in (0.0, 1.0, 1.5):
            with pytest.raises(ValueError):
                pruning.PruneSchedule(tau=tau)


class TestSparsifyStep:
    def test_canonical_magnitude(self):
        a = np.array([3.0, -1, 4, 0.5])
        out = pruning.sparsify_step(D.Canonical(4), D.ActiveSet.full(4), a, 0.5)
        np.testing.assert_array_equal(out.active, [0, 2])

    def test_tie_drops_lowest_index(self):
        out = pruning.sparsify_step(D.Canonical(4), D.ActiveSet.full(4), np.array([1.0, -1, 1, 2]), 0.5)
        np.testing.assert_array_equal(out.active, [2, 3])

    def test_only_active_candidates(self):
        act = D.ActiveSet(5, [0, 1, 3])
        out = pruning.sparsify_step(D.Canonical(5), act, np.array([1.0, 2, 9, 3, 9]), 0.67)
        np.testing.assert_array_equal(out.active, [1, 3])

    def test_brute_force_d8(self):
        rng = np.random.default_rng(8)
        q = linalg.random_orthogonal(8, 8)
        dic = D.DenseOrthogonal(q)
        w = rng.standard_normal(8)
        act = D.ActiveSet.full(8)
        for keep in range(1, 8):
            out = pruning.sparsify_step(dic, act, w, keep / 8)
            best, subsets = exhaustive_min_residual(q, w, range(8), keep)
            assert len(out) == keep
            assert abs(D.residual(dic, out, w) - best) <= 1e-9
            assert tuple(out.active) in subsets

    def test_grouped_energy_example(self):
        spec = nn.mlp((1, 1, 3), hidden=(2,), classes=2)
        dic = D.make_bottleneck(spec, 1, "identity")
        w = np.zeros(dic.dim)
        # unit rows (d_out=2, d_in=3); group energies 9, 1, 4
        w[dic.offset : dic.stop] = [3.0, 0.0, 2.0, 0.0, 1.0, 0.0]
        out = pruning.sparsify_step(dic, D.ActiveSet.full(dic.dim), w, 0.67, grouped=True)
        np.testing.assert_array_equal(dic.surviving_groups(out), [0, 2])
        drops = {ell: D.residual(dic, dic.active_from_groups(np.delete(np.arange(3), ell)), w) for ell in range(3)}
        assert min(drops, key=drops.get) == 1
        # outside the layer nothing is pruned
        assert out.mask()[dic.stop :].all()

    def test_grouped_needs_bottleneck(self):
        with pytest.raises(ValueError):
            pruning.sparsify_step(D.Canonical(4), D.ActiveSet.full(4), np.ones(4), 0.5, grouped=True)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(2, 12), seed=st.integers(0, 2**31), data_=st.data())
def test_sparsify_optimal_property(d, seed, data_):
    q = linalg.random_orthogonal(d, seed)
    w = np.random.default_rng(seed + 1).standard_normal(d)
    keep = data_.draw(st.integers(1, d - 1))
    out = pruning.sparsify_step(D.DenseOrthogonal(q), D.ActiveSet.full(d), w, keep / d)
    best, _ = exhaustive_min_residual(q, w, range(d), keep)
    assert abs(D.residual(D.DenseOrthogonal(q), out, w) - best) <= 1e-9


@settings(max_examples=25, deadline=None)
@given(d_in=st.integers(2, 6), d_out=st.integers(1, 4), seed=st.integers(0, 2**31), data_=st.data())
def test_grouped_optimal_property(d_in, d_out, seed, data_):
    spec = nn.mlp((1, 1, d_in), hidden=(d_out,), classes=2)
    dic = D.make_bottleneck(spec, 1, "random", seed=seed)
    w = np.random.default_rng(seed).standard_normal(dic.dim)
    keep = data_.draw(st.integers(1, d_in - 1))
    out = pruning.sparsify_step(dic, D.ActiveSet.full(dic.dim), w, keep / d_in, grouped=True)
    best, subsets = exhaustive_group_residual(dic.matrix(), w, dic.group, list(range(d_in)), keep)
    assert abs(D.residual(dic, out, w) - best) <= 1e-9


def _task(seed=0, noise=2):
    tr, te = data.synthetic_blobs(3, 60, (1, 1, 6), noise_dims=noise, seed=seed)
    spec = nn.mlp((1, 1, 6), hidden=(6,), classes=3)
    cfg = nn.TrainConfig(epochs_per_round=4, batch_size=32, seed=seed)
    return spec, tr, te, cfg


class PinCheck(D.Dictionary):
    """Wraps a dictionary and asserts that inactive coefficients stay exactly zero."""

    def __init__(self, inner):
        self.inner, self.dim, self.inactive, self.calls = inner, inner.dim, None, 0

    def _forward(self, a):
        if self.inactive is not None:
            assert np.all(a[self.inactive] == 0.0)
            self.calls += 1
        return self.inner._forward(a)

    def _adjoint(self, w):
        return self.inner._adjoint(w)


class TestRunImp:
    def test_zero_rounds(self):
        spec, tr, te, cfg = _task()
        recs = pruning.run_imp(spec, D.Canonical(nn.param_layout(spec)[-1].stop),
                               pruning.PruneSchedule(rounds=0), cfg, tr, te)
        assert len(recs) == 1 and recs[0].compression_ratio == 0.0 and recs[0].round == 0

    @pytest.mark.parametrize("kind", ["canonical", "random"])
    def test_confinement_and_monotone_support(self, kind, monkeypatch):
        spec, tr, te, cfg = _task()
        layout = nn.param_layout(spec)
        inner = D.Canonical(layout[-1].stop) if kind == "canonical" else D.random_dictionary(layout, 0, "global")
        dic = PinCheck(inner)
        real = pruning.train_subspace

        def spy(spec_, dic_, active, start, cfg_, data_):
            dic.inactive = ~active.mask()
            return real(spec_, dic_, active, start, cfg_, data_)

        monkeypatch.setattr(pruning, "train_subspace", spy)
        seen = []
        recs = pruning.run_imp(spec, dic, pruning.PruneSchedule(0.7, 5), cfg, tr, te,
                               on_round=lambda r, a, c, w: seen.append((a, c, w)))
        assert dic.calls > 0
        d = dic.dim
        for (active, coeffs, w), rec in zip(seen, recs):
            assert np.all(coeffs[~active.mask()] == 0.0)
            assert pruning.sparsity(inner, w) <= len(active) or kind == "random"
            assert np.count_nonzero(coeffs) <= len(active)
            assert rec.compression_ratio == pytest.approx(1 - rec.active_count / d, abs=1e-12)
        for (a0, _, _), (a1, _, _) in zip(seen, seen[1:]):
            assert a1.issubset(a0) and len(a1) < len(a0)
        comp = [r.compression_ratio for r in recs]
        assert all(x < y for x, y in zip(comp, comp[1:]))

    def test_rewind_fidelity(self, tmp_path, monkeypatch):
        spec, tr, te, cfg = _task()
        layout = nn.param_layout(spec)
        dic = D.random_dictionary(layout, 3)
        starts = []
        real = pruning.train_subspace

        def spy(spec_, dic_, active, start, cfg_, data_):
            starts.append((active, dic_.forward(np.where(active.mask(), start, 0.0))))
            return real(spec_, dic_, active, start, cfg_, data_)

        monkeypatch.setattr(pruning, "train_subspace", spy)
        ckpt = tmp_path / "w0.ckpt"
        pruning.run_imp(spec, dic, pruning.PruneSchedule(0.6, 4), cfg, tr, te,
                        checkpoint_sink=lambda w0: io.write_checkpoint(ckpt, w0))
        w0 = io.read_checkpoint(ckpt)
        assert len(starts) == 5
        for active, start in starts:
            assert start.tobytes() == D.project(dic, active, w0).tobytes()

    def test_no_rewind_variant_runs(self):
        spec, tr, te, cfg = _task()
        recs = pruning.run_imp(spec, D.Canonical(nn.param_layout(spec)[-1].stop),
                               pruning.PruneSchedule(0.6, 2, rewind=False), cfg, tr, te)
        assert len(recs) == 3

    def test_exhaustion_stops(self):
        spec, tr, te, cfg = _task()
        d = nn.param_layout(spec)[-1].stop
        recs = pruning.run_imp(spec, D.Canonical(d), pruning.PruneSchedule(0.1, 10, min_active=d // 5),
                               cfg, tr, te)
        assert recs[-1].active_count >= d // 5 and len(recs) < 11
        assert math.isnan(recs[-1].sparsify_residual)

    def test_noise_feature_pruned_first(self):
        wins = 0
        for seed in range(10):
            tr, te = data.synthetic_blobs(2, 100, (1, 1, 2), noise_dims=1, seed=seed, separation=3.0)
            spec = nn.mlp((1, 1, 2), hidden=(4,), classes=2)
            d = nn.param_layout(spec)[-1].stop
            cfg = nn.TrainConfig(epochs_per_round=10, batch_size=32, seed=seed)
            prune_round = np.full(8, 99)
            prev = {}

            def on_round(rec, active, coeffs, w):
                if "act" in prev:
                    gone = np.setdiff1d(prev["act"].active, active.active)
                    kept = active.active
                    # brute-force check: every dropped coefficient is no larger than every kept one
                    a = prev["coeffs"]
                    assert np.abs(a[gone]).max() <= np.abs(a[kept]).min()
                    for i in gone[gone < 8]:
                        prune_round[i] = rec.round
                prev.update(act=active, coeffs=coeffs)

            pruning.run_imp(spec, D.Canonical(d), pruning.PruneSchedule(0.8, 10), cfg, tr, te, on_round=on_round)
            # first-layer weight of unit k on feature f sits at 2k + f
            wins += prune_round[1::2].mean() < prune_round[0::2].mean()
        assert wins >= 9


class TestFixedSubspace:
    def test_full_equals_vanilla(self):
        spec, tr, te, cfg = _task()
        d = nn.param_layout(spec)[-1].stop
        dic = D.random_dictionary(nn.param_layout(spec), 1, "global")
        base = pruning.run_fixed_subspace(spec, dic, d, 7, cfg, tr, te)
        van = pruning.run_imp(spec, dic, pruning.PruneSchedule(rounds=0), cfg, tr, te)[0]
        assert (base.train_accuracy, base.test_accuracy) == (van.train_accuracy, van.test_accuracy)
        assert base.compression_ratio == 0.0

    def test_range(self):
        spec, tr, te, cfg = _task()
        d = nn.param_layout(spec)[-1].stop
        for s in (0, d + 1):
            with pytest.raises(ValueError):
                pruning.run_fixed_subspace(spec, D.Canonical(d), s, 0, cfg, tr, te)

    def test_compression(self):
        spec, tr, te, cfg = _task()
        d = nn.param_layout(spec)[-1].stop
        rec = pruning.run_fixed_subspace(spec, D.Canonical(d), 10, 0, cfg, tr, te)
        assert rec.compression_ratio == pytest.approx(1 - 10 / d) and rec.round == 0


class TestExport:
    def _setup(self, u_kind, groups):
        spec = nn.mlp((2, 2, 3), hidden=(5,), classes=2)
        dic = D.make_bottleneck(spec, 1, u_kind, seed=1)
        w = np.random.default_rng(0).standard_normal(dic.dim)
        act = dic.active_from_groups(groups)
        return spec, dic, w, act

    def test_full_reproduces_dense(self):
        spec, dic, w, act = self._setup("random", range(12))
        layer = pruning.export_factorized(dic, act, w)
        np.testing.assert_allclose(layer.weight(), w[dic.offset : dic.stop].reshape(5, 12).T, atol=1e-12)
        assert layer.m == 12

    def test_identity_skips_inputs(self):
        spec, dic, w, act = self._setup("identity", [0, 7, 11])
        layer = pruning.export_factorized(dic, act, w, input_shape=(2, 2, 3))
        wm = layer.weight()
        assert np.count_nonzero(np.abs(wm).sum(axis=1)) == 3
        assert np.all(wm[np.setdiff1d(np.arange(12), [0, 7, 11])] == 0)

    @pytest.mark.parametrize("u_kind", ["identity", "random", "dct"])
    def test_forward_dual_path(self, u_kind, tmp_path):
        spec, dic, w, act = self._setup(u_kind, [1, 2, 6, 9])
        layer = pruning.export_factorized(dic, act, w, input_shape=(2, 2, 3))
        layer.save(tmp_path / "f.npz")
        again = pruning.FactorizedLayer.load(tmp_path / "f.npz")
        wproj = D.project(dic, act, w)
        dense_w = wproj[dic.offset : dic.stop].reshape(5, 12).T
        x = np.random.default_rng(5).standard_normal((100, 12))
        ref = x @ dense_w + wproj[dic.stop : dic.stop + 5]
        np.testing.assert_allclose(again.apply(x), ref, atol=1e-5)
        # first layer of the full network, computed by the network itself
        img = x.reshape(100, 3, 2, 2).transpose(0, 2, 3, 1)
        head = nn.NetworkSpec((2, 2, 3), [nn.Flatten(), nn.Dense(5), nn.ReLU(), nn.Head(2)], 2)
        np.testing.assert_allclose(nn.forward(head, wproj, img),
                                   np.maximum(ref, 0) @ wproj[dic.stop + 5 : dic.stop + 15].reshape(2, 5).T
                                   + wproj[-2:], atol=1e-5)
        assert again.m == 4 and again.input_shape == (2, 2, 3)
