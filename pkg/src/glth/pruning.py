"""Generalized iterative magnitude pruning over an orthonormal dictionary."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dictionary import (
    ActiveSet,
    Bottleneck,
    Dictionary,
    coefficient_residual,
    factorize,
)
from .nn import ParamVector, TrainConfig, evaluate, init_params, loss_and_grad, sgd

__all__ = [
    "PruneSchedule",
    "RunRecord",
    "ScheduleExhausted",
    "FactorizedLayer",
    "keep_count",
    "sparsity",
    "sparsify_step",
    "train_subspace",
    "run_imp",
    "run_fixed_subspace",
    "export_factorized",
]


class ScheduleExhausted(Exception):
    """Nothing left to prune under the schedule's floor."""


@dataclass(frozen=True)
class PruneSchedule:
    tau: float = 0.8
    rounds: int = 10
    grouped: bool = False
    min_active: int = 1  # counts groups when grouped
    rewind: bool = True

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.rounds < 0 or self.min_active < 1:
            raise ValueError("rounds must be >= 0 and min_active >= 1")


@dataclass
class RunRecord:
    round: int
    active_count: int
    compression_ratio: float
    train_accuracy: float
    test_accuracy: float
    sparsify_residual: float

    def as_dict(self):
        return asdict(self)


def keep_count(n, tau, floor=1):
    """Survivors after one sparsify step: ``ceil(tau * n)``, strictly fewer than ``n``."""
    k = min(math.ceil(tau * n - 1e-9), n - 1)
    k = max(k, floor)
    if k >= n:
        raise ScheduleExhausted(f"cannot prune below {n} (floor {floor})")
    return k


def sparsity(dictionary, w, zero_tol=1e-12):
    """Number of coefficients of ``w`` with magnitude above ``zero_tol``."""
    a = dictionary.adjoint(w)
    return int(np.count_nonzero(np.abs(a) > zero_tol))


def _top(scores, candidates, keep):
    """The ``keep`` candidates with largest score; ties drop the lowest index first."""
    order = np.lexsort((-candidates, -scores))
    return np.sort(candidates[order[:keep]])


def sparsify_step(dictionary: Dictionary, active: ActiveSet, w, tau, grouped=False, min_active=1):
    """Shrink ``active`` to minimize ``||w - P w||^2`` under the size budget.

    Ungrouped: keep the ``ceil(tau * |active|)`` largest-magnitude
    coefficients. Grouped (bottleneck only): rank surviving columns ``l`` of
    ``u`` by the energy of their coefficients across all units and keep the
    top ``ceil(tau * groups)``; parameters outside the layer are never pruned.
    """
    a = dictionary.adjoint(w)
    if not grouped:
        cand = active.active
        keep = keep_count(cand.size, tau, min_active)
        return ActiveSet(active.dim, _top(np.abs(a[cand]), cand, keep))
    if not isinstance(dictionary, Bottleneck):
        raise ValueError("grouped pruning needs a Bottleneck dictionary")
    groups = dictionary.surviving_groups(active)
    keep = keep_count(groups.size, tau, min_active)
    coeffs = a[dictionary.offset : dictionary.stop].reshape(dictionary.d_out, dictionary.d_in)
    energy = (coeffs[:, groups] ** 2).sum(axis=0)
    return dictionary.active_from_groups(_top(energy, groups, keep))


def train_subspace(spec, dictionary, active, start_coeffs, cfg, data):
    """Train the active coefficients; inactive ones stay exactly zero.

    Returns the trained coefficient vector.
    """
    mask = active.mask()
    a0 = np.where(mask, start_coeffs, 0.0)

    def loss_grad(a, xb, yb):
        loss, g = loss_and_grad(spec, dictionary.forward(a), xb, yb)
        return loss, dictionary.adjoint(g)

    def pin(g):
        g[~mask] = 0.0
        return g

    return sgd(a0, loss_grad, data, cfg, pin)


def run_imp(
    spec,
    dictionary,
    schedule: PruneSchedule,
    train_cfg: TrainConfig,
    train_data,
    test_data,
    checkpoint_sink: Optional[Callable[[ParamVector], None]] = None,
    on_round: Optional[Callable] = None,
):
    """Iterative magnitude pruning with rewinding to the original initialization.

    Round 0 trains over the full dictionary. Each round ``t`` restarts from
    the projection of ``w0`` onto the current span, trains there, then prunes.
    ``on_round(record, active, coeffs, w)`` is called after every round.
    """
    w0 = init_params(spec, train_cfg.seed)
    if checkpoint_sink is not None:
        checkpoint_sink(w0)
    d = dictionary.dim
    if w0.dim != d:
        raise ValueError(f"dictionary dim {d} != parameter count {w0.dim}")
    a_init = dictionary.adjoint(w0)
    active = ActiveSet.full(d)
    start = a_init
    records = []
    for t in range(schedule.rounds + 1):
        coeffs = train_subspace(spec, dictionary, active, start, train_cfg, train_data)
        w = ParamVector(dictionary.forward(coeffs), w0.layout)
        nxt, res = None, float("nan")
        if t < schedule.rounds:
            try:
                nxt = sparsify_step(dictionary, active, w, schedule.tau, schedule.grouped, schedule.min_active)
                res = coefficient_residual(dictionary, nxt, w)
            except ScheduleExhausted:
                nxt = None
        rec = RunRecord(
            round=t,
            active_count=len(active),
            compression_ratio=1.0 - len(active) / d,
            train_accuracy=evaluate(spec, w, train_data),
            test_accuracy=evaluate(spec, w, test_data),
            sparsify_residual=res,
        )
        records.append(rec)
        if on_round is not None:
            on_round(rec, active, coeffs, w)
        if nxt is None:
            break
        active = nxt
        start = a_init if schedule.rewind else coeffs
    return records


def run_fixed_subspace(spec, dictionary, s, seed, train_cfg, train_data, test_data):
    """Train once over ``s`` dictionary elements drawn uniformly at random."""
    d = dictionary.dim
    if not 1 <= s <= d:
        raise ValueError(f"s must lie in [1, {d}], got {s}")
    chosen = np.random.default_rng(seed).choice(d, size=s, replace=False)
    active = ActiveSet(d, chosen)
    w0 = init_params(spec, train_cfg.seed)
    coeffs = train_subspace(spec, dictionary, active, dictionary.adjoint(w0), train_cfg, train_data)
    w = ParamVector(dictionary.forward(coeffs), w0.layout)
    return RunRecord(
        round=0,
        active_count=s,
        compression_ratio=1.0 - s / d,
        train_accuracy=evaluate(spec, w, train_data),
        test_accuracy=evaluate(spec, w, test_data),
        sparsify_residual=float("nan"),
    )


@dataclass
class FactorizedLayer:
    """Dense layer stored as ``W = U C`` with ``m`` surviving columns of ``u``.

    With ``m << min(d_in, d_out)`` the two thin products are cheaper than the
    full ``d_in x d_out`` one. For an identity ``u`` the layer only reads the
    ``m`` input coordinates listed in ``groups``.
    """

    layer: int
    d_in: int
    d_out: int
    u_kind: str
    groups: np.ndarray
    u: np.ndarray  # (d_in, m)
    c: np.ndarray  # (m, d_out)
    bias: np.ndarray  # (d_out,)
    input_shape: Optional[tuple] = None

    @property
    def m(self):
        return int(self.groups.size)

    def weight(self):
        return self.u @ self.c

    def apply(self, x):
        """Layer pre-activations for flat inputs ``x`` of shape ``(N, d_in)``."""
        if self.u_kind == "identity":
            return x[:, self.groups] @ self.c + self.bias
        return (x @ self.u) @ self.c + self.bias

    def save(self, path):
        meta = {
            "layer": self.layer,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "m": self.m,
            "u_kind": self.u_kind,
            "input_shape": list(self.input_shape) if self.input_shape else None,
        }
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), groups=self.groups,
                     u=self.u, c=self.c, bias=self.bias)

    @classmethod
    def load(cls, path):
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            layer = cls(
                layer=meta["layer"],
                d_in=meta["d_in"],
                d_out=meta["d_out"],
                u_kind=meta["u_kind"],
                groups=z["groups"],
                u=z["u"],
                c=z["c"],
                bias=z["bias"],
                input_shape=tuple(meta["input_shape"]) if meta["input_shape"] else None,
            )
        if layer.m != meta["m"]:
            raise ValueError(f"{path}: header m={meta['m']} but {layer.m} groups stored")
        return layer


def export_factorized(dictionary: Bottleneck, active, w, input_shape=None):
    u, c = factorize(dictionary, active, w)
    wv = w.values if isinstance(w, ParamVector) else np.asarray(w)
    # bias segment directly follows the weight segment in the layout
    bias = wv[dictionary.stop : dictionary.stop + dictionary.d_out].copy()
    return FactorizedLayer(
        layer=dictionary.layer,
        d_in=dictionary.d_in,
        d_out=dictionary.d_out,
        u_kind=dictionary.u_kind,
        groups=dictionary.surviving_groups(active),
        u=u,
        c=c,
        bias=bias,
        input_shape=tuple(input_shape) if input_shape else None,
    )
