"""Orthonormal dictionaries over the flat parameter vector.

A dictionary ``{v_1, ..., v_d}`` is used as a pair of linear maps:
``forward`` turns coefficients ``a`` into parameters ``w = sum_i a_i v_i`` and
``adjoint`` recovers ``a = V^T w``. Nothing here materializes a ``d x d``
matrix unless :meth:`Dictionary.matrix` is called explicitly.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .nn import Dense, Flatten, NetworkSpec, ParamVector, param_layout

__all__ = [
    "Dictionary",
    "Canonical",
    "DenseOrthogonal",
    "BlockDiagonal",
    "Bottleneck",
    "ActiveSet",
    "NotGroupStructured",
    "to_coefficients",
    "from_coefficients",
    "project",
    "residual",
    "coefficient_residual",
    "make_block_diagonal",
    "unit_blocks",
    "random_dictionary",
    "make_bottleneck",
    "factorize",
]


class NotGroupStructured(ValueError):
    """An active set is not a union of bottleneck groups."""


def _vec(x, dim, what):
    x = x.values if isinstance(x, ParamVector) else np.asarray(x)
    if x.ndim != 1 or x.shape[0] != dim:
        raise ValueError(f"{what} has shape {x.shape}, dictionary dim is {dim}")
    return x


class Dictionary:
    """Base class. Subclasses implement ``_forward`` and ``_adjoint``."""

    dim: int

    def forward(self, a):
        return self._forward(_vec(a, self.dim, "coefficients"))

    def adjoint(self, w):
        return self._adjoint(_vec(w, self.dim, "parameters"))

    def matrix(self, limit=5000):
        """Materialize the basis as columns of a dense matrix (tests only)."""
        if self.dim > limit:
            raise ValueError(f"refusing to materialize a {self.dim}x{self.dim} dictionary")
        return np.stack([self._forward(e) for e in np.eye(self.dim)], axis=1)


class Canonical(Dictionary):
    def __init__(self, dim):
        self.dim = int(dim)

    def _forward(self, a):
        return np.array(a, dtype=np.float64)

    _adjoint = _forward

    def __repr__(self):
        return f"Canonical({self.dim})"


class DenseOrthogonal(Dictionary):
    def __init__(self, q, tol=1e-8):
        q = np.asarray(q, dtype=np.float64)
        if not linalg.verify_orthonormal(q, tol):
            raise ValueError("matrix is not orthonormal")
        self.q = q
        self.dim = q.shape[0]

    def _forward(self, a):
        return self.q @ a

    def _adjoint(self, w):
        return self.q.T @ w

    def __repr__(self):
        return f"DenseOrthogonal({self.dim})"


class BlockDiagonal(Dictionary):
    """Independent sub-dictionaries on disjoint contiguous ranges covering ``[0, dim)``."""

    def __init__(self, blocks):
        blocks = sorted(((int(s), int(e), d) for s, e, d in blocks), key=lambda b: b[0])
        pos = 0
        for start, stop, sub in blocks:
            if start != pos:
                raise ValueError(f"block ranges must partition [0, d); gap or overlap at {pos}")
            if sub.dim != stop - start:
                raise ValueError(f"block [{start}, {stop}) has sub-dictionary of dim {sub.dim}")
            pos = stop
        self.blocks = blocks
        self.dim = pos

    def _apply(self, x, method):
        out = np.empty(self.dim, dtype=np.float64)
        for start, stop, sub in self.blocks:
            out[start:stop] = getattr(sub, method)(x[start:stop])
        return out

    def _forward(self, a):
        return self._apply(a, "_forward")

    def _adjoint(self, w):
        return self._apply(w, "_adjoint")

    def __repr__(self):
        return f"BlockDiagonal({self.dim}, {len(self.blocks)} blocks)"


class Bottleneck(Dictionary):
    """Shared orthogonal ``u`` on every hidden unit of one dense layer.

    Inside the target weight segment, coefficient ``offset + k * d_in + l`` is
    the weight of column ``l`` of ``u`` for hidden unit ``k``. Every other
    parameter (including the layer's biases) keeps its own 1x1 identity block.
    """

    def __init__(self, dim, layer, offset, d_in, d_out, u, u_kind):
        self.dim = int(dim)
        self.layer = layer
        self.offset = int(offset)
        self.d_in = int(d_in)
        self.d_out = int(d_out)
        self.u = np.asarray(u, dtype=np.float64)
        self.u_kind = u_kind
        if self.u.shape != (self.d_in, self.d_in):
            raise ValueError(f"u must be {self.d_in}x{self.d_in}")
        if self.offset + self.d_in * self.d_out > self.dim:
            raise ValueError("target segment exceeds dictionary dim")

    @property
    def stop(self):
        return self.offset + self.d_in * self.d_out

    def _map(self, x, mat):
        out = np.array(x, dtype=np.float64)
        if self.u_kind != "identity":
            rows = out[self.offset : self.stop].reshape(self.d_out, self.d_in)
            out[self.offset : self.stop] = (rows @ mat).reshape(-1)
        return out

    def _forward(self, a):
        return self._map(a, self.u.T)

    def _adjoint(self, w):
        return self._map(w, self.u)

    def group(self, ell):
        """Global indices of the group removed together when column ``ell`` of ``u`` goes."""
        return self.offset + np.arange(self.d_out) * self.d_in + int(ell)

    def active_from_groups(self, groups):
        groups = np.unique(np.asarray(groups, dtype=np.int64))
        if groups.size and (groups[0] < 0 or groups[-1] >= self.d_in):
            raise ValueError("group index out of range")
        keep = np.ones(self.dim, dtype=bool)
        keep[self.offset : self.stop] = False
        inner = (self.offset + (np.arange(self.d_out)[:, None] * self.d_in + groups[None, :])).reshape(-1)
        keep[inner] = True
        return ActiveSet.from_mask(keep)

    def surviving_groups(self, active):
        """Sorted surviving ``l`` values; raises if ``active`` is not group-structured."""
        mask = active.mask()
        inner = mask[self.offset : self.stop].reshape(self.d_out, self.d_in)
        alive = inner[0]
        if not (inner == alive).all():
            raise NotGroupStructured("active set drops different columns for different units")
        if not (mask[: self.offset].all() and mask[self.stop :].all()):
            raise NotGroupStructured("active set drops parameters outside the bottleneck layer")
        return np.flatnonzero(alive)

    def __repr__(self):
        return f"Bottleneck(layer={self.layer}, d_in={self.d_in}, d_out={self.d_out}, u={self.u_kind})"


class ActiveSet:
    """Immutable sorted set of surviving basis indices out of ``dim``."""

    __slots__ = ("dim", "active")

    def __init__(self, dim, active):
        idx = np.unique(np.asarray(active, dtype=np.int64).reshape(-1))
        if idx.size and (idx[0] < 0 or idx[-1] >= dim):
            raise ValueError(f"active indices must lie in [0, {dim})")
        idx.setflags(write=False)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "active", idx)

    def __setattr__(self, name, value):
        raise AttributeError("ActiveSet is immutable")

    @classmethod
    def full(cls, dim):
        return cls(dim, np.arange(dim))

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.size, np.flatnonzero(mask))

    def mask(self):
        m = np.zeros(self.dim, dtype=bool)
        m[self.active] = True
        return m

    def __len__(self):
        return int(self.active.size)

    def __eq__(self, other):
        return isinstance(other, ActiveSet) and self.dim == other.dim and np.array_equal(self.active, other.active)

    def __repr__(self):
        return f"ActiveSet(dim={self.dim}, size={len(self)})"

    def issubset(self, other):
        return self.dim == other.dim and bool(np.isin(self.active, other.active).all())

    def to_text(self):
        return "".join([f"dim={self.dim}\n"] + [f"{i}\n" for i in self.active])

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("dim="):
            raise ValueError("active-set file must start with a 'dim=<d>' header")
        dim = int(lines[0][4:])
        return cls(dim, [int(s) for s in lines[1:] if s.strip()])


def _check_active(dictionary, active):
    if active.dim != dictionary.dim:
        raise ValueError(f"active set dim {active.dim} != dictionary dim {dictionary.dim}")


def to_coefficients(dictionary, w):
    return dictionary.adjoint(w)


def from_coefficients(dictionary, a):
    return dictionary.forward(a)


def project(dictionary, active, w):
    """Orthogonal projection of ``w`` onto the span of the active basis elements."""
    _check_active(dictionary, active)
    a = dictionary.adjoint(w)
    masked = np.zeros_like(a)
    masked[active.active] = a[active.active]
    return dictionary.forward(masked)


def residual(dictionary, active_next, w):
    """Squared distance ``||w - P w||^2`` to the span of ``active_next``."""
    wv = _vec(w, dictionary.dim, "parameters")
    diff = wv - project(dictionary, active_next, wv)
    return float(diff @ diff)


def coefficient_residual(dictionary, active_next, w):
    """Same quantity as :func:`residual`, summed over dropped coefficients."""
    _check_active(dictionary, active_next)
    a = dictionary.adjoint(w)
    dropped = ~active_next.mask()
    return float(a[dropped] @ a[dropped])


def _unit_stride(seg):
    return int(np.prod(seg.shape[1:])) if len(seg.shape) > 1 else 1


def _resolve_range(layout, key):
    if isinstance(key, slice):
        return key.start, key.stop
    if len(key) == 2 and isinstance(key[1], str):
        for seg in layout:
            if (seg.layer, seg.kind) == tuple(key):
                return seg.offset, seg.stop
        raise ValueError(f"no segment {key!r} in layout")
    return int(key[0]), int(key[1])


def _as_dictionary(block, size, seed=None):
    if isinstance(block, Dictionary):
        return block
    if isinstance(block, str) and block == "identity":
        return Canonical(size)
    if isinstance(block, tuple) and block[0] == "random":
        return DenseOrthogonal(linalg.random_orthogonal(size, block[1]))
    if isinstance(block, np.ndarray):
        return DenseOrthogonal(block)
    raise ValueError(f"unknown block kind {block!r}")


def make_block_diagonal(layout, per_segment):
    """Compose per-range dictionaries into one block-diagonal dictionary.

    Keys of ``per_segment`` are ``(layer, kind)`` segment keys, ``(start,
    stop)`` ranges or slices. A range must sit inside one layout segment and
    start/stop on a unit boundary of that segment. Values are a
    :class:`Dictionary`, an orthogonal matrix, ``"identity"`` or
    ``("random", seed)``. Uncovered parameters get identity blocks.
    """
    layout = tuple(layout)
    dim = layout[-1].stop if layout else 0
    blocks = []
    for key, block in per_segment.items():
        start, stop = _resolve_range(layout, key)
        seg = next((s for s in layout if s.offset <= start < s.stop), None)
        if seg is None or stop > seg.stop or stop <= start:
            raise ValueError(f"range [{start}, {stop}) does not fit inside one layout segment")
        stride = _unit_stride(seg)
        if (start - seg.offset) % stride or (stop - seg.offset) % stride:
            raise ValueError(f"range [{start}, {stop}) is not aligned to units of segment {seg.layer}/{seg.kind}")
        sub = _as_dictionary(block, stop - start)
        if sub.dim != stop - start:
            raise ValueError(f"block for [{start}, {stop}) has dim {sub.dim}")
        blocks.append((start, stop, sub))
    blocks.sort(key=lambda b: b[0])
    filled = []
    pos = 0
    for start, stop, sub in blocks:
        if start < pos:
            raise ValueError(f"overlapping blocks at {start}")
        if start > pos:
            filled.append((pos, start, Canonical(start - pos)))
        filled.append((start, stop, sub))
        pos = stop
    if pos < dim:
        filled.append((pos, dim, Canonical(dim - pos)))
    return BlockDiagonal(filled)


def unit_blocks(layout, layer, seed):
    """One random orthogonal block per hidden unit of ``layer``'s weights."""
    seg = next(s for s in layout if s.layer == layer and s.kind == "weight")
    stride = _unit_stride(seg)
    seeds = np.random.SeedSequence(seed).spawn(seg.shape[0])
    return {
        (seg.offset + k * stride, seg.offset + (k + 1) * stride): ("random", seeds[k])
        for k in range(seg.shape[0])
    }


def random_dictionary(layout, seed, mode="per_layer", max_block=4096, global_limit=5000):
    """Random rotation of the canonical basis.

    ``mode="global"`` draws one dense ``d x d`` rotation (only for
    ``d <= global_limit``). ``mode="per_layer"`` draws an independent dense
    rotation per layer (weights and biases together); layers larger than
    ``max_block`` are split into unit-aligned chunks plus a bias block.
    """
    layout = tuple(layout)
    dim = layout[-1].stop
    if mode == "global":
        if dim > global_limit:
            raise ValueError(f"global rotation of dim {dim} exceeds limit {global_limit}")
        return DenseOrthogonal(linalg.random_orthogonal(dim, seed))
    if mode != "per_layer":
        raise ValueError(f"unknown mode {mode!r}")
    ranges = []
    layers = sorted({s.layer for s in layout})
    for layer in layers:
        segs = [s for s in layout if s.layer == layer]
        start, stop = segs[0].offset, segs[-1].stop
        if stop - start <= max_block:
            ranges.append((start, stop))
            continue
        for seg in segs:
            stride = _unit_stride(seg)
            per_chunk = max(1, max_block // stride)
            for k in range(0, seg.shape[0], per_chunk):
                hi = min(seg.shape[0], k + per_chunk)
                ranges.append((seg.offset + k * stride, seg.offset + hi * stride))
    seeds = np.random.SeedSequence(seed).spawn(len(ranges))
    blocks = [(a, b, DenseOrthogonal(linalg.random_orthogonal(b - a, s))) for (a, b), s in zip(ranges, seeds)]
    return BlockDiagonal(blocks)


def _flatten_input_shape(spec, layer):
    shapes = spec.shapes()
    prev = layer - 1
    if prev < 0 or not isinstance(spec.layers[prev], Flatten):
        return None
    in_shape = shapes[prev][0]
    return in_shape if len(in_shape) == 3 else None


def make_bottleneck(spec: NetworkSpec, layer, u_kind="identity", seed=0):
    """Bottleneck dictionary sharing one orthogonal ``u`` across the units of ``layer``.

    ``u_kind`` is ``"identity"``, ``"dct"`` (one 2-D DCT basis per input
    channel; the layer must read a flattened square image) or ``"random"``.
    """
    if not 0 <= layer < len(spec.layers) or not isinstance(spec.layers[layer], Dense):
        raise ValueError(f"layer {layer} is not a Dense layer")
    layout = param_layout(spec)
    seg = next(s for s in layout if s.layer == layer and s.kind == "weight")
    d_out, d_in = seg.shape
    if u_kind == "identity":
        u = np.eye(d_in)
    elif u_kind == "dct":
        img = _flatten_input_shape(spec, layer)
        if img is None or img[0] != img[1]:
            raise ValueError("DCT bottleneck needs a layer fed by a flattened square image")
        side, _, channels = img
        if channels * side * side != d_in:
            raise ValueError("d_in does not match channels * side^2")
        u = np.kron(np.eye(channels), linalg.dct_basis(side))
    elif u_kind == "random":
        u = linalg.random_orthogonal(d_in, seed)
    else:
        raise ValueError(f"unknown u_kind {u_kind!r}")
    if not linalg.verify_orthonormal(u, 1e-8):
        raise ValueError("u is not orthonormal")
    return Bottleneck(layout[-1].stop, layer, seg.offset, d_in, d_out, u, u_kind)


def factorize(dictionary: Bottleneck, active, w):
    """Low-rank factors ``(U', C')`` with ``W = U' C'`` of the projected target layer.

    ``W`` is ``d_in x d_out`` (column ``k`` = incoming weights of unit ``k``).
    """
    if not isinstance(dictionary, Bottleneck):
        raise ValueError("factorize needs a Bottleneck dictionary")
    _check_active(dictionary, active)
    groups = dictionary.surviving_groups(active)
    a = dictionary.adjoint(w)
    coeffs = a[dictionary.offset : dictionary.stop].reshape(dictionary.d_out, dictionary.d_in).T
    return dictionary.u[:, groups].copy(), coeffs[groups, :].copy()
