"""Lifting and group-convolution layers, input transformations and backbones.

A layer maps features indexed by an input index set ``X`` (a pixel grid or a
group) to features indexed by an output group ``G`` via an action table
``A[g, u] = g |> u``:

    z^c(g) = sum_u sum_i y^i(u) psi^c_i(g^-1 |> u)
           = sum_k sum_i psi^c_i(k) y^i(g |> k)

For a group-convolution layer ``X = G`` and the action is the Cayley table.
Input images transform as ``(T_g x)(u) = x(g^-1 |> u)``, and 90-degree
rotation acts on an ``n x n`` grid by ``(i, j) -> (j, n - 1 - i)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .groups import (
    GroupSpec,
    direct_product,
    make_c4,
    make_cyclic_scale,
    make_cyclic_translation,
    make_p4,
)

FAMILIES = ("translation", "c4", "p4", "scale")

_pixels = lru_cache(maxsize=32)(make_cyclic_translation)


# --- group families and their actions on inputs -------------------------------------

@dataclass(frozen=True, eq=False)
class Family:
    """An output group together with the input index set it acts on."""

    name: str
    group: GroupSpec
    input_group: GroupSpec
    input_shape: tuple

    @property
    def action(self) -> np.ndarray:
        return action_table(self.group, self.input_group)


def make_family(name: str, grid: int = 8, num_scales: int = 6) -> Family:
    """``grid`` is the side of the square pixel grid."""
    pixels = _pixels(grid, grid)
    if name == "translation":
        return Family(name, pixels, pixels, (grid, grid))
    if name == "c4":
        return Family(name, make_c4(), pixels, (grid, grid))
    if name == "p4":
        return Family(name, make_p4(grid, grid), pixels, (grid, grid))
    if name == "scale":
        g = direct_product(make_cyclic_scale(num_scales), pixels)
        return Family(name, g, g, (num_scales, grid, grid))
    raise ValueError(f"unknown group family {name!r}; expected one of {FAMILIES}")


def _rotate_pixels(r, i, j, n):
    for _ in range(int(r) % 4):
        i, j = j, n - 1 - i
    return i, j


@lru_cache(maxsize=64)
def _action_cached(G: GroupSpec, X: GroupSpec) -> np.ndarray:
    if G.same_as(X):
        return G.cayley
    if X.kind != "translation" or G.kind not in ("rotation", "p4"):
        raise ValueError(f"no action of {G.name} on {X.name}")
    h, w = X.params["height"], X.params["width"]
    if h != w:
        raise ValueError("rotations need a square grid")
    u = X.coords
    out = np.empty((G.order, X.order), dtype=np.int64)
    trans = G.translation_part()
    if trans is not None and (G.params["height"], G.params["width"]) != (h, w):
        raise ValueError(f"grid of {G.name} does not match input {h}x{w}")
    for g, r in enumerate(G.angle_part()):
        i, j = _rotate_pixels(r, u[:, 0], u[:, 1], h)
        if trans is not None:
            i, j = i + trans[g, 0], j + trans[g, 1]
        out[g] = (i % h) * w + (j % w)
    out.setflags(write=False)
    return out


def action_table(G: GroupSpec, X: GroupSpec) -> np.ndarray:
    """``A[g, u] = g |> u`` for every output element and input index."""
    return _action_cached(G, X)


def _input_group_for(G: GroupSpec, spatial: tuple) -> GroupSpec:
    if G.kind == "product" or len(spatial) == 3:
        return G
    return _pixels(*spatial)


def input_transform(x, G: GroupSpec, g) -> np.ndarray:
    """``(T_g x)(u) = x(g^-1 |> u)`` for ``x`` of shape ``[..., C, *spatial]``.

    Translation is a circular shift, rotation an exact 90-degree grid
    rotation. For the scale family the input carries an explicit scale axis
    and ``T_g`` shifts it cyclically.
    """
    x = np.asarray(x.data if isinstance(x, ad.Tensor) else x)
    spatial = x.shape[-3:] if G.kind == "product" else x.shape[-2:]
    X = _input_group_for(G, tuple(spatial))
    A = action_table(G, X)
    g = G.check(g)
    lead = x.shape[: x.ndim - len(spatial)]
    flat = x.reshape(lead + (X.order,))
    return flat[..., A[G.inverse[g]]].reshape(x.shape)


def regular_action(z, G: GroupSpec, g) -> np.ndarray:
    """``(Gamma_g z)(h) = z(g^-1 . h)`` along the last (group) axis."""
    z = np.asarray(z.data if isinstance(z, ad.Tensor) else z)
    return z[..., G.left_inverse_table[G.check(g)]]


# --- layers ---------------------------------------------------------------------------

def _signed(d, n):
    return (d + n // 2) % n - n // 2


def _block(n, k):
    start = (n - k) // 2
    return np.arange(start, start + k)


def lift_support(X: GroupSpec, kernel_size: int | None) -> np.ndarray:
    """Pixels of a centered ``k x k`` block (all pixels when ``kernel_size`` is None)."""
    if kernel_size is None or X.kind != "translation":
        return np.arange(X.order)
    h, w = X.params["height"], X.params["width"]
    rows, cols = _block(h, min(kernel_size, h)), _block(w, min(kernel_size, w))
    return np.array(sorted(i * w + j for i in rows for j in cols), dtype=np.int64)


def group_support(G: GroupSpec, kernel_size: int | None) -> np.ndarray:
    """Elements whose translation offset lies in a ``k x k`` block around the origin."""
    trans = G.translation_part()
    if kernel_size is None or trans is None:
        return np.arange(G.order)
    h, w = G.params["height"], G.params["width"]
    lo = -((kernel_size - 1) // 2)
    hi = kernel_size // 2
    di, dj = _signed(trans[:, 0], h), _signed(trans[:, 1], w)
    keep = (di >= lo) & (di <= hi) & (dj >= lo) & (dj <= hi)
    return np.flatnonzero(keep)


def _zero_pad(table, G, X, support, lifting):
    """Mark entries that wrap around the grid edge as reading zero."""
    tg = G.translation_part()
    tx = X.translation_part()
    if tg is None or tx is None:
        return table
    h, w = G.params["height"], G.params["width"]
    out = table.copy()
    for s_idx, u in enumerate(support):
        read = table[:, s_idx]
        if lifting:
            i, j = tx[u, 0], tx[u, 1]
            r = G.angle_part()
            ri, rj = np.empty(G.order, np.int64), np.empty(G.order, np.int64)
            for rot in range(4):
                m = r == rot
                ri[m], rj[m] = _rotate_pixels(rot, i, j, h)
            ui, uj = ri + tg[:, 0], rj + tg[:, 1]
        else:
            ui = tg[:, 0] + _signed(tx[read, 0] - tg[:, 0], h)
            uj = tg[:, 1] + _signed(tx[read, 1] - tg[:, 1], w)
        wraps = (ui < 0) | (ui >= h) | (uj < 0) | (uj >= w)
        out[wraps, s_idx] = -1
    return out


@dataclass(eq=False)
class GConvLayer:
    psi: ad.Tensor
    bias: ad.Tensor
    group_in: GroupSpec
    group_out: GroupSpec
    table: np.ndarray
    support: np.ndarray
    activation: bool = True
    padding: str = "circular"

    @property
    def c_out(self) -> int:
        return self.psi.shape[0]

    @property
    def c_in(self) -> int:
        return self.psi.shape[1]

    @property
    def is_lifting(self) -> bool:
        return not self.group_in.same_as(self.group_out)

    def parameters(self) -> list:
        return [self.psi, self.bias]

    def __call__(self, y: ad.Tensor) -> ad.Tensor:
        z = gconv_forward(y, self)
        if self.activation:
            z = ad.relu(ad.add_channel_bias(z, self.bias))
        return z


def make_layer(group_in: GroupSpec, group_out: GroupSpec, c_in: int, c_out: int, rng,
               kernel_size: int | None = None, activation: bool = True,
               padding: str = "circular") -> GConvLayer:
    """Build a lifting (``group_in`` a pixel grid) or group-convolution layer.

    Filters are He-uniform (bound sqrt(6/fan_in)) on their support and zero
    elsewhere, so activations keep their scale through ReLU stacks. The bias
    is uniform in +-1/sqrt(fan_in).
    """
    if padding not in ("circular", "zero"):
        raise ValueError(f"padding must be 'circular' or 'zero', got {padding!r}")
    A = action_table(group_out, group_in)
    lifting = not group_in.same_as(group_out)
    support = (lift_support(group_in, kernel_size) if lifting
               else group_support(group_in, kernel_size))
    table = np.ascontiguousarray(A[:, support])
    if padding == "zero":
        table = _zero_pad(table, group_out, group_in, support, lifting)
    fan_in = c_in * support.size
    bound = np.sqrt(6.0 / fan_in)
    gen = getattr(rng, "generator", rng)
    psi = np.zeros((c_out, c_in, group_in.order))
    psi[:, :, support] = gen.uniform(-bound, bound, size=(c_out, c_in, support.size))
    bias = gen.uniform(-1.0, 1.0, size=c_out) / np.sqrt(fan_in)
    table.setflags(write=False)
    return GConvLayer(ad.tensor(psi, requires_grad=True), ad.tensor(bias, requires_grad=True),
                      group_in, group_out, table, support, activation, padding)


def gconv_forward(y: ad.Tensor, layer: GConvLayer) -> ad.Tensor:
    """Pre-activation group correlation; ``y`` is ``[N, Cin, |G_in|]`` or ``[Cin, |G_in|]``."""
    y = y if isinstance(y, ad.Tensor) else ad.tensor(y)
    single = y.ndim == 2
    if single:
        y = ad.reshape(y, (1,) + y.shape)
    if y.shape[1:] != (layer.c_in, layer.group_in.order):
        raise ad.ShapeError("gconv_forward", y.shape, (layer.c_in, layer.group_in.order))
    z = ad.gconv(y, layer.psi, layer.table, layer.support)
    return ad.reshape(z, z.shape[1:]) if single else z


def lift(x, layer: GConvLayer, target_group: GroupSpec | None = None) -> ad.Tensor:
    """Lift a ``[N, C, *spatial]`` input onto the layer's output group."""
    if target_group is not None and not target_group.same_as(layer.group_out):
        raise ValueError(f"layer lifts onto {layer.group_out.name}, not {target_group.name}")
    x = x if isinstance(x, ad.Tensor) else ad.tensor(x)
    n, c = x.shape[0], x.shape[1]
    if int(np.prod(x.shape[2:])) != layer.group_in.order:
        raise ad.ShapeError("lift (input grid)", x.shape, (layer.group_in.order,))
    return gconv_forward(ad.reshape(x, (n, c, layer.group_in.order)), layer)


@dataclass(eq=False)
class EquivariantBackbone:
    layers: list
    family: Family | None = None

    @property
    def output_group(self) -> GroupSpec:
        return self.layers[-1].group_out

    @property
    def output_channels(self) -> int:
        return self.layers[-1].c_out

    @property
    def equivariant(self) -> bool:
        return True

    def parameters(self) -> list:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x) -> ad.Tensor:
        return backbone_forward(x, self)


def build_backbone(family: Family, rng, channels=(8, 8, 8), in_channels: int = 1,
                   kernel_size: int | None = 3, lift_kernel_size: int | None = None,
                   padding: str = "circular") -> EquivariantBackbone:
    """Lifting layer followed by group convolutions, each with bias + ReLU."""
    layers = []
    c_prev = in_channels
    group_in = family.input_group
    for k, c in enumerate(channels):
        ks = (lift_kernel_size or kernel_size) if k == 0 else kernel_size
        layers.append(make_layer(group_in, family.group, c_prev, c, rng, ks, True, padding))
        group_in, c_prev = family.group, c
    return EquivariantBackbone(layers, family)


def backbone_forward(x, f) -> ad.Tensor:
    """``z = f(x)`` with ``x`` of shape ``[N, C, *spatial]``; returns ``[N, C_out, |G|]``."""
    if not isinstance(f, EquivariantBackbone):
        return f(x)
    z = lift(x, f.layers[0])
    if f.layers[0].activation:
        z = ad.relu(ad.add_channel_bias(z, f.layers[0].bias))
    for layer in f.layers[1:]:
        z = layer(z)
    return z


@dataclass(eq=False)
class DenseBackbone:
    """Fully connected network whose output is reshaped to ``[N, C, |G|]``.

    The group axis is only emulated: slices of the unstructured output are
    treated as fibers.
    """

    weights: list
    biases: list
    output_group: GroupSpec
    output_channels: int
    family: Family | None = None

    @property
    def equivariant(self) -> bool:
        return False

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def __call__(self, x) -> ad.Tensor:
        x = x if isinstance(x, ad.Tensor) else ad.tensor(x)
        n = x.shape[0]
        h = ad.reshape(x, (n, -1))
        for w, b in zip(self.weights, self.biases):
            h = ad.relu(ad.add(ad.matmul(h, w), b))
        return ad.reshape(h, (n, self.output_channels, self.output_group.order))


def build_dense_backbone(family: Family, rng, hidden=(64,), channels: int = 8,
                         in_channels: int = 1) -> DenseBackbone:
    gen = getattr(rng, "generator", rng)
    dims = [in_channels * family.input_group.order, *hidden, channels * family.group.order]
    ws, bs = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        ws.append(ad.tensor(gen.uniform(-bound, bound, (d_in, d_out)), requires_grad=True))
        bs.append(ad.tensor(gen.uniform(-1.0, 1.0, d_out) / np.sqrt(d_in), requires_grad=True))
    return DenseBackbone(ws, bs, family.group, channels, family)


def equivariance_error(f, x, G: GroupSpec | None = None) -> float:
    """``max_g || f(T_g x) - Gamma_g f(x) ||_inf``, exhaustive over the group."""
    G = G or f.output_group
    x = np.asarray(x.data if isinstance(x, ad.Tensor) else x)
    if x.ndim == len(_spatial_of(f, x)) + 1:
        x = x[None]
    base = backbone_forward(x, f).data
    worst = 0.0
    # transform every g in one batch
    xs = np.concatenate([input_transform(x, G, g) for g in range(G.order)], axis=0)
    zs = backbone_forward(xs, f).data.reshape((G.order,) + base.shape)
    for g in range(G.order):
        worst = max(worst, float(np.max(np.abs(zs[g] - regular_action(base, G, g)))))
    return worst


def _spatial_of(f, x):
    fam = getattr(f, "family", None)
    if fam is not None:
        return fam.input_shape
    return x.shape[-2:]
