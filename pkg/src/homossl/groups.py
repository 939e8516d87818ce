"""Finite discrete groups as Cayley tables, and their regular representations.

Every group is stored as a canonical index range ``0..|G|-1``. Each element
carries an integer coordinate descriptor (``(row, col)`` for translations,
``(angle,)`` for C4, ``(angle, row, col)`` for p4, ``(scale,)`` for the cyclic
scale group, concatenated for direct products).

The regular representation acts on a group-indexed feature array ``z`` by

    (Gamma_g z)(h) = z(g^-1 . h)

which is a gather along the group axis with the index map ``P_g(h) = g^-1 . h``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GroupSpec",
    "Permutation",
    "make_cyclic_translation",
    "make_c4",
    "make_p4",
    "make_cyclic_scale",
    "direct_product",
    "compose",
    "inverse",
    "regular_rep_permutation",
    "act_on_indices",
    "topographic_distance",
    "check_axioms",
    "rotate_coords",
]


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroupSpec:
    name: str
    coords: np.ndarray
    periods: tuple
    cayley: np.ndarray
    inverse: np.ndarray
    identity: int
    kind: str
    params: dict = field(default_factory=dict)
    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords))
        object.__setattr__(self, "cayley", _frozen(self.cayley))
        object.__setattr__(self, "inverse", _frozen(self.inverse))

    @property
    def order(self) -> int:
        return int(self.cayley.shape[0])

    def __len__(self) -> int:
        return self.order

    def __repr__(self) -> str:
        return f"GroupSpec({self.name!r}, order={self.order})"

    def check(self, g) -> int:
        g = int(g)
        if not 0 <= g < self.order:
            raise IndexError(f"element {g} out of range for {self.name} (order {self.order})")
        return g

    def index_of(self, coord) -> int:
        """Element index for a coordinate tuple (reduced modulo the periods)."""
        coord = tuple(int(c) % p for c, p in zip(coord, self.periods))
        return self._coord_index[coord]

    @cached_property
    def _coord_index(self) -> dict:
        return {tuple(int(v) for v in c): i for i, c in enumerate(self.coords)}

    @cached_property
    def left_inverse_table(self) -> np.ndarray:
        """``table[g, h] = g^-1 . h``; row ``g`` is the permutation ``P_g``."""
        return _frozen(self.cayley[self.inverse])

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        diff = np.abs(self.coords[:, None, :] - self.coords[None, :, :])
        periods = np.asarray(self.periods)
        diff = np.minimum(diff, periods - diff)
        return (diff ** 2).sum(axis=-1).astype(np.float64)

    def translation_part(self) -> np.ndarray | None:
        """``(order, 2)`` array of (row, col) coordinates, or None if the group has no translations."""
        axes = self.params.get("axes", ())
        if "row" not in axes:
            return None
        r, c = axes.index("row"), axes.index("col")
        return self.coords[:, [r, c]]

    def angle_part(self) -> np.ndarray:
        axes = self.params.get("axes", ())
        if "angle" not in axes:
            return np.zeros(self.order, dtype=np.int64)
        return self.coords[:, axes.index("angle")]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "order": self.order,
            "coords": self.coords.tolist(),
            "cayley": self.cayley.tolist(),
            "inverse": self.inverse.tolist(),
            "identity": self.identity,
            "kind": self.kind,
            "periods": list(self.periods),
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "GroupSpec":
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("params", {}).items()}
        g = cls(
            name=d["name"],
            coords=np.asarray(d["coords"], dtype=np.int64).reshape(d["order"], -1),
            periods=tuple(d["periods"]),
            cayley=np.asarray(d["cayley"]),
            inverse=np.asarray(d["inverse"]),
            identity=int(d["identity"]),
            kind=d["kind"],
            params=params,
        )
        if g.order != d["order"]:
            raise ValueError("order does not match cayley table")
        return g

    @classmethod
    def from_json(cls, s: str) -> "GroupSpec":
        return cls.from_dict(json.loads(s))

    def same_as(self, other: "GroupSpec") -> bool:
        return self is other or (
            self.order == other.order
            and self.kind == other.kind
            and np.array_equal(self.cayley, other.cayley)
            and np.array_equal(self.coords, other.coords)
        )


def _from_coords(name, coords, periods, multiply, kind, params, factors=()):
    coords = np.asarray(coords, dtype=np.int64).reshape(len(coords), -1)
    index = {tuple(c): i for i, c in enumerate(coords.tolist())}
    n = len(coords)
    cayley = np.empty((n, n), dtype=np.int64)
    for a in range(n):
        for b in range(n):
            cayley[a, b] = index[multiply(tuple(coords[a]), tuple(coords[b]))]
    identity = int(np.flatnonzero((cayley == np.arange(n)).all(axis=1))[0])
    inv = np.argmax(cayley == identity, axis=1)
    return GroupSpec(name, coords, tuple(periods), cayley, inv, identity, kind, dict(params), factors)


def make_cyclic_translation(height: int, width: int) -> GroupSpec:
    """Z_H x Z_W with wrap-around; elements in row-major order."""
    if height < 1 or width < 1:
        raise ValueError(f"translation grid must be positive, got {height}x{width}")
    coords = [(i, j) for i in range(height) for j in range(width)]

    def mul(a, b):
        return ((a[0] + b[0]) % height, (a[1] + b[1]) % width)

    return _from_coords(
        f"Z{height}x{width}", coords, (height, width), mul, "translation",
        {"height": height, "width": width, "axes": ("row", "col")},
    )


def make_c4() -> GroupSpec:
    """Cyclic rotation group of order 4; element r is a rotation by 90*r degrees."""
    return _from_coords(
        "C4", [(r,) for r in range(4)], (4,), lambda a, b: ((a[0] + b[0]) % 4,),
        "rotation", {"axes": ("angle",)},
    )


def rotate_coords(r: int, i, j, n: int):
    """Rotate grid coordinates by 90*r degrees about the origin of an n x n torus."""
    for _ in range(r % 4):
        i, j = j, (-i) % n
    return i % n, j % n


def make_p4(height: int, width: int) -> GroupSpec:
    """Roto-translation group: (r, t) . (r', t') = (r + r', t + R_r t')."""
    if height != width:
        raise ValueError(f"p4 needs a square grid, got {height}x{width}")
    if height < 1:
        raise ValueError("p4 grid must be positive")
    n = height
    coords = [(r, i, j) for r in range(4) for i in range(n) for j in range(n)]

    def mul(a, b):
        ri, rj = rotate_coords(a[0], b[1], b[2], n)
        return ((a[0] + b[0]) % 4, (a[1] + ri) % n, (a[2] + rj) % n)

    return _from_coords(
        f"p4_{n}x{n}", coords, (4, n, n), mul, "p4",
        {"height": n, "width": n, "axes": ("angle", "row", "col")},
    )


def make_cyclic_scale(num_scales: int) -> GroupSpec:
    if num_scales < 1:
        raise ValueError("num_scales must be positive")
    s = num_scales
    return _from_coords(
        f"S{s}", [(k,) for k in range(s)], (s,), lambda a, b: ((a[0] + b[0]) % s,),
        "scale", {"num_scales": s, "axes": ("scale",)},
    )


def direct_product(a: GroupSpec, b: GroupSpec) -> GroupSpec:
    """Component-wise product; element (i, j) has index ``i * |b| + j``."""
    na, nb = a.order, b.order
    ia, ib = np.divmod(np.arange(na * nb), nb)
    cayley = a.cayley[ia[:, None], ia[None, :]] * nb + b.cayley[ib[:, None], ib[None, :]]
    inv = a.inverse[ia] * nb + b.inverse[ib]
    coords = np.concatenate([a.coords[ia], b.coords[ib]], axis=1)
    params = {k: v for k, v in b.params.items() if k != "axes"}
    params.update({k: v for k, v in a.params.items() if k != "axes"})
    params["axes"] = tuple(a.params.get("axes", ())) + tuple(b.params.get("axes", ()))
    return GroupSpec(
        f"{a.name}x{b.name}", coords, tuple(a.periods) + tuple(b.periods), cayley, inv,
        a.identity * nb + b.identity, "product", params, (a.kind, b.kind),
    )


def compose(G: GroupSpec, g, h) -> int:
    return int(G.cayley[G.check(g), G.check(h)])


def inverse(G: GroupSpec, g) -> int:
    return int(G.inverse[G.check(g)])


@dataclass(frozen=True, eq=False)
class Permutation:
    """A bijection on ``0..n-1`` acting on arrays by gather: ``P(a) = a[..., mapping]``.

    ``P @ Q`` is operator composition with ``Q`` applied first, so that
    ``(P @ Q)(a) == P(Q(a))``.
    """

    mapping: np.ndarray

    def __post_init__(self):
        m = _frozen(self.mapping)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ValueError("mapping is not a bijection")
        object.__setattr__(self, "mapping", m)

    def __len__(self):
        return self.mapping.size

    def __call__(self, i: int) -> int:
        return int(self.mapping[i])

    def __matmul__(self, other: "Permutation") -> "Permutation":
        return Permutation(other.mapping[self.mapping])

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.mapping, other.mapping)

    def __hash__(self):
        return hash(self.mapping.tobytes())

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.mapping))

    def apply(self, array, axis: int = -1):
        return np.take(array, self.mapping, axis=axis)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))


def regular_rep_permutation(G: GroupSpec, g) -> Permutation:
    return Permutation(G.left_inverse_table[G.check(g)])


def act_on_indices(G: GroupSpec, g, base) -> list[int]:
    """Move fibers from base locations to ``[g^-1 . b for b in base]``, order preserved."""
    row = G.left_inverse_table[G.check(g)]
    return [int(row[G.check(b)]) for b in base]


def topographic_distance(G: GroupSpec, g1, g2) -> float:
    """Squared coordinate distance with per-axis circular wrap."""
    return float(G.distance_matrix[G.check(g1), G.check(g2)])


def check_axioms(G: GroupSpec) -> dict:
    """Exhaustive group-axiom check. Returns a dict of named boolean results."""
    n = G.order
    ar = np.arange(n)
    t = G.cayley
    latin = bool((np.sort(t, axis=1) == ar).all() and (np.sort(t, axis=0) == ar[:, None]).all())
    # (g h) k == g (h k) for all triples, one g-slab at a time to bound memory
    assoc = True
    for g in range(n):
        if not np.array_equal(t[t[g]][:, :], t[g][t]):
            assoc = False
            break
    e = G.identity
    ident = bool((t[e] == ar).all() and (t[:, e] == ar).all())
    inv = bool((t[G.inverse, ar] == e).all() and (t[ar, G.inverse] == e).all())
    return {"latin_square": latin, "associative": assoc, "identity": ident, "inverses": inv}
