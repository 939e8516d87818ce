"""Seeded sampling of group elements, base spaces and view pairs.

Randomness comes from numpy's PCG64 bit generator. Independent streams are
derived from ``(seed, label)`` with a CRC32 of the label as the spawn key, so
a stream never depends on how many draws another stream has made.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass

import numpy as np

from .groups import GroupSpec, act_on_indices

MAX_REJECTION_DRAWS = 10**6


class InfeasibleSampleError(RuntimeError):
    pass


class SeededRng:
    """PCG64 stream identified by a seed and a path of labels."""

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        keys = tuple(zlib.crc32(p.encode()) for p in self.path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=keys)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, label: str) -> "SeededRng":
        return SeededRng(self.seed, self.path + (label,))

    def raw(self, n: int) -> list[int]:
        """Raw 64-bit outputs of the bit generator (used for golden-value tests)."""
        return [int(v) for v in self.generator.bit_generator.random_raw(n)]

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={'/'.join(self.path) or '-'})"


@dataclass(frozen=True)
class SamplePlan:
    base_size: int = 1
    base_strategy: str = "per-example-random"   # or "fixed-canonical"
    max_topo_distance: float | None = None
    per_branch_independent: bool = True

    def validate(self, G: GroupSpec) -> None:
        if not 1 <= self.base_size <= max(G.order - 1, 1):
            raise InfeasibleSampleError(
                f"base size {self.base_size} outside [1, {G.order - 1}] for {G.name}")
        if self.base_strategy not in ("per-example-random", "fixed-canonical"):
            raise ValueError(f"unknown base strategy {self.base_strategy!r}")
        if self.max_topo_distance is not None and self.max_topo_distance < 0:
            raise InfeasibleSampleError("max_topo_distance must be non-negative")


@dataclass(frozen=True)
class ViewSample:
    """Per-example draw: the two transformations and the ordered base space."""

    g1: int
    g2: int
    base: tuple

    def bundle(self, G: GroupSpec, view: int) -> list[int]:
        """Fiber locations ``g_v^-1 . base`` for view 1 or 2."""
        return act_on_indices(G, self.g1 if view == 1 else self.g2, self.base)


def sample_base(G: GroupSpec, base_size: int, strategy: str, rng: SeededRng) -> tuple:
    """A contiguous run of ``base_size`` elements in canonical order (with wrap).

    For translation groups the canonical order is row-major, so the run is a
    connected strip of pixels on the torus.
    """
    if not 1 <= base_size <= max(G.order - 1, 1):
        raise InfeasibleSampleError(f"base size {base_size} infeasible for order {G.order}")
    if strategy == "fixed-canonical":
        start = G.identity
    elif strategy == "per-example-random":
        start = int(rng.integers(G.order))
    else:
        raise ValueError(f"unknown base strategy {strategy!r}")
    return tuple(int((start + k) % G.order) for k in range(base_size))


def sample_pair(G: GroupSpec, plan: SamplePlan, rng: SeededRng) -> tuple[int, int]:
    """Uniform (g1, g2), rejection-filtered to the topographic distance gate.

    Without independent branches the first view is the identity.
    """
    n = G.order
    limit = plan.max_topo_distance
    drawn = 0
    while drawn < MAX_REJECTION_DRAWS:
        g1 = int(rng.integers(n)) if plan.per_branch_independent else G.identity
        g2 = int(rng.integers(n))
        drawn += 1
        if limit is None or G.distance_matrix[g1, g2] <= limit:
            return g1, g2
    raise InfeasibleSampleError(
        f"no pair within distance {limit} after {MAX_REJECTION_DRAWS} draws")


def sample_views(G: GroupSpec, plan: SamplePlan, n: int, rng: SeededRng) -> list[ViewSample]:
    """One ViewSample per example. Bases and pairs come from separate child streams.

    The draw depends only on ``rng``'s identity, so pass a distinct child
    stream per training step.
    """
    plan.validate(G)
    base_rng, pair_rng = rng.child("base"), rng.child("pair")
    out = []
    for _ in range(n):
        base = sample_base(G, plan.base_size, plan.base_strategy, base_rng)
        g1, g2 = sample_pair(G, plan, pair_rng)
        out.append(ViewSample(g1, g2, base))
    return out


def write_sample_log(path, rows) -> None:
    """rows: iterable of (step, example_id, ViewSample)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "example_id", "g1", "g2", "base_elements"])
        for step, i, s in rows:
            w.writerow([step, i, s.g1, s.g2, " ".join(map(str, s.base))])
