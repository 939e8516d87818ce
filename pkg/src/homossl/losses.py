"""Fiber bundles, the projection head and the contrastive objectives.

All three contrastive losses share one InfoNCE core. Each example ``i``
contributes two views ``p_i^1, p_i^2`` (head outputs of fiber bundles) and

    loss_i = -s(p_i^1, p_i^2)/tau
             + log sum_{k != i} sum_{j, l in {1, 2}} exp(s(p_i^j, p_k^l)/tau)

averaged over the batch. The positive pair is not part of the denominator,
so a batch where every similarity is equal gives ``log(4 (N - 1))``.

- ``assl_loss``: views are ``f(T_g x_i)`` restricted to the base space.
- ``hssl_loss``: views are ``z_i(g^-1 . base)`` from a single forward pass.
- ``fsim_loss``: views are explicit spatial patches; optionally scored with a
  log-bilinear critic ``a^T W b`` instead of cosine similarity.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .nets import backbone_forward, input_transform
from .sampling import ViewSample

TRACE_COLUMNS = ["example_id", "g1", "g2", "pair_type", "similarity", "contribution"]


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1
    strict: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True, eq=False)
class FiberBundle:
    values: ad.Tensor
    source_elements: tuple

    def __len__(self):
        return self.values.shape[0]


def _check_elements(elements, order):
    elements = [int(e) for e in elements]
    if len(set(elements)) != len(elements):
        raise ValueError(f"duplicate elements in bundle {elements}")
    for e in elements:
        if not 0 <= e < order:
            raise IndexError(f"element {e} out of range for group of order {order}")
    return elements


def extract_bundle(z, elements) -> FiberBundle:
    """``z(g) = [z(:, g) for g in elements]`` concatenated fiber by fiber."""
    z = z if isinstance(z, ad.Tensor) else ad.tensor(z)
    elements = _check_elements(elements, z.shape[1])
    sel = ad.index_select(z, 1, elements)                     # C, m
    flat = ad.reshape(ad.transpose(sel, (1, 0)), (len(elements) * z.shape[0],))
    return FiberBundle(flat, tuple(elements))


def gather_bundles(Z: ad.Tensor, example_ids, locations) -> ad.Tensor:
    """Row ``r`` is the bundle of example ``example_ids[r]`` at ``locations[r]``.

    ``Z`` is ``[N, C, |G|]``; the result is ``[len(example_ids), m * C]``.
    """
    n, c, order = Z.shape
    locs = np.asarray(locations, dtype=np.int64)
    ex = np.asarray(example_ids, dtype=np.int64)
    if locs.ndim != 2 or locs.shape[0] != ex.size:
        raise ad.ShapeError("gather_bundles", locs.shape, ex.shape)
    if locs.min() < 0 or locs.max() >= order:
        raise IndexError("bundle location out of range")
    rows = ad.reshape(ad.transpose(Z, (0, 2, 1)), (n * order, c))
    picked = ad.index_select(rows, 0, (ex[:, None] * order + locs).reshape(-1))
    return ad.reshape(picked, (ex.size, locs.shape[1] * c))


@dataclass(eq=False)
class ProjectionHead:
    """Two affine layers with a ReLU in between."""

    w1: ad.Tensor
    b1: ad.Tensor
    w2: ad.Tensor
    b2: ad.Tensor

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def parameters(self) -> list:
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, v: ad.Tensor) -> ad.Tensor:
        if v.shape[-1] != self.in_dim:
            raise ad.ShapeError("projection head", v.shape, self.w1.shape)
        hidden = ad.relu(ad.add(ad.matmul(v, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)


def build_head(in_dim: int, rng, hidden: int = 32, out: int = 16) -> ProjectionHead:
    gen = getattr(rng, "generator", rng)

    def affine(d_in, d_out):
        bound = 1.0 / math.sqrt(d_in)
        return (ad.tensor(gen.uniform(-bound, bound, (d_in, d_out)), requires_grad=True),
                ad.tensor(gen.uniform(-bound, bound, d_out), requires_grad=True))

    w1, b1 = affine(in_dim, hidden)
    w2, b2 = affine(hidden, out)
    return ProjectionHead(w1, b1, w2, b2)


def cosine_sim(a, b, strict: bool = True) -> ad.Tensor:
    a = a if isinstance(a, ad.Tensor) else ad.tensor(a)
    b = b if isinstance(b, ad.Tensor) else ad.tensor(b)
    if a.shape != b.shape:
        raise ad.ShapeError("cosine_sim", a.shape, b.shape)
    return ad.sum_(ad.mul(ad.l2_normalize(a, strict=strict), ad.l2_normalize(b, strict=strict)))


def _pair_indices(n: int):
    """Flat indices into the ``[2N, 2N]`` score matrix for positives and negatives."""
    m = 2 * n
    pos = np.array([i * m + n + i for i in range(n)], dtype=np.int64)
    neg = np.empty((n, 4 * (n - 1)), dtype=np.int64)
    for i in range(n):
        cols = [c for off in (0, n) for c in (off + k for k in range(n) if k != i)]
        neg[i] = [r * m + c for r in (i, n + i) for c in cols]
    return pos, neg


def info_nce(views: ad.Tensor, temperature: float, strict: bool = True,
             bilinear: ad.Tensor | None = None):
    """Per-example InfoNCE terms for stacked views ``[p^1_0..p^1_{N-1}, p^2_0..p^2_{N-1}]``.

    Returns ``(per_example [N], scores [2N, 2N])``; scores are already divided
    by the temperature.
    """
    m = views.shape[0]
    if m % 2 or m < 4:
        raise ValueError("need two views for each of at least 2 examples")
    n = m // 2
    if bilinear is None:
        p = ad.l2_normalize(views, axis=1, strict=strict)
        scores = ad.matmul(p, ad.transpose(p, (1, 0)))
    else:
        scores = ad.matmul(ad.matmul(views, bilinear), ad.transpose(views, (1, 0)))
    scores = ad.mul_scalar(scores, 1.0 / temperature)
    pos_idx, neg_idx = _pair_indices(n)
    flat = ad.reshape(scores, (m * m,))
    pos = ad.index_select(flat, 0, pos_idx)
    neg = ad.reshape(ad.index_select(flat, 0, neg_idx.reshape(-1)), neg_idx.shape)
    per = ad.add(ad.logsumexp(neg, axis=1), ad.mul_scalar(pos, -1.0))
    return per, scores


def _finish(per, scores, samples, temperature, trace):
    if trace is not None:
        trace.extend(trace_rows(scores.data, samples, temperature))
    return ad.mean(per)


def _check_batch(samples, n):
    if n < 2:
        raise ValueError(f"contrastive losses need N >= 2, got {n}")
    if len(samples) != n:
        raise ValueError(f"{len(samples)} samples for a batch of {n}")


def assl_loss(X, f, h: ProjectionHead, G, samples: list[ViewSample],
              config: LossConfig = LossConfig(), trace: list | None = None) -> ad.Tensor:
    """Augmentation-based loss: two transformed inputs, two encoder passes.

    Both branches are read at the same ordered base space of each example.
    """
    X = np.asarray(X.data if isinstance(X, ad.Tensor) else X)
    n = X.shape[0]
    _check_batch(samples, n)
    views = [input_transform(X[i], G, s.g1) for i, s in enumerate(samples)]
    views += [input_transform(X[i], G, s.g2) for i, s in enumerate(samples)]
    Z = backbone_forward(np.stack(views), f)
    bases = [s.base for s in samples] * 2
    bundles = gather_bundles(Z, np.arange(2 * n), bases)
    per, scores = info_nce(h(bundles), config.temperature, config.strict)
    return _finish(per, scores, samples, config.temperature, trace)


def hssl_loss(Z: ad.Tensor, h: ProjectionHead, G, samples: list[ViewSample],
              config: LossConfig = LossConfig(), trace: list | None = None) -> ad.Tensor:
    """Homomorphic loss: both views are bundles ``z_i(g_v^-1 . base)`` of one representation."""
    n = Z.shape[0]
    _check_batch(samples, n)
    if Z.shape[2] != G.order:
        raise ad.ShapeError("hssl_loss (group axis)", Z.shape, (G.order,))
    locs = [s.bundle(G, 1) for s in samples] + [s.bundle(G, 2) for s in samples]
    return _contrast_patches(Z, h, locs, config, None, samples, trace)


def _contrast_patches(Z, h, locs, config, bilinear, samples, trace):
    n = Z.shape[0]
    ex = np.concatenate([np.arange(n), np.arange(n)])
    bundles = gather_bundles(Z, ex, locs)
    per, scores = info_nce(h(bundles), config.temperature, config.strict, bilinear)
    return _finish(per, scores, samples, config.temperature, trace)


def fsim_loss(Z: ad.Tensor, h: ProjectionHead, G, patches, config: LossConfig = LossConfig(),
              similarity: str = "cosine", W: ad.Tensor | None = None,
              trace: list | None = None) -> ad.Tensor:
    """Feature-space InfoMax loss between two spatial patches of each representation.

    ``patches[i] = (patch_1, patch_2)`` are ordered element lists of equal
    size. ``similarity="bilinear"`` scores pairs with ``a^T W b``.
    """
    if G.kind != "translation":
        raise ValueError(f"fsim_loss needs a translation group, got {G.kind}")
    n = Z.shape[0]
    if len(patches) != n:
        raise ValueError(f"{len(patches)} patch pairs for a batch of {n}")
    if n < 2:
        raise ValueError("contrastive losses need N >= 2")
    sizes = {len(p) for pair in patches for p in pair}
    if len(sizes) != 1:
        raise ValueError("all patches must have the same size")
    if similarity == "cosine":
        bilinear = None
    elif similarity == "bilinear":
        if W is None or W.shape != (h.out_dim, h.out_dim):
            raise ValueError("bilinear similarity needs W of shape (d, d)")
        bilinear = W
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    locs = [list(p[0]) for p in patches] + [list(p[1]) for p in patches]
    return _contrast_patches(Z, h, locs, config, bilinear, None, trace)


def supervised_loss(Z: ad.Tensor, classifier, labels) -> ad.Tensor:
    """Softmax cross-entropy of an affine classifier on group-averaged features."""
    w, b = classifier
    labels = np.asarray(labels, dtype=np.int64)
    feats = ad.mean(Z, axis=2)
    logits = ad.add(ad.matmul(feats, w), b)
    n, k = logits.shape
    picked = ad.index_select(ad.reshape(logits, (n * k,)), 0, np.arange(n) * k + labels)
    return ad.mean(ad.add(ad.logsumexp(logits, axis=1), ad.mul_scalar(picked, -1.0)))


def trace_rows(scores: np.ndarray, samples, temperature: float) -> list[dict]:
    """Per-pair similarities and their share of each example's loss.

    Positive rows carry ``-sim/tau``; negative rows carry their softmax
    weight within the denominator.
    """
    m = scores.shape[0]
    n = m // 2
    pos_idx, neg_idx = _pair_indices(n)
    flat = scores.reshape(-1)
    rows = []
    for i in range(n):
        g1, g2 = (samples[i].g1, samples[i].g2) if samples else ("", "")
        s = float(flat[pos_idx[i]]) * temperature
        rows.append(dict(example_id=i, g1=g1, g2=g2, pair_type="positive",
                         similarity=s, contribution=-s / temperature))
        neg = flat[neg_idx[i]]
        w = np.exp(neg - neg.max())
        w = w / w.sum()
        for v, wt in zip(neg, w):
            rows.append(dict(example_id=i, g1=g1, g2=g2, pair_type="negative",
                             similarity=float(v) * temperature, contribution=float(wt)))
    return rows


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
