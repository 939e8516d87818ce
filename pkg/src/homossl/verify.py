"""Verification suites shared by the command line and the test-suite.

Each suite returns a plain dict of measured quantities plus a ``passed``
flag computed against its tolerance, so callers decide how to report.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .groups import (
    check_axioms,
    direct_product,
    make_c4,
    make_cyclic_scale,
    make_cyclic_translation,
    make_p4,
    regular_rep_permutation,
)
from .losses import (
    LossConfig,
    assl_loss,
    build_head,
    fsim_loss,
    gather_bundles,
    hssl_loss,
    info_nce,
    supervised_loss,
)
from .nets import backbone_forward, build_backbone, equivariance_error, input_transform, make_family
from .sampling import SamplePlan, SeededRng, sample_views

# grid side per family for the exhaustive checks
VERIFY_GRID = {"translation": 8, "c4": 8, "p4": 4, "scale": 4}
VERIFY_SCALES = 6
EQUIVARIANCE_TOL = {"f64": 1e-10, "f32": 1e-5}
EQUIVALENCE_TOL = {"f64": 1e-10, "f32": 1e-5}
GRADIENT_TOL = 1e-4


def standard_groups() -> list:
    return [
        make_cyclic_translation(8, 8),
        make_c4(),
        make_p4(4, 4),
        make_cyclic_scale(6),
        direct_product(make_c4(), make_cyclic_translation(3, 3)),
    ]


def homomorphism_holds(G) -> bool:
    """``P_g @ P_h == P_{g.h}`` for every pair, checked on the permutation arrays."""
    perms = np.stack([regular_rep_permutation(G, g).mapping for g in range(G.order)])
    for g in range(G.order):
        # row h is (P_g @ P_h).mapping == P_h.mapping[P_g.mapping]
        if not np.array_equal(perms[:, perms[g]], perms[G.cayley[g]]):
            return False
    return True


def verify_groups(groups=None) -> dict:
    rows = []
    for G in groups or standard_groups():
        axioms = check_axioms(G)
        rows.append({"group": G.name, "order": G.order, **axioms,
                     "homomorphism": homomorphism_holds(G)})
    passed = all(all(v for k, v in r.items() if isinstance(v, bool)) for r in rows)
    return {"groups": rows, "passed": passed}


def _family(name, grid=None):
    return make_family(name, grid or VERIFY_GRID[name], VERIFY_SCALES)


def verify_equivariance(family: str, trials: int = 100, precision: str = "f64",
                        padding: str = "circular", seed: int = 0,
                        channels=(4, 4, 4), grid: int | None = None) -> dict:
    """Worst ``||f(T_g x) - Gamma_g f(x)||_inf`` over random inputs, weights and all g."""
    fam = _family(family, grid)
    worst = 0.0
    with ad.precision(precision):
        for t in range(trials):
            rng = SeededRng(seed, ("equivariance", family, str(t)))
            f = build_backbone(fam, rng.child("weights"), channels, padding=padding)
            x = rng.child("input").normal(size=(1, 1) + fam.input_shape)
            worst = max(worst, equivariance_error(f, x.astype(ad.get_dtype())))
    tol = EQUIVARIANCE_TOL[precision]
    return {"family": family, "trials": trials, "precision": precision, "padding": padding,
            "max_error": worst, "tolerance": tol, "passed": worst <= tol}


def verify_equivalence(family: str, trials: int = 50, precision: str = "f64",
                       padding: str = "circular", seed: int = 0, n: int = 8,
                       channels: int = 16, base_size: int = 1, grid: int | None = None) -> dict:
    """Matched-sample A-SSL vs H-SSL losses and the per-fiber identity.

    The fiber identity compares ``f(T_g x)(base)`` with ``f(x)(g^-1 . base)``.
    """
    fam = _family(family, grid)
    G = fam.group
    max_dl, max_fiber = 0.0, 0.0
    plan = SamplePlan(base_size=base_size)
    with ad.precision(precision):
        for t in range(trials):
            rng = SeededRng(seed, ("equivalence", family, str(t)))
            f = build_backbone(fam, rng.child("weights"), (8, channels, channels), padding=padding)
            h = build_head(base_size * channels, rng.child("head"))
            X = rng.child("input").normal(size=(n, 1) + fam.input_shape).astype(ad.get_dtype())
            samples = sample_views(G, plan, n, rng.child("views"))
            la = float(assl_loss(X, f, h, G, samples).data)
            Z = backbone_forward(X, f)
            lh = float(hssl_loss(Z, h, G, samples).data)
            max_dl = max(max_dl, abs(la - lh))
            for v in (1, 2):
                g = [s.g1 if v == 1 else s.g2 for s in samples]
                Zt = backbone_forward(np.stack([input_transform(X[i], G, g[i])
                                                for i in range(n)]), f)
                a = gather_bundles(Zt, np.arange(n), [s.base for s in samples]).data
                b = gather_bundles(Z, np.arange(n), [s.bundle(G, v) for s in samples]).data
                max_fiber = max(max_fiber, float(np.max(np.abs(a - b))))
    tol = EQUIVALENCE_TOL[precision]
    return {"family": family, "trials": trials, "precision": precision, "padding": padding,
            "max_loss_delta": max_dl, "max_fiber_deviation": max_fiber, "tolerance": tol,
            "passed": max_dl <= tol and max_fiber <= tol}


# --- gradients ----------------------------------------------------------------------

def _tiny_problem(loss: str, seed: int):
    """A tiny backbone, head and batch for one finite-difference trial."""
    family = "translation" if loss == "fsim" else "c4"
    fam = make_family(family, 4)
    rng = SeededRng(seed, ("gradcheck", loss))
    f = build_backbone(fam, rng.child("weights"), (2, 3), kernel_size=3)
    head = build_head(3, rng.child("head"), hidden=4, out=3)
    gen = rng.child("classifier").generator
    clf = (ad.tensor(gen.normal(size=(3, 2)), requires_grad=True),
           ad.tensor(gen.normal(size=2), requires_grad=True))
    n = 3
    X = rng.child("input").normal(size=(n, 1) + fam.input_shape)
    labels = np.array([0, 1, 0])
    samples = sample_views(fam.group, SamplePlan(), n, rng.child("views"))
    G = fam.group
    cfg = LossConfig()

    def value():
        if loss == "assl":
            return assl_loss(X, f, head, G, samples, cfg)
        Z = backbone_forward(X, f)
        if loss == "hssl":
            return hssl_loss(Z, head, G, samples, cfg)
        if loss == "fsim":
            patches = [(s.bundle(G, 1), s.bundle(G, 2)) for s in samples]
            return fsim_loss(Z, head, G, patches, cfg)
        return supervised_loss(Z, clf, labels)

    params = f.parameters() + (list(clf) if loss == "supervised" else head.parameters())
    return value, params


def gradient_check(loss: str, seed: int, step: float = 1e-6, kink_margin: float = 1e-4) -> dict:
    """Relative error between tape gradients and central differences for one seed.

    Returns ``kinked=True`` (and no error) when some relu input lies within
    ``kink_margin`` of zero, where finite differences are not meaningful.
    """
    with ad.precision("f64"):
        value, params = _tiny_problem(loss, seed)
        with ad.kink_monitor() as kink:
            with ad.Tape() as tape:
                out = value()
        if kink[0] < kink_margin:
            return {"loss": loss, "seed": seed, "kinked": True, "rel_error": 0.0}
        grads = ad.backward(tape, out, params)
        worst = 0.0
        for p in params:
            def fn(v, p=p):
                old = p.data
                p.data = v
                try:
                    return float(value().data)
                finally:
                    p.data = old
            fd = ad.finite_diff_grad(fn, p.data, step)
            scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(grads[p]))), 1e-6)
            worst = max(worst, float(np.max(np.abs(fd - grads[p]))) / scale)
    return {"loss": loss, "seed": seed, "kinked": False, "rel_error": worst}


def uniform_loss_value(n: int) -> float:
    """InfoNCE of a batch whose views are all identical: ``log(4 (N - 1))`` in closed form."""
    with ad.precision("f64"):
        views = ad.tensor(np.ones((2 * n, 5)))
        per, _ = info_nce(views, 0.1)
        return float(np.mean(per.data))


def verify_gradients(seeds=range(1, 21), losses=("assl", "hssl", "fsim", "supervised"),
                     max_redraws: int = 20) -> dict:
    """Gradient checks over ``seeds``; a kinked draw is replaced by the next sub-seed."""
    rows = []
    for loss in losses:
        for s in seeds:
            for k in range(max_redraws):
                r = gradient_check(loss, 1000 * k + int(s))
                if not r["kinked"]:
                    break
            rows.append(r)
    worst = max((r["rel_error"] for r in rows if not r["kinked"]), default=0.0)
    closed = {n: uniform_loss_value(n) for n in (2, 4, 8)}
    closed_ok = all(abs(v - math.log(4 * (n - 1))) <= 1e-9 for n, v in closed.items())
    kinked = sum(r["kinked"] for r in rows)
    return {"rows": rows, "max_rel_error": worst, "tolerance": GRADIENT_TOL,
            "closed_form": closed, "kinked": kinked,
            "passed": worst <= GRADIENT_TOL and closed_ok and kinked == 0}
