"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a single PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing criterion still reports its measurement.
"""
import csv
import io
import math
import time

import numpy as np
import pytest
from _oracles import naive_gconv

from homossl import autodiff as ad
from homossl.experiments import (
    SEEDS,
    SWEEP_COLUMNS,
    ExperimentConfig,
    build_data,
    sweep_base_size,
    sweep_config,
    sweep_topo_distance,
    train,
)
from homossl.groups import (
    direct_product,
    make_c4,
    make_cyclic_scale,
    make_cyclic_translation,
    make_p4,
)
from homossl.losses import build_head, fsim_loss, hssl_loss
from homossl.nets import backbone_forward, build_backbone, gconv_forward, make_family, make_layer
from homossl.sampling import SamplePlan, SeededRng, sample_views
from homossl.verify import (
    homomorphism_holds,
    uniform_loss_value,
    verify_equivalence,
    verify_equivariance,
    verify_gradients,
    verify_groups,
)

FAMILIES = ("translation", "c4", "p4", "scale")


def test_criterion_01_group_axioms(acceptance):
    t0 = time.perf_counter()
    res = verify_groups()
    dt = time.perf_counter() - t0
    names = ", ".join(r["group"] for r in res["groups"])
    ok = res["passed"] and dt < 10
    assert acceptance(1, ok, f"axioms exhaustive on {names} in {dt:.2f}s (limit 10s)")


def test_criterion_02_homomorphism(acceptance):
    groups = [make_cyclic_translation(h, w) for h, w in ((1, 1), (8, 8), (16, 16), (5, 7))]
    groups += [make_c4(), make_p4(2, 2), make_p4(4, 4), make_p4(8, 8), make_cyclic_scale(6)]
    groups += [direct_product(make_c4(), make_cyclic_translation(3, 3)),
               direct_product(make_cyclic_scale(6), make_cyclic_translation(4, 4))]
    assert all(G.order <= 256 for G in groups)
    t0 = time.perf_counter()
    failed = [G.name for G in groups if not homomorphism_holds(G)]
    dt = time.perf_counter() - t0
    ok = not failed and dt < 5
    assert acceptance(2, ok, f"P_g P_h = P_gh on {len(groups)} groups (orders up to 256), "
                             f"failures {failed or 'none'}, {dt:.2f}s (limit 5s)")


def test_criterion_03_equivariance(acceptance):
    t0 = time.perf_counter()
    worst = {"f64": 0.0, "f32": 0.0}
    for fam in FAMILIES:
        for prec in worst:
            worst[prec] = max(worst[prec], verify_equivariance(fam, 100, prec)["max_error"])
    # zero padding only matters where the group contains translations
    control = {fam: verify_equivariance(fam, 5, "f64", padding="zero")["max_error"]
               for fam in ("translation", "p4", "scale")}
    dt = time.perf_counter() - t0
    ok = (worst["f64"] <= 1e-10 and worst["f32"] <= 1e-5
          and min(control.values()) > 1e-3 and dt < 120)
    ctrl = " ".join(f"{k}={v:.2g}" for k, v in control.items())
    assert acceptance(3, ok, f"max error f64 {worst['f64']:.1e} (<=1e-10), f32 {worst['f32']:.1e} "
                             f"(<=1e-5); zero-pad {ctrl} (>1e-3); {dt:.1f}s (limit 120s)")


def test_criterion_04_gconv_oracle(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    with ad.precision("f64"):
        for case in range(50):
            if case % 3 == 0:
                G = X = make_cyclic_translation(4, 4)
            elif case % 3 == 1:
                G, X = make_p4(4, 4), make_cyclic_translation(4, 4)
            else:
                G = X = make_p4(3, 3)
            layer = make_layer(X, G, 3, 2, SeededRng(case, ("oracle",)),
                               None if case % 2 else 3, activation=False)
            y = SeededRng(case, ("oracle-input",)).normal(size=(3, X.order))
            got = gconv_forward(ad.tensor(y), layer).data
            worst = max(worst, float(np.max(np.abs(got - naive_gconv(y, layer.psi.data, G, X)))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-12 and dt < 30
    assert acceptance(4, ok, f"50 instances, max |gconv - naive| {worst:.1e} (<=1e-12), "
                             f"{dt:.1f}s (limit 30s)")


def test_criterion_05_assl_equals_hssl(acceptance):
    t0 = time.perf_counter()
    res = {fam: verify_equivalence(fam, trials=50, n=8, channels=16) for fam in FAMILIES}
    dt = time.perf_counter() - t0
    dl = max(r["max_loss_delta"] for r in res.values())
    fib = max(r["max_fiber_deviation"] for r in res.values())
    ok = dl <= 1e-10 and fib <= 1e-10 and dt < 120
    assert acceptance(5, ok, f"50 trials x {len(FAMILIES)} families, N=8, C=16: max |dL| {dl:.1e}, "
                             f"max fiber deviation {fib:.1e} (<=1e-10), {dt:.1f}s (limit 120s)")


def test_criterion_06_fsim_reduction(acceptance):
    t0 = time.perf_counter()
    mismatches = 0
    with ad.precision("f64"):
        fam = make_family("translation", 8)
        G = fam.group
        for trial in range(20):
            rng = SeededRng(trial, ("fsim",))
            f = build_backbone(fam, rng.child("weights"), (4, 8))
            h = build_head(8, rng.child("head"))
            X = rng.child("input").normal(size=(8, 1, 8, 8))
            samples = sample_views(G, SamplePlan(), 8, rng.child("views"))
            Z = backbone_forward(X, f)
            patches = [(s.bundle(G, 1), s.bundle(G, 2)) for s in samples]
            a = fsim_loss(Z, h, G, patches).data.tobytes()
            b = hssl_loss(Z, h, G, samples).data.tobytes()
            mismatches += a != b
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 10
    assert acceptance(6, ok, f"fsim vs hssl bit-identical on 20 trials ({mismatches} mismatches), "
                             f"{dt:.1f}s (limit 10s)")


def test_criterion_07_gradients(acceptance):
    t0 = time.perf_counter()
    res = verify_gradients(seeds=range(1, 21))
    closed = {n: abs(uniform_loss_value(n) - math.log(4 * (n - 1))) for n in (2, 4, 8)}
    dt = time.perf_counter() - t0
    ok = res["max_rel_error"] <= 1e-4 and res["kinked"] == 0 and \
        max(closed.values()) <= 1e-9 and dt < 120
    assert acceptance(7, ok, f"4 losses x 20 seeds: max rel error {res['max_rel_error']:.1e} "
                             f"(<=1e-4); closed form max dev {max(closed.values()):.1e} (<=1e-9); "
                             f"{dt:.1f}s (limit 120s)")


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """Frozen, hssl, supervised and the non-equivariant control on seeds 1-3."""
    out = tmp_path_factory.mktemp("acceptance-runs")
    runs, timing = {}, {}
    for name, changes in (("frozen", {"loss": "none-frozen"}), ("hssl", {"loss": "hssl"}),
                          ("supervised", {"loss": "supervised"}),
                          ("control", {"loss": "hssl", "backbone": {"equivariant": False}})):
        t0 = time.perf_counter()
        for seed in SEEDS:
            cfg = ExperimentConfig(seed=seed, out=str(out)).replace(**changes)
            runs[name, seed] = train(cfg, build_data(cfg))
        timing[name] = time.perf_counter() - t0
    return runs, timing


def _mean_acc(runs, name):
    return 100 * float(np.mean([runs[name, s].accuracy for s in SEEDS]))


def test_criterion_08_training_efficacy(acceptance, default_runs):
    runs, timing = default_runs
    fr, hs, su = (_mean_acc(runs, k) for k in ("frozen", "hssl", "supervised"))
    dt = timing["frozen"] + timing["hssl"] + timing["supervised"]
    ok = hs >= fr + 10 and su >= hs and dt < 900
    assert acceptance(8, ok, f"mean probe accuracy over seeds {SEEDS}: frozen {fr:.1f}, "
                             f"hssl {hs:.1f} (needs >= {fr + 10:.1f}), supervised {su:.1f} "
                             f"(needs >= hssl); {dt:.0f}s (limit 900s)")


def test_criterion_09_structure_removal(acceptance, default_runs):
    runs, timing = default_runs
    hs, ctrl = _mean_acc(runs, "hssl"), _mean_acc(runs, "control")
    ok = ctrl <= hs - 5 and timing["control"] < 600
    assert acceptance(9, ok, f"non-equivariant control {ctrl:.1f} vs equivariant hssl {hs:.1f} "
                             f"(needs <= {hs - 5:.1f}); {timing['control']:.0f}s (limit 600s)")


def test_criterion_10_determinism(acceptance, default_runs, tmp_path):
    runs, _ = default_runs
    differing = []
    for (name, seed), first in sorted(runs.items()):
        again = train(first.config.replace(out=str(tmp_path)))
        a = open(f"{first.out_dir}/metrics.csv", "rb").read()
        b = open(f"{again.out_dir}/metrics.csv", "rb").read()
        if a != b:
            differing.append(f"{name}/{seed}")
    ok = not differing
    assert acceptance(10, ok, f"{len(runs)} reruns, metrics CSVs byte-identical; "
                              f"differing: {differing or 'none'}")


def _well_formed(path):
    text = open(path, newline="").read()
    rows = list(csv.reader(io.StringIO(text)))
    return (rows[0] == SWEEP_COLUMNS and "\r" not in text
            and all(len(r) == 3 and all(math.isfinite(float(v)) for v in r) for r in rows[1:]))


def test_criterion_11_sweeps(acceptance, tmp_path):
    t0 = time.perf_counter()
    cfg = sweep_config(seed=1, out=str(tmp_path))
    order = make_family(cfg.backbone.family, cfg.backbone.grid).group.order
    chance = 1.0 / 2
    sizes = [1, 2, 4, order - 1]
    distances = [0, 1, 2, 4]
    base = sweep_base_size(cfg, sizes)
    dist = sweep_topo_distance(cfg, distances)
    files = sorted(tmp_path.glob("sweep-*.csv"))
    complete = ([r["setting"] for r in base] == sizes
                and [r["setting"] for r in dist] == [float(d) for d in distances])
    accs = [r["accuracy"] for r in base + dist]
    in_range = all(chance <= a <= 1 for a in accs)
    formed = len(files) == 2 and all(_well_formed(p) for p in files)
    dt = time.perf_counter() - t0
    ok = complete and in_range and formed
    fmt = lambda rows: " ".join(f"{r['setting']:g}:{r['accuracy']:.3f}" for r in rows)
    assert acceptance(11, ok, f"|G|={order}; base sizes [{fmt(base)}]; distances [{fmt(dist)}]; "
                              f"all in [{chance}, 1]: {in_range}; CSVs well-formed: {formed}; "
                              f"{dt:.0f}s")
