"""Compare the compiled and numpy group-correlation kernels.

Times forward, input-gradient and filter-gradient calls on the layer shapes
used by the experiments, checks that both backends agree (max abs difference relative to the
largest reference magnitude), and prints one
line per (case, precision, op). Run from the repository root:

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 64]
"""
import argparse
import timeit

import numpy as np

from homossl import _kernels_py
from homossl.kernels import BACKENDS
from homossl.nets import build_backbone, make_family
from homossl.sampling import SeededRng

# (label, family, grid, kernel_size, lift_kernel_size)
CASES = [
    ("c4 grid10 full lift", "c4", 10, 3, 10),
    ("translation grid4 full", "translation", 4, None, 4),
    ("translation grid8 k3", "translation", 8, 3, 3),
    ("p4 grid4 k3", "p4", 4, 3, 3),
]


def layer_inputs(family, grid, kernel_size, lift_kernel_size, batch, dtype, channels=(8, 8, 8)):
    """Yield ``(name, y, psi, table)`` for every layer of a random backbone."""
    fam = make_family(family, grid)
    rng = SeededRng(0, ("bench", family))
    f = build_backbone(fam, rng.child("weights"), channels, kernel_size=kernel_size,
                       lift_kernel_size=lift_kernel_size)
    gen = rng.child("inputs").generator
    for k, layer in enumerate(f.layers):
        y = gen.normal(size=(batch, layer.c_in, layer.group_in.order)).astype(dtype)
        psi = np.ascontiguousarray(layer.psi.data[:, :, layer.support].astype(dtype))
        yield f"layer{k}", y, psi, np.ascontiguousarray(layer.table, dtype=np.int64)


def ops(backend, y, psi, table):
    z = backend.gconv_forward(y, psi, table)
    dz = np.ones_like(z)
    return {
        "forward": lambda: backend.gconv_forward(y, psi, table),
        "grad_input": lambda: backend.gconv_backward_input(dz, psi, table, y.shape[2]),
        "grad_filter": lambda: backend.gconv_backward_filter(dz, y, table),
    }


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args(argv)

    if "compiled" not in BACKENDS:
        print("compiled extension not built; only the numpy backend is available")
    names = sorted(BACKENDS)
    print(f"{'case':<26}{'prec':<6}{'op':<13}" + "".join(f"{n + ' ms':>14}" for n in names)
          + f"{'speedup':>10}{'rel diff':>11}")
    for label, family, grid, ks, lks in CASES:
        for dtype in (np.float32, np.float64):
            prec = "f32" if dtype == np.float32 else "f64"
            totals = {n: {} for n in names}
            diffs = {}
            for _, y, psi, table in layer_inputs(family, grid, ks, lks, args.batch, dtype):
                ref = ops(_kernels_py, y, psi, table)
                for n in names:
                    for op, fn in ops(BACKENDS[n], y, psi, table).items():
                        totals[n][op] = totals[n].get(op, 0.0) + best_time(fn, args.repeat)
                        r = ref[op]()
                        diff = float(np.max(np.abs(fn() - r)) / max(1.0, np.max(np.abs(r))))
                        diffs[op] = max(diffs.get(op, 0.0), diff)
            for op in ("forward", "grad_input", "grad_filter"):
                ms = {n: 1e3 * totals[n][op] for n in names}
                speed = (f"{ms['python'] / ms['compiled']:>9.2f}x" if "compiled" in ms
                         else f"{'-':>10}")
                print(f"{label:<26}{prec:<6}{op:<13}" + "".join(f"{ms[n]:>14.3f}" for n in names)
                      + speed + f"{diffs[op]:>11.1e}")


if __name__ == "__main__":
    main()
