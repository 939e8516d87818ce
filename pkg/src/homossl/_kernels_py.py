"""Numpy implementation of the group-correlation kernels.

Shapes: ``y[N, Cin, X]``, ``psi[Cout, Cin, S]``, ``table[G, S]`` (int64, -1 reads
zero), ``z[N, Cout, G]``. The input is gathered into a ``[N*G, Cin*S]``
column matrix so that each product is a single matmul.
"""
import numpy as np


def _columns(y, table):
    n, cin, x = y.shape
    padded = np.concatenate([y, np.zeros((n, cin, 1), dtype=y.dtype)], axis=2)
    idx = np.where(table < 0, x, table)
    cols = padded[:, :, idx]                      # N, Cin, G, S
    return cols.transpose(0, 2, 1, 3).reshape(n * table.shape[0], cin * table.shape[1])


def gconv_forward(y, psi, table):
    n = y.shape[0]
    cout = psi.shape[0]
    g = table.shape[0]
    out = _columns(y, table) @ psi.reshape(cout, -1).T     # N*G, Cout
    return np.ascontiguousarray(out.reshape(n, g, cout).transpose(0, 2, 1))


def gconv_backward_input(dz, psi, table, x):
    n, cout, g = dz.shape
    cin, s = psi.shape[1], psi.shape[2]
    dcols = dz.transpose(0, 2, 1).reshape(n * g, cout) @ psi.reshape(cout, cin * s)
    dcols = dcols.reshape(n, g, cin, s).transpose(0, 2, 1, 3)   # N, Cin, G, S
    valid = table >= 0
    flat = (np.arange(n * cin)[:, None] * x + table[valid][None, :]).reshape(-1)
    w = dcols[:, :, valid].reshape(-1)
    out = np.bincount(flat, weights=w, minlength=n * cin * x)
    return out.reshape(n, cin, x).astype(dz.dtype)


def gconv_backward_filter(dz, y, table):
    n, cout, g = dz.shape
    cin = y.shape[1]
    s = table.shape[1]
    d = dz.transpose(1, 0, 2).reshape(cout, n * g)
    return (d @ _columns(y, table)).reshape(cout, cin, s)
