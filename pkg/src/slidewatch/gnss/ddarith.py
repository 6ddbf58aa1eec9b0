"""Double-double (about 106-bit) arithmetic on numpy arrays.

Carrier phases are ~1e8 cycles while the quantities of interest sit at
the 1e-12 cycle level, so ranges and phase sums are assembled in
double-double and rounded to float64 only once.  Values are (hi, lo)
pairs; every function works element-wise on scalars or arrays.
"""

from __future__ import annotations

import numpy as np

_SPLITTER = 134217729.0  # 2**27 + 1


def two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _renorm(hi, lo):
    return two_sum(hi, lo)


def dd_add(x, y):
    s, e = two_sum(x[0], y[0])
    t, f = two_sum(x[1], y[1])
    e = e + t
    s, e = _renorm(s, e)
    e = e + f
    return _renorm(s, e)


def dd_neg(x):
    return -x[0], -x[1]


def dd_mul(x, y):
    p, e = two_prod(x[0], y[0])
    e = e + (x[0] * y[1] + x[1] * y[0])
    return _renorm(p, e)


def dd_div_float(a, b):
    """a / b for plain floats, returned in double-double."""
    q = a / b
    p, e = two_prod(q, b)
    r = (a - p) - e
    return _renorm(q, r / b)


def dd_sqrt(x):
    hi = np.sqrt(x[0])
    p, e = two_prod(hi, hi)
    r = ((x[0] - p) - e) + x[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(hi > 0, r / (2.0 * hi), 0.0)
    return _renorm(hi, lo)


def dd_from(a):
    a = np.asarray(a, dtype=float)
    return a, np.zeros_like(a)


def dd_to_float(x):
    return x[0] + x[1]


def dd_range(sat_xyz, rcv_xyz):
    """Euclidean distance rows ``sat_xyz`` -> ``rcv_xyz`` in double-double."""
    sat = np.atleast_2d(np.asarray(sat_xyz, dtype=float))
    rcv = np.asarray(rcv_xyz, dtype=float)
    acc = dd_from(np.zeros(sat.shape[0]))
    for axis in range(3):
        d = two_sum(sat[:, axis], -rcv[..., axis])
        acc = dd_add(acc, dd_mul(d, d))
    return dd_sqrt(acc)
