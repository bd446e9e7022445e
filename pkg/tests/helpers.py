"""Statistical comparison helpers shared by the test modules."""

import math

import numpy as np


def mean_z(samples, expected):
    """z-score of a sample mean against a known value."""
    s = np.asarray(samples, dtype=float)
    se = s.std(ddof=1) / math.sqrt(len(s))
    return (s.mean() - expected) / se


def var_z(samples, expected):
    """z-score of a sample variance against a known value, using the fourth
    central moment for its standard error."""
    s = np.asarray(samples, dtype=float)
    c = s - s.mean()
    v = c.var(ddof=1)
    m4 = np.mean(c ** 4)
    se = math.sqrt(max(m4 - v ** 2, 1e-300) / len(s))
    return (v - expected) / se


def two_sample_mean_z(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    return (a.mean() - b.mean()) / se


def two_sample_var_z(a, b):
    def var_and_se(s):
        c = s - s.mean()
        v = c.var(ddof=1)
        return v, (np.mean(c ** 4) - v ** 2) / len(s)

    va, sa = var_and_se(np.asarray(a, dtype=float))
    vb, sb = var_and_se(np.asarray(b, dtype=float))
    return (va - vb) / math.sqrt(sa + sb)


def combined_z(x, sx, y, sy):
    """z-score of ``x - y`` for independent estimates with standard errors."""
    return (x - y) / math.hypot(sx, sy)


def report(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return ok
