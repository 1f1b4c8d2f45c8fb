"""Numpy reference for the fused optimizer loop in ``_ckernels.pyx``."""

import numpy as np


def all_finite(g):
    return bool(np.all(np.isfinite(g)))


def adam_update(value, m, v, g, b1, b2, c1, c2, lr, eps):
    """One bias-corrected Adam step on flat arrays, in place; clears ``g``.

    ``g`` doubles as scratch space to avoid temporaries.
    """
    m *= b1
    m += (1.0 - b1) * g
    np.square(g, out=g)
    g *= 1.0 - b2
    v *= b2
    v += g
    np.divide(v, c2, out=g)
    np.sqrt(g, out=g)
    g += eps
    np.divide(m, g, out=g)
    g *= lr / c1
    value -= g
    g.fill(0.0)
