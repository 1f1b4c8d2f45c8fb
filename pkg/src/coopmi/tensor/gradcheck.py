"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

import numpy as np

from .params import ParameterSet


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def check_loss(loss_fn, params: ParameterSet, grad_fn, h=1e-5, max_coords=None, rng=None, per_tensor=False):
    """Compare ``grad_fn()`` against central differences of ``loss_fn()``.

    ``grad_fn`` must leave analytic gradients in ``params[...].grad``. When
    ``max_coords`` is set only that many randomly chosen coordinates per tensor are
    perturbed. Returns the largest relative error seen: per coordinate by default, or
    ``|g - g_num| / max(|g|, |g_num|)`` over each tensor's probed coordinates when
    ``per_tensor`` is set (robust to round-off on near-zero components).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    params.zero_grad()
    grad_fn()
    analytic = {k: p.grad.copy() for k, p in params}
    params.zero_grad()
    worst = 0.0
    for name, p in params:
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        ga = analytic[name].reshape(-1)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            down = loss_fn()
            flat[i] = old
            numeric[k] = (up - down) / (2 * h)
        if per_tensor:
            a = ga[idx]
            scale = max(np.linalg.norm(a), np.linalg.norm(numeric), 1e-8)
            worst = max(worst, float(np.linalg.norm(a - numeric) / scale))
        else:
            for k, i in enumerate(idx):
                worst = max(worst, relative_error(ga[i], numeric[k]))
    return worst


def grad_check(network, x, tolerance=1e-4, h=1e-5, max_coords=None, seed=0):
    """Max relative error of ``network`` parameter gradients for a random linear readout.

    The scalar probed is ``sum(w * network(x))`` with fixed random ``w``.
    ``tolerance`` is only used for the boolean in the returned tuple.
    """
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(x.shape[0],) + tuple(network.out_dim))

    def loss():
        return float(np.sum(w * network.forward(x, record=False)))

    def grad():
        network.forward(x)
        network.backward(w)

    err = check_loss(loss, network.params, grad, h=h, max_coords=max_coords, rng=rng)
    return err, err < tolerance
