"""Social critic: next-code predictor Y, statistic network F and the softplus MI bound.

The MI estimate for a batch of joint pairs ``(p_i, y_i)`` and marginal pairs
``(p_i, ym_i)`` is::

    I = -mean softplus(-F(p_i, y_i)) - mean softplus(F(p_i, ym_i))

which equals ``2 * JSD - 2 ln 2`` at the optimum over F. ``ym_i`` is the predictor
output averaged over all eight actions for the state of sample ``i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .env.commons import N_ACTIONS
from .sensors import S_DIM, Y_DIM
from .tensor import DivergenceError, Network
from .tensor import functional as Fn
from .tensor import layers
from .tensor.layers import dense
from .tensor.params import Adam

log = logging.getLogger(__name__)

P_DIM = N_ACTIONS
F_IN = P_DIM + Y_DIM
Y_IN = S_DIM + N_ACTIONS
_ACTION_EYE = np.eye(N_ACTIONS)


def build_predictor(rng, zero=False, state_dim=S_DIM):
    return Network([
        dense("Y/fc1", state_dim + N_ACTIONS, 128, "relu"),
        dense("Y/fc2", 128, 128, "relu"),
        dense("Y/fc3", 128, Y_DIM),
    ], rng=rng, zero=zero)


def build_statistic(rng, zero=False):
    return Network([
        dense("F/fc1", F_IN, 32, "relu"),
        dense("F/fc2", 32, 32, "relu"),
        dense("F/fc3", 32, 1),
    ], rng=rng, zero=zero)


@dataclass
class CriticBatch:
    p: np.ndarray
    y_next: np.ndarray
    y_marg: np.ndarray

    def __post_init__(self):
        self.p = np.atleast_2d(np.asarray(self.p, dtype=np.float64))
        self.y_next = np.atleast_2d(np.asarray(self.y_next, dtype=np.float64))
        self.y_marg = np.atleast_2d(np.asarray(self.y_marg, dtype=np.float64))
        if not (len(self.p) == len(self.y_next) == len(self.y_marg)):
            raise ValueError("critic batch columns have different lengths")
        if np.any(self.p < 0) or np.any(np.abs(self.p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("p rows must lie on the probability simplex")

    def __len__(self):
        return len(self.p)

    def subset(self, idx):
        return CriticBatch(self.p[idx], self.y_next[idx], self.y_marg[idx])


# -- predictor ----------------------------------------------------------

def predictor_input(s_hat, actions):
    s_hat = np.atleast_2d(s_hat)
    return np.concatenate([s_hat, _ACTION_EYE[np.asarray(actions, dtype=np.intp).reshape(-1)]], axis=1)


def predict_y_next(Y: Network, s_hat, a):
    """Predicted next other-agent code for state(s) ``s_hat`` and action(s) ``a``."""
    single = np.ndim(s_hat) == 1
    out = Y.forward(predictor_input(s_hat, np.atleast_1d(a)), record=False)
    return out[0] if single else out


def predictor_loss(Y: Network, s_hat, actions, y_next, backward=False):
    pred = Y.forward(predictor_input(s_hat, actions), record=backward)
    diff = pred - y_next
    loss = float(np.mean(diff * diff))
    if backward:
        Y.backward(2.0 * diff / diff.size, input_grad=False)
    return loss


def train_predictor(Y: Network, s_hat, actions, y_next, rng, epochs=10, batch_size=32, lr=5e-4):
    """Minibatch Adam on the squared prediction error. Returns per-epoch mean losses."""
    n = len(s_hat)
    if n == 0:
        raise ValueError("empty predictor batch")
    opt = Adam(lr)
    history = []
    order = np.arange(n)
    for _ in range(epochs):
        rng.shuffle(order)
        losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            loss = predictor_loss(Y, s_hat[idx], actions[idx], y_next[idx], backward=True)
            if not np.isfinite(loss):
                raise DivergenceError("predictor loss is not finite")
            opt.step(Y.params)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def marginal_samples(Y: Network, s_hat):
    """Predictor output averaged over all actions, computed with one shared state projection."""
    s_hat = np.atleast_2d(s_hat)
    n, d = s_hat.shape
    first = Y.specs[0]
    w = Y.params[first.name + "/W"].value
    b = Y.params[first.name + "/b"].value
    z_state = s_hat @ w[:d] + b
    z = z_state[None, :, :] + w[d:][:, None, :]  # (actions, n, hidden)
    h = np.maximum(z, 0.0).reshape(N_ACTIONS * n, -1)
    for spec in Y.specs[1:]:
        h, _ = layers.forward(spec, Y.params, h)
    return h.reshape(N_ACTIONS, n, -1).mean(axis=0)


# -- statistic network and the MI bound --------------------------------

def _scores(F: Network, batch: CriticBatch, record=False):
    joint = np.concatenate([batch.p, batch.y_next], axis=1)
    marg = np.concatenate([batch.p, batch.y_marg], axis=1)
    t = F.forward(np.concatenate([joint, marg], axis=0), record=record)[:, 0]
    n = len(batch)
    return t[:n], t[n:]


def _bound(t_joint, t_marg):
    return float(-np.mean(Fn.softplus(-t_joint)) - np.mean(Fn.softplus(t_marg)))


def mi_value(F: Network, batch: CriticBatch) -> float:
    return _bound(*_scores(F, batch))


def _score_grads(t_joint, t_marg):
    """dI/dt for the joint and marginal scores."""
    n = len(t_joint)
    return Fn.sigmoid(-t_joint) / n, -Fn.sigmoid(t_marg) / n


def mi_ascent_grad(F: Network, batch: CriticBatch) -> float:
    """Accumulate gradients of ``-I`` into F's parameters. Returns I."""
    tj, tm = _scores(F, batch, record=True)
    gj, gm = _score_grads(tj, tm)
    F.backward(-np.concatenate([gj, gm])[:, None], input_grad=False)
    return _bound(tj, tm)


def train_statistic_network(F: Network, batch: CriticBatch, rng, epochs=10, batch_size=32, lr=0.01):
    """Maximise I over F's parameters; returns I on the whole batch afterwards."""
    n = len(batch)
    if n == 0:
        raise ValueError("empty critic batch")
    opt = Adam(lr)
    order = np.arange(n)
    for _ in range(epochs):
        rng.shuffle(order)
        for lo in range(0, n, batch_size):
            value = mi_ascent_grad(F, batch.subset(order[lo:lo + batch_size]))
            if not np.isfinite(value):
                raise DivergenceError("MI estimate is not finite")
            opt.step(F.params)
    return mi_value(F, batch)


def mi_gradient_wrt_p(F: Network, batch: CriticBatch):
    """``(I, dI/dp)`` with F held fixed; F's parameter gradients are untouched."""
    tj, tm = _scores(F, batch, record=True)
    gj, gm = _score_grads(tj, tm)
    dx = F.backward(np.concatenate([gj, gm])[:, None], accumulate=False)
    n = len(batch)
    return _bound(tj, tm), dx[:n, :P_DIM] + dx[n:, :P_DIM]


def shifted(i_raw):
    """MI estimate moved so that independence reads 0."""
    return i_raw + 2.0 * Fn.LN2


@dataclass
class SocialCritic:
    """Per-agent Y and F networks."""

    predictor: Network
    statistic: Network

    @classmethod
    def build(cls, rng, state_dim=S_DIM):
        return cls(build_predictor(rng, state_dim=state_dim), build_statistic(rng))

    def batch_for(self, p, s_hat, y_next) -> CriticBatch:
        return CriticBatch(p, y_next, marginal_samples(self.predictor, s_hat))


def mi_gradient_wrt_policy(F: Network, p, y_next, y_marg):
    """dI/dp for policy outputs ``p``; the caller chains it through the policy and scales by c_I."""
    return mi_gradient_wrt_p(F, CriticBatch(p, y_next, y_marg))[1]
