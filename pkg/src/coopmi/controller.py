"""Policy / value heads on the estimated state and their clipped-PPO update.

Both heads read the same 544-dimensional state ``s_hat``: a softmax head over the
eight actions and a linear value head. The update minimises::

    L = -c_pi * L_clip + c_V * L_V - c_H * H - c_I * I

where ``I`` is the social critic's MI estimate between the policy output and the
next other-agent code. The MI gradient reaches the policy parameters through the
action probabilities only; the critic networks stay frozen during the update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import critic as C
from .env.commons import N_ACTIONS
from .sensors import S_DIM
from .tensor import DivergenceError, ParameterSet
from .tensor import functional as F
from .tensor.params import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    c_pi: float = 1.0
    c_v: float = 0.5
    c_h: float = 0.01
    c_i: float = 0.1
    epochs: int = 5
    batch_size: int = 32
    lr: float = 1e-4
    normalize_advantages: bool = True
    horizon: int | None = None  # None: look ahead to the end of the buffer

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError(f"clip epsilon must lie in (0, 1), got {self.clip_eps}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be a positive number of steps")


@dataclass
class PolicyOutput:
    p: np.ndarray
    v: float


@dataclass
class Trajectory:
    """One agent's buffer of ``l`` transitions plus the state that follows the last one.

    ``dones[t]`` marks that the episode ended with reward ``rewards[t]``; nothing is
    bootstrapped across that boundary.
    """

    states: np.ndarray
    actions: np.ndarray
    probs: np.ndarray
    rewards: np.ndarray
    y_next: np.ndarray
    dones: np.ndarray
    bootstrap_state: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.intp)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.y_next = np.asarray(self.y_next, dtype=np.float64)
        self.dones = np.asarray(self.dones, dtype=bool)
        self.bootstrap_state = np.asarray(self.bootstrap_state, dtype=np.float64)
        n = len(self.states)
        for name in ("actions", "probs", "rewards", "y_next", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory column {name!r} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self):
        return len(self.states)


# -- parameters and forward pass -----------------------------------------

def build_controller(rng, zero=False, state_dim=S_DIM) -> ParameterSet:
    params = ParameterSet()
    if zero:
        params.add("pi/W", np.zeros((state_dim, N_ACTIONS)))
        params.add("v/W", np.zeros((state_dim, 1)))
    else:
        params.add("pi/W", F.glorot_uniform(rng, (state_dim, N_ACTIONS), state_dim, N_ACTIONS))
        params.add("v/W", F.glorot_uniform(rng, (state_dim, 1), state_dim, 1))
    params.add("pi/b", np.zeros(N_ACTIONS))
    params.add("v/b", np.zeros(1))
    return params


def _heads(theta: ParameterSet, s):
    logits = s @ theta["pi/W"].value + theta["pi/b"].value
    v = (s @ theta["v/W"].value + theta["v/b"].value)[:, 0]
    return logits, v


def policy_forward(theta: ParameterSet, s_hat):
    """Action probabilities and value for one state (``PolicyOutput``) or a batch (``(p, v)``)."""
    s = np.asarray(s_hat, dtype=np.float64)
    single = s.ndim == 1
    logits, v = _heads(theta, np.atleast_2d(s))
    p = F.softmax(logits)
    if single:
        return PolicyOutput(p[0], float(v[0]))
    return p, v


def sample_action(p, rng) -> int:
    """Inverse-CDF categorical draw; consumes exactly one uniform from ``rng``."""
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), len(p) - 1))


def sample_actions(probs, rng) -> np.ndarray:
    """Row-wise categorical draws for a ``(n, actions)`` matrix."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# -- returns and advantages ----------------------------------------------

def compute_advantages(rewards, values, bootstrap_value, gamma, dones=None, horizon=None):
    """n-step advantage estimates for one buffer.

    ``A_t = sum_{k<h} gamma^k r_{t+k+1} + gamma^h V(s_{t+h}) - V(s_t)`` with ``h`` the
    look-ahead, shortened at the buffer end (where ``bootstrap_value`` is used) and at
    episode ends (where the bootstrap is zero).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = len(rewards)
    dones = np.zeros(n, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    if horizon is None or horizon >= n:
        ret = np.empty(n)
        g = float(bootstrap_value)
        for t in range(n - 1, -1, -1):
            g = rewards[t] + (0.0 if dones[t] else gamma * g)
            ret[t] = g
        return ret - values
    nxt = np.append(values[1:], bootstrap_value)
    adv = np.empty(n)
    for t in range(n):
        g, disc = 0.0, 1.0
        k = t
        while True:
            g += disc * rewards[k]
            disc *= gamma
            if dones[k]:
                break
            if k == n - 1 or k - t + 1 == horizon:
                g += disc * nxt[k]
                break
            k += 1
        adv[t] = g - values[t]
    return adv


def discounted_returns(rewards, gamma, dones=None, horizon=None):
    """Value-regression targets: discounted reward sums truncated at the buffer end,
    at episode ends and after ``horizon`` steps, with no bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    n = len(rewards)
    dones = np.zeros(n, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    if horizon is None or horizon >= n:
        out = np.empty(n)
        g = 0.0
        for t in range(n - 1, -1, -1):
            g = rewards[t] + (0.0 if dones[t] else gamma * g)
            out[t] = g
        return out
    return compute_advantages(rewards, np.zeros(n), 0.0, gamma, dones, horizon)


# -- losses ---------------------------------------------------------------

def clip(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def ppo_policy_loss(theta: ParameterSet, s, actions, p_old_taken, adv, eps):
    """Clipped surrogate ``mean(min(ratio * A, clip(ratio, 1-eps, 1+eps) * A))``."""
    p_old_taken = np.asarray(p_old_taken, dtype=np.float64)
    if np.any(p_old_taken <= 0):
        raise ValueError("old-policy probability of a taken action must be positive")
    p, _ = policy_forward(theta, np.atleast_2d(s))
    ratio = p[np.arange(len(p)), actions] / p_old_taken
    return float(np.mean(np.minimum(ratio * adv, clip(ratio, 1.0 - eps, 1.0 + eps) * adv)))


def value_loss(theta: ParameterSet, s, targets):
    _, v = policy_forward(theta, np.atleast_2d(s))
    return float(np.mean((v - targets) ** 2))


@dataclass
class LossTerms:
    total: float
    policy: float
    value: float
    entropy: float
    mi: float
    clip_fraction: float
    ratios: np.ndarray


def loss_and_grad(theta: ParameterSet, cfg: PPOConfig, s, actions, p_old_taken, adv, targets,
                  statistic=None, y_next=None, y_marg=None, accumulate=True) -> LossTerms:
    """Evaluate the controller objective on one minibatch and add its gradient to ``theta``.

    Passing ``statistic=None`` removes the MI term entirely; otherwise its gradient
    is scaled by ``cfg.c_i`` (so ``c_i = 0`` contributes exact zeros).
    """
    b = len(s)
    logits, v = _heads(theta, s)
    p = F.softmax(logits)
    rows = np.arange(b)
    ratio = p[rows, actions] / p_old_taken
    eps = cfg.clip_eps
    unclipped = ratio * adv
    clipped = clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    l_pi = float(np.mean(np.minimum(unclipped, clipped)))
    # the min selects the unclipped branch unless the ratio sits outside the band on the
    # side where clipping lowers the objective
    active = unclipped <= clipped
    d_ratio = np.where(active, adv, 0.0) / b
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    d_logits_pi = (d_ratio * ratio)[:, None] * (onehot - p)

    logp = np.log(np.where(p > 0, p, 1.0))
    h_each = -np.sum(p * logp, axis=1)
    ent = float(np.mean(h_each))
    d_logits_h = -p * (logp + h_each[:, None]) / b

    l_v = float(np.mean((v - targets) ** 2))
    d_v = 2.0 * (v - targets) / b

    d_logits = -cfg.c_pi * d_logits_pi - cfg.c_h * d_logits_h
    mi = float("nan")
    if statistic is not None:
        mi, d_p = C.mi_gradient_wrt_p(statistic, C.CriticBatch(p, y_next, y_marg))
        d_logits = d_logits + F.softmax_backward(p, -cfg.c_i * d_p)

    total = -cfg.c_pi * l_pi + cfg.c_v * l_v - cfg.c_h * ent
    if statistic is not None:
        total -= cfg.c_i * mi
    if accumulate:
        theta["pi/W"].grad += s.T @ d_logits
        theta["pi/b"].grad += d_logits.sum(axis=0)
        dv = cfg.c_v * d_v
        theta["v/W"].grad += s.T @ dv[:, None]
        theta["v/b"].grad += np.array([dv.sum()])
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > eps))
    return LossTerms(total, l_pi, l_v, ent, mi, clip_frac, ratio)


# -- update -----------------------------------------------------------------

@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mi: float
    total_loss: float
    clip_fraction: float
    ratio_in_band: float
    steps: int

    def as_dict(self):
        return dict(self.__dict__)


def prepare_targets(theta: ParameterSet, traj: Trajectory, cfg: PPOConfig):
    """Advantages (optionally standardised) and value targets under the current parameters."""
    _, values = policy_forward(theta, traj.states)
    boot = policy_forward(theta, traj.bootstrap_state).v
    adv = compute_advantages(traj.rewards, values, boot, cfg.gamma, traj.dones, cfg.horizon)
    if cfg.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    targets = discounted_returns(traj.rewards, cfg.gamma, traj.dones, cfg.horizon)
    return adv, targets


def update_controller(theta: ParameterSet, traj: Trajectory, social_critic, cfg: PPOConfig, rng,
                      optimizer: Adam | None = None) -> UpdateStats:
    """Run ``cfg.epochs`` passes of shuffled minibatches over the buffer, in place.

    ``social_critic`` is a :class:`critic.SocialCritic` (frozen here) or ``None`` to
    leave the MI term out altogether.
    """
    n = len(traj)
    if n == 0:
        raise ValueError("empty trajectory")
    optimizer = Adam(cfg.lr) if optimizer is None else optimizer
    adv, targets = prepare_targets(theta, traj, cfg)
    p_old = traj.probs[np.arange(n), traj.actions]
    y_marg = None
    statistic = None
    if social_critic is not None:
        statistic = social_critic.statistic
        y_marg = C.marginal_samples(social_critic.predictor, traj.states)
    acc = {"policy": [], "value": [], "entropy": [], "mi": [], "total": [], "clip": []}
    ratios = []
    order = np.arange(n)
    steps = 0
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            terms = loss_and_grad(
                theta, cfg, traj.states[idx], traj.actions[idx], p_old[idx], adv[idx], targets[idx],
                statistic,
                traj.y_next[idx] if statistic is not None else None,
                y_marg[idx] if statistic is not None else None,
            )
            if not np.isfinite(terms.total):
                raise DivergenceError(
                    f"controller loss is not finite (policy {terms.policy}, value {terms.value}, "
                    f"entropy {terms.entropy}, mi {terms.mi})"
                )
            optimizer.step(theta, lr=cfg.lr)
            steps += 1
            acc["policy"].append(terms.policy)
            acc["value"].append(terms.value)
            acc["entropy"].append(terms.entropy)
            acc["mi"].append(terms.mi)
            acc["total"].append(terms.total)
            acc["clip"].append(terms.clip_fraction)
            ratios.append(terms.ratios)
    if steps == 0:
        return UpdateStats(*(float("nan"),) * 6, 1.0, 0)
    r = np.concatenate(ratios)
    in_band = float(np.mean((r >= 0.6) & (r <= 1.6)))
    if in_band < 0.99:
        log.warning("only %.1f%% of PPO ratios stayed inside [0.6, 1.6]", 100 * in_band)
    return UpdateStats(
        float(np.mean(acc["policy"])), float(np.mean(acc["value"])), float(np.mean(acc["entropy"])),
        float(np.mean(acc["mi"])) if statistic is not None else float("nan"),
        float(np.mean(acc["total"])), float(np.mean(acc["clip"])), in_band, steps,
    )


__all__ = [
    "LossTerms",
    "PPOConfig",
    "PolicyOutput",
    "Trajectory",
    "UpdateStats",
    "build_controller",
    "clip",
    "compute_advantages",
    "discounted_returns",
    "loss_and_grad",
    "policy_forward",
    "ppo_policy_loss",
    "prepare_targets",
    "sample_action",
    "sample_actions",
    "update_controller",
]
