import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmi import controller as K
from coopmi import critic as C
from coopmi.sensors import Y_DIM


def _brute_advantage(r, v, boot, gamma, dones, horizon):
    """Direct sum over each look-ahead window."""
    n = len(r)
    out = []
    for t in range(n):
        g, k = 0.0, t
        while True:
            g += gamma ** (k - t) * r[k]
            if dones[k]:
                break
            if k == n - 1:
                g += gamma ** (k - t + 1) * boot
                break
            if horizon is not None and k - t + 1 == horizon:
                g += gamma ** (k - t + 1) * v[k + 1]
                break
            k += 1
        out.append(g - v[t])
    return np.array(out)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 25), st.integers(0, 10_000), st.one_of(st.none(), st.integers(1, 30)))
def test_advantages_match_direct_sums(n, seed, horizon):
    rng = np.random.default_rng(seed)
    r = rng.integers(0, 2, n).astype(float)
    v = rng.normal(size=n)
    dones = rng.random(n) < 0.15
    boot = rng.normal()
    got = K.compute_advantages(r, v, boot, 0.9, dones, horizon)
    assert np.allclose(got, _brute_advantage(r, v, boot, 0.9, dones, horizon), atol=1e-12)
    ret = K.discounted_returns(r, 0.9, dones, horizon)
    assert np.allclose(ret, _brute_advantage(r, np.zeros(n), 0.0, 0.9, dones, horizon), atol=1e-12)


def test_returns_example():
    assert np.allclose(K.discounted_returns([1, 0, 1], 0.5), [1.25, 0.5, 1.0])
    assert np.allclose(K.discounted_returns([1, 0, 1], 0.5, [False, True, False]), [1.0, 0.0, 1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        K.PPOConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        K.PPOConfig(gamma=1.5)
    with pytest.raises(ValueError):
        K.PPOConfig(horizon=0)


def test_trajectory_length_check():
    with pytest.raises(ValueError):
        K.Trajectory(np.zeros((3, 4)), [0, 1], np.full((3, 8), 0.125), [0, 0, 0],
                     np.zeros((3, Y_DIM)), [False] * 3, np.zeros(4))


def test_policy_forward_single_and_batch():
    theta = K.build_controller(np.random.default_rng(0), state_dim=6)
    s = np.random.default_rng(1).normal(size=(3, 6))
    p, v = K.policy_forward(theta, s)
    one = K.policy_forward(theta, s[1])
    assert np.allclose(one.p, p[1]) and one.v == pytest.approx(v[1])
    assert np.allclose(p.sum(axis=1), 1.0)


def test_zero_controller_is_uniform():
    out = K.policy_forward(K.build_controller(None, zero=True, state_dim=4), np.ones(4))
    assert np.allclose(out.p, 1 / 8) and out.v == 0.0


def test_sample_action_uses_one_draw_and_matches_distribution():
    p = np.array([0.1, 0.0, 0.4, 0.0, 0.2, 0.0, 0.3, 0.0])
    rng = np.random.default_rng(0)
    draws = np.array([K.sample_action(p, rng) for _ in range(20000)])
    freq = np.bincount(draws, minlength=8) / len(draws)
    assert np.all(freq[p == 0] == 0)
    assert np.allclose(freq, p, atol=0.015)
    a, b = np.random.default_rng(5), np.random.default_rng(5)
    K.sample_action(p, a)
    b.random()
    assert a.random() == b.random()


def test_sample_actions_matches_single_draws():
    probs = np.random.default_rng(1).dirichlet(np.ones(8), size=50)
    batch = K.sample_actions(probs, np.random.default_rng(2))
    r = np.random.default_rng(2)
    u = r.random(50)
    want = [int(np.searchsorted(np.cumsum(pr), x * np.cumsum(pr)[-1], side="right")) for pr, x in zip(probs, u)]
    assert np.array_equal(batch, np.minimum(want, 7))


def test_policy_loss_rejects_zero_old_probability():
    theta = K.build_controller(np.random.default_rng(0), state_dim=3)
    with pytest.raises(ValueError):
        K.ppo_policy_loss(theta, np.zeros((1, 3)), [0], [0.0], [1.0], 0.2)


def _setup(seed, with_critic, b=7, d=5):
    rng = np.random.default_rng(seed)
    theta = K.build_controller(rng, state_dim=d)
    for _, p in theta:
        p.value[...] = rng.normal(size=p.value.shape) * 0.5
    s = rng.normal(size=(b, d))
    a = rng.integers(0, 8, b)
    p_old = rng.uniform(0.05, 0.3, b)
    adv = rng.normal(size=b)
    tgt = rng.normal(size=b)
    F = C.build_statistic(rng) if with_critic else None
    y, ym = rng.normal(size=(b, Y_DIM)), rng.normal(size=(b, Y_DIM))
    return theta, s, a, p_old, adv, tgt, F, y, ym


@pytest.mark.parametrize("with_critic", [False, True])
@pytest.mark.parametrize("seed", range(4))
def test_composed_loss_gradient(seed, with_critic):
    theta, s, a, p_old, adv, tgt, F, y, ym = _setup(seed, with_critic)
    cfg = K.PPOConfig(clip_eps=0.2, c_i=0.7)

    def total():
        return K.loss_and_grad(theta, cfg, s, a, p_old, adv, tgt, F, y, ym, accumulate=False).total

    theta.zero_grad()
    K.loss_and_grad(theta, cfg, s, a, p_old, adv, tgt, F, y, ym)
    eps = 1e-6
    for name, p in theta:
        flat, g = p.value.reshape(-1), p.grad.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            up = total()
            flat[j] = old - eps
            dn = total()
            flat[j] = old
            assert g[j] == pytest.approx((up - dn) / (2 * eps), rel=1e-4, abs=1e-8), (name, j)


def test_loss_value_matches_separate_terms():
    theta, s, a, p_old, adv, tgt, F, y, ym = _setup(0, True)
    cfg = K.PPOConfig(c_i=0.3)
    t = K.loss_and_grad(theta, cfg, s, a, p_old, adv, tgt, F, y, ym, accumulate=False)
    l_pi = K.ppo_policy_loss(theta, s, a, p_old, adv, cfg.clip_eps)
    l_v = K.value_loss(theta, s, tgt)
    p, _ = K.policy_forward(theta, s)
    h = float(np.mean(-np.sum(p * np.log(p), axis=1)))
    i = C.mi_value(F, C.CriticBatch(p, y, ym))
    assert t.total == pytest.approx(-l_pi + 0.5 * l_v - 0.01 * h - 0.3 * i, abs=1e-12)


def test_zero_mi_weight_adds_exact_zeros():
    theta, s, a, p_old, adv, tgt, F, y, ym = _setup(1, True)
    cfg = K.PPOConfig(c_i=0.0)
    theta.zero_grad()
    K.loss_and_grad(theta, cfg, s, a, p_old, adv, tgt, None)
    g_off = theta.flat_grad().copy()
    theta.zero_grad()
    K.loss_and_grad(theta, cfg, s, a, p_old, adv, tgt, F, y, ym)
    assert np.array_equal(theta.flat_grad(), g_off)


def test_bandit_converges():
    rng = np.random.default_rng(0)
    theta = K.build_controller(rng, state_dim=1)
    cfg = K.PPOConfig(c_i=0.0, lr=0.05, epochs=4, batch_size=16, gamma=0.0)
    means = np.linspace(0.1, 0.8, 8)
    s = np.ones((64, 1))
    for _ in range(100):
        p = K.policy_forward(theta, s)[0]
        a = K.sample_actions(p, rng)
        r = (rng.random(64) < means[a]).astype(float)
        traj = K.Trajectory(s, a, p, r, np.zeros((64, Y_DIM)), np.ones(64, bool), np.ones(1))
        K.update_controller(theta, traj, None, cfg, rng)
    assert K.policy_forward(theta, np.ones(1)).p[7] > 0.9


def test_update_rejects_empty_trajectory():
    theta = K.build_controller(np.random.default_rng(0), state_dim=2)
    empty = K.Trajectory(np.zeros((0, 2)), [], np.zeros((0, 8)), [], np.zeros((0, Y_DIM)), [], np.zeros(2))
    with pytest.raises(ValueError):
        K.update_controller(theta, empty, None, K.PPOConfig(), np.random.default_rng(0))


def test_clipped_gradient_equals_plain_policy_gradient_at_snapshot():
    rng = np.random.default_rng(9)
    theta = K.build_controller(rng, state_dim=5)
    s = rng.normal(size=(6, 5))
    a = rng.integers(0, 8, 6)
    adv = rng.normal(size=6) + 0.5
    p_old = K.policy_forward(theta, s)[0][np.arange(6), a]
    cfg = K.PPOConfig(c_v=0.0, c_h=0.0, c_i=0.0)
    theta.zero_grad()
    K.loss_and_grad(theta, cfg, s, a, p_old, adv, np.zeros(6))
    g = theta["pi/W"].grad.copy()

    def plain():  # mean(ratio * A) without any clipping
        p = K.policy_forward(theta, s)[0]
        return float(np.mean(p[np.arange(6), a] / p_old * adv))

    w = theta["pi/W"].value
    eps = 1e-6
    for idx in [(0, 0), (2, 3), (4, 7)]:
        old = w[idx]
        w[idx] = old + eps
        up = plain()
        w[idx] = old - eps
        dn = plain()
        w[idx] = old
        assert -g[idx] == pytest.approx((up - dn) / (2 * eps), rel=1e-6)


def test_all_zero_coefficients_leave_parameters_unchanged():
    rng = np.random.default_rng(0)
    theta = K.build_controller(rng, state_dim=3)
    before = theta.checksum()
    s = rng.normal(size=(20, 3))
    p = K.policy_forward(theta, s)[0]
    traj = K.Trajectory(s, rng.integers(0, 8, 20), p, rng.random(20), np.zeros((20, Y_DIM)), np.zeros(20, bool),
                        np.zeros(3))
    cfg = K.PPOConfig(c_pi=0.0, c_v=0.0, c_h=0.0, c_i=0.0, lr=0.1)
    K.update_controller(theta, traj, None, cfg, rng)
    assert theta.checksum() == before
