import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmi import metrics as M
from coopmi.env import commons

payoffs = st.lists(st.integers(0, 200), min_size=1, max_size=12)


@given(payoffs)
def test_equity_matches_pairwise_sum(G):
    G = np.array(G, dtype=float)
    if G.sum() == 0:
        assert M.equity(G) == 1.0
        return
    brute = 1 - sum(abs(a - b) for a in G for b in G) / (2 * len(G) * G.sum())
    assert M.equity(G) == pytest.approx(brute, abs=1e-12)
    assert -1e-12 <= M.equity(G) <= 1 + 1e-12


def test_equity_examples():
    assert M.equity([5, 5, 5]) == 1.0
    assert M.equity([0, 0, 0, 10]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        M.equity([-1, 2])


def test_utilities():
    assert M.utilities([1, 2, 3]) == 2.0
    with pytest.raises(ValueError):
        M.utilities([])


def test_peace_from_observations():
    obs = np.full((2, 4, 9, 9), commons.WALL, dtype=np.uint8)
    obs[1, :3] = commons.EMPTY  # agent 1 out of the game for three steps
    assert M.peace(obs) == pytest.approx(1 - 3 / 8)
    assert M.peace(commons.one_hot(obs)) == M.peace(obs)
    assert M.peace_from_mask(np.zeros((2, 0), bool)) == 1.0


def test_sustainability_is_sum_of_apple_counts():
    assert M.sustainability([3, 2, 2, 0]) == 7.0


def test_cooperation_index():
    assert M.cooperation_index(0.5, 2.0, 10.0) == pytest.approx(2.5)
    assert M.cooperation_index(-0.3, 2.0, 10.0) == 0.0
    assert math.isnan(M.cooperation_index(0.5, 1e-7, 10.0))


def test_average_entropy_skips_agents_without_states():
    p = [np.full((3, 8), 1 / 8), np.zeros((0, 8)), np.eye(8)[:2]]
    assert M.average_entropy(p) == pytest.approx(np.log(8) / 2)
    assert math.isnan(M.average_entropy([np.zeros((0, 8))]))


def test_z_value():
    assert M.Z_995 == pytest.approx(2.807, abs=1e-3)


def test_confidence_half_width():
    v = np.array([[1.0, 2.0], [3.0, 2.0], [5.0, 2.0]])
    hw = M.confidence_half_width(v)
    assert hw[0] == pytest.approx(M.Z_995 * 2.0 / np.sqrt(3))
    assert hw[1] == 0.0
    with pytest.raises(ValueError):
        M.confidence_half_width(v[:1])


def _record(it, rng, n=3):
    G = rng.integers(0, 20, n).astype(float)
    pol = [rng.dirichlet(np.ones(8), size=5) for _ in range(n)]
    return M.IterationRecord.from_window(it, (it + 1) * 10, G, rng.random((n, 10)) < 0.1,
                                         rng.integers(0, 30, 10), pol, rng.normal(-1, 0.1, n))


def test_record_fields():
    r = _record(0, np.random.default_rng(0))
    assert r.I_raw == pytest.approx(np.mean(r.I_agents))
    assert r.I_shifted == pytest.approx(r.I_raw + 2 * np.log(2))
    assert r.psi == pytest.approx(max(r.I_shifted, 0) / r.H_bar * r.U)


def test_record_ignores_missing_agent_estimates():
    pol = [np.full((2, 8), 1 / 8)] * 2
    r = M.IterationRecord.from_window(0, 10, [1.0, 1.0], np.zeros((2, 10)), np.ones(10), pol, [-1.0, float("nan")])
    assert r.I_raw == -1.0


def test_run_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    recs = [_record(i, rng) for i in range(4)]
    M.write_run_csv(tmp_path / "m.csv", recs)
    cols = M.read_run_csv(tmp_path / "m.csv")
    for k in M.INDICES:
        want = np.array([getattr(r, k) for r in recs])
        assert np.array_equal(cols[k], want, equal_nan=True)
    assert np.array_equal(cols["G_2"], [r.G[2] for r in recs])


def test_aggregate_sweep_and_outputs(tmp_path):
    rng = np.random.default_rng(2)
    runs = {m: [[_record(i, rng) for i in range(3)] for _ in range(4)] for m in ("cms", "baseline")}
    s = M.aggregate_sweep(runs)
    assert s.runs == {"cms": 4, "baseline": 4}
    u = np.array([[r.U for r in run] for run in runs["cms"]])
    assert np.allclose(s.mean[("cms", "U")], u.mean(axis=0))
    assert np.allclose(s.half_width[("cms", "U")], M.Z_995 * u.std(axis=0, ddof=1) / 2)
    M.write_sweep_csv(tmp_path / "s.csv", s)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "iter,index,mode,mean,ci_half_width"
    assert len(lines) == 1 + 2 * len(M.INDICES) * 3
    paths = M.plot_sweep(s, tmp_path / "plots", indices=("U", "psi"))
    assert [p.name for p in paths] == ["U.png", "psi.png"] and all(p.stat().st_size > 0 for p in paths)


def test_aggregate_rejects_ragged_runs():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        M.aggregate_sweep({"cms": [[_record(0, rng)], [_record(0, rng), _record(1, rng)]]})
    with pytest.raises(ValueError):
        M.aggregate_sweep({"cms": [[_record(0, rng)]]})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_indices_within_bounds(seed):
    r = _record(0, np.random.default_rng(seed), n=4)
    assert 0 <= r.E <= 1 + 1e-12 and 0 <= r.P <= 1
    assert 0 <= r.H_bar <= np.log(8) + 1e-12
