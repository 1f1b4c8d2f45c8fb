import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopmi.env import commons, kernels, render
from coopmi.env.commons import (
    APPLE,
    BEAM,
    DOWN,
    EMPTY,
    OTHER,
    SELF,
    SHOOT,
    SIGHT,
    STILL,
    TURN_LEFT,
    TURN_RIGHT,
    UP,
    WALL,
    EnvError,
    MapSpec,
)

LINE = """
@@@@@@@@@
@P.P....@
@.......@
@......a@
@@@@@@@@@
"""

ONE_APPLE = """
@@@@@
@Pa.@
@...@
@@@@@
"""


def fresh(text, n, seed=0):
    return commons.reset(MapSpec.from_text(text), n, seed=seed)


def act(state, *actions):
    return commons.step(state, list(actions))


# -- maps -------------------------------------------------------------------------

def test_builtin_maps_load():
    m = commons.builtin_map("commons_default")
    assert len(m.spawns) >= 10
    d = commons.builtin_map("desk_15x9")
    assert (d.height, d.width) == (9, 15)
    assert d.apple_sites.sum() > 0


def test_map_border_must_be_wall():
    with pytest.raises(EnvError):
        MapSpec.from_text("@@@\n@P.\n@@@")


def test_unknown_symbol_rejected():
    with pytest.raises(EnvError):
        MapSpec.from_text("@@@\n@X@\n@@@")


def test_too_many_agents_rejected():
    with pytest.raises(EnvError):
        fresh(LINE, 3)


def test_ten_agents_on_default_map():
    s = commons.reset(commons.builtin_map("commons_default"), 10, seed=0)
    assert s.n_agents == 10
    assert np.all(s.timeouts() == 0)


# -- respawn law --------------------------------------------------------------------

def test_respawn_table():
    expected = [0.0, 0.01, 0.01, 0.05, 0.05, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]
    assert [commons.respawn_probability(k) for k in range(11)] == expected
    assert np.array_equal(commons.respawn_probability(np.arange(11)), expected)


def test_respawn_rejects_negative():
    with pytest.raises(EnvError):
        commons.respawn_probability(-1)


def test_neighbor_counts_match_brute_force():
    rng = np.random.default_rng(0)
    apples = rng.random((7, 11)) < 0.4
    counts = kernels.python_backend.neighbor_counts(apples.view(np.uint8))
    for r in range(7):
        for c in range(11):
            want = sum(
                apples[rr, cc]
                for rr in range(7) for cc in range(11)
                if 0 < (rr - r) ** 2 + (cc - c) ** 2 <= 4
            )
            assert counts[r, c] == want


# -- moves, harvest, beams, timeouts ------------------------------------------------------

def test_moves_are_relative_to_orientation():
    s = fresh(LINE, 1)
    assert s.agents[0].position == (1, 1)
    act(s, TURN_RIGHT)  # now facing east
    assert s.agents[0].orientation == 1
    act(s, UP)
    assert s.agents[0].position == (1, 2)
    act(s, DOWN)
    assert s.agents[0].position == (1, 1)
    act(s, TURN_LEFT)
    act(s, TURN_LEFT)  # facing west
    act(s, UP)  # wall ahead: stays
    assert s.agents[0].position == (1, 1)


def test_occupied_cell_blocks_move():
    s = fresh(LINE, 2)
    s.agents[1].position = (1, 2)
    act(s, TURN_RIGHT, STILL)
    act(s, UP, STILL)
    assert s.agents[0].position == (1, 1)


def test_harvest_gives_reward_and_removes_apple():
    s = fresh(LINE, 1)
    s.agents[0].position = (3, 6)
    s.agents[0].orientation = 1
    _, r, log = act(s, UP)
    assert r[0] == 1.0
    assert not s.apples[3, 7] or log.terminated
    assert [e.kind for e in log.of_kind("collect")] == ["collect"]


def test_last_apple_terminates_and_resets():
    s = fresh(ONE_APPLE, 1)
    act(s, TURN_RIGHT)
    _, r, log = act(s, UP)
    assert r[0] == 1.0
    assert log.terminated
    assert log.apples_present == 0
    assert s.apple_count() == 1  # fresh episode
    assert s.agents[0].position == (1, 1)
    assert s.episode == 1


def test_beam_hits_agent_two_cells_ahead():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    _, _, log = act(s, SHOOT, STILL)
    assert s.agents[1].timeout_remaining == commons.TIMEOUT_STEPS
    assert s.agents[1].position is None
    assert [e.agent for e in log.of_kind("hit")] == [1]
    assert (1, 2) in s.beams and (1, 3) in s.beams


def test_beam_stops_at_range_four_and_walls():
    walls = np.zeros((3, 12), dtype=np.uint8)
    walls[:, 0] = walls[:, -1] = 1
    assert kernels.trace_beam(walls, 1, 1, 1) == [(1, 2), (1, 3), (1, 4), (1, 5)]
    walls[1, 3] = 1
    assert kernels.trace_beam(walls, 1, 1, 1) == [(1, 2)]


def test_victim_absent_exactly_25_steps_then_returns():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    act(s, SHOOT, STILL)
    absent = 1
    while s.agents[1].position is None:
        _, _, log = act(s, STILL, SHOOT)  # victim's actions are ignored while out
        absent += 1 if s.agents[1].position is None else 0
        assert not log.of_kind("shoot") or s.agents[1].position is not None
    assert absent == commons.TIMEOUT_STEPS
    assert s.agents[1].position == (1, 3)


def test_returning_agent_avoids_occupied_spawn():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    act(s, SHOOT, STILL)
    for _ in range(commons.TIMEOUT_STEPS - 1):
        act(s, STILL, STILL)
    s.agents[0].position = (1, 3)  # squat on the victim's spawn
    _, _, log = act(s, STILL, STILL)
    ret = log.of_kind("return")
    assert ret and s.agents[1].position not in (None, (1, 3))


def test_wrong_action_count_rejected():
    s = fresh(LINE, 2)
    with pytest.raises(EnvError):
        commons.step(s, [0])
    with pytest.raises(EnvError):
        commons.step(s, [0, 8])


# -- observations ----------------------------------------------------------------------

def test_view_centre_is_self_and_outside_is_wall():
    s = fresh(LINE, 1)
    o = commons.observation_indices(s)[0]
    assert o[4, 4] == SELF
    assert o[0, 0] == WALL  # outside the map
    assert o[3, 4] == WALL  # facing north with the wall directly above


def test_view_rotates_with_orientation():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)  # agent 0 faces east towards agent 1 at two cells
    o = commons.observation_indices(s)[0]
    assert o[3, 4] == SIGHT  # the cell ahead (east) is drawn above the centre
    assert o[2, 4] == OTHER
    assert o[4, 3] == WALL  # west wall appears on the left


def test_beam_cells_visible_in_views():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    act(s, SHOOT, STILL)
    o = commons.observation_indices(s)[0]
    assert o[3, 4] == BEAM


def test_timed_out_agent_sees_sentinel():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    act(s, SHOOT, STILL)
    o = commons.render_observation(s, 1)
    assert commons.is_timeout_observation(o)
    assert np.array_equal(o, commons.timeout_observation())
    assert not commons.is_timeout_observation(commons.render_observation(s, 0))


def test_one_hot_has_one_class_per_pixel():
    s = commons.reset(commons.builtin_map("desk_15x9"), 4, seed=0)
    o = commons.one_hot(commons.observation_indices(s))
    assert o.shape == (4, 9, 9, commons.N_CHANNELS)
    assert np.all(o.sum(axis=-1) == 1)


def test_mask_others_keeps_only_other_agents():
    idx = np.array([[EMPTY, SELF, OTHER], [APPLE, WALL, OTHER]], dtype=np.uint8)
    m = commons.mask_others(idx)
    assert np.array_equal(m, [[0, 0, OTHER], [0, 0, OTHER]])
    oh = commons.mask_others(commons.one_hot(idx))
    assert np.array_equal(np.argmax(oh, -1), m)


# -- kernels: compiled vs numpy -----------------------------------------------------------

needs_compiled = pytest.mark.skipif("cython" not in kernels.backends(), reason="compiled kernels not built")


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_backends_agree(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(3, 14)), int(rng.integers(3, 20))
    codes = rng.integers(0, 7, size=(h, w)).astype(np.uint8)
    k = int(rng.integers(1, 5))
    rows, cols = rng.integers(0, h, k), rng.integers(0, w, k)
    ors = rng.integers(0, 4, k)
    py, cy = kernels.python_backend, kernels.compiled_backend
    assert np.array_equal(py.extract_views(codes, rows, cols, ors), cy.extract_views(codes, rows, cols, ors))
    apples = (rng.random((h, w)) < 0.5).astype(np.uint8)
    assert np.array_equal(py.neighbor_counts(apples), cy.neighbor_counts(apples))
    walls = (rng.random((h, w)) < 0.2).astype(np.uint8)
    r, c, o = int(rows[0]), int(cols[0]), int(ors[0])
    assert py.trace_beam(walls, r, c, o) == cy.trace_beam(walls, r, c, o)


# -- invariants over random play ----------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_random_play_invariants(seed):
    s = commons.reset(commons.builtin_map("desk_15x9"), 4, seed=seed)
    rng = np.random.default_rng(seed)
    for _ in range(60):
        _, r, log = commons.step(s, rng.integers(0, commons.N_ACTIONS, 4))
        assert np.all((r == 0) | (r == 1))
        cells = [a.position for a in s.agents if a.position is not None]
        assert len(set(cells)) == len(cells)
        for a in s.agents:
            assert (a.timeout_remaining > 0) == (a.position is None)
            if a.position is not None:
                assert not s.map.walls[a.position]
        assert not np.any(s.apples & ~s.map.apple_sites)


def test_same_seed_same_trajectory():
    def play(seed):
        s = commons.reset(commons.builtin_map("desk_15x9"), 4, seed=seed)
        rng = np.random.default_rng(1)
        out = []
        for _ in range(80):
            commons.step(s, rng.integers(0, 8, 4))
            out.append(commons.observation_indices(s).copy())
        return np.array(out)

    assert np.array_equal(play(3), play(3))


def test_state_dict_round_trip_continues_identically():
    s = commons.reset(commons.builtin_map("desk_15x9"), 4, seed=5)
    rng = np.random.default_rng(0)
    for _ in range(30):
        commons.step(s, rng.integers(0, 8, 4))
    clone = commons.GridState.from_dict(json.loads(json.dumps(s.to_dict())))
    acts = rng.integers(0, 8, (40, 4))
    for a in acts:
        _, r1, _ = commons.step(s, a)
        _, r2, _ = commons.step(clone, a)
        assert np.array_equal(r1, r2)
    assert np.array_equal(s.apples, clone.apples)
    assert np.array_equal(commons.observation_indices(s), commons.observation_indices(clone))


def test_event_log_lines_are_json():
    s = fresh(LINE, 2)
    act(s, TURN_RIGHT, STILL)
    _, _, log = act(s, SHOOT, STILL)
    rows = [json.loads(line) for line in log.to_lines()]
    assert {"shoot", "hit"} <= {r["event"] for r in rows}


def test_render_outputs():
    s = commons.reset(commons.builtin_map("desk_15x9"), 4, seed=0)
    text = render.to_ansi(s)
    lines = text.splitlines()
    assert len(lines) == 10 and lines[-1].startswith("t=0")
    img = render.to_rgb(s, scale=2)
    assert img.shape == (18, 30, 3) and img.dtype == np.uint8
