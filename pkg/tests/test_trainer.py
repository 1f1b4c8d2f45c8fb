import numpy as np
import pytest
from conftest import params_equal

from coopmi import trainer as T
from coopmi.config import ConfigError, ExperimentConfig, builtin_config, resolve_config
from coopmi.metrics import read_run_csv
from coopmi.tensor import DivergenceError


def same_rows(a, b):
    ra, rb = [r.row() for r in a], [r.row() for r in b]
    if [list(r) for r in ra] != [list(r) for r in rb]:
        return False
    return all(np.array_equal(np.array(list(x.values()), float), np.array(list(y.values()), float), equal_nan=True)
               for x, y in zip(ra, rb))


# -- schedules, seeds and config ---------------------------------------------------

def test_schedule_flags_examples():
    assert T.schedule_flags(0, 1000, 2000, 4000) == {"train_Y": True, "train_F": True, "train_C": True}
    assert T.schedule_flags(1000, 1000, 2000, 4000) == {"train_Y": True, "train_F": False, "train_C": False}
    assert T.schedule_flags(2000, 1000, 2000, 4000) == {"train_Y": True, "train_F": True, "train_C": False}
    assert T.schedule_flags(4000, 1000, 2000, 4000)["train_C"]
    assert not T.schedule_flags(6000, 1000, 2000, 4000)["train_C"]


def test_seed_streams_are_distinct_and_stable():
    a = T.seed_stream(3, 1, 0, 1).random(4)
    assert np.array_equal(a, T.seed_stream(3, 1, 0, 1).random(4))
    assert not np.array_equal(a, T.seed_stream(3, 1, 1, 1).random(4))
    assert not np.array_equal(a, T.seed_stream(4, 1, 0, 1).random(4))


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(l=100, n_y=150, n_f=200, n_c=400)
    with pytest.raises(ConfigError):
        ExperimentConfig(l=100, n_y=100, n_f=400, n_c=400)
    with pytest.raises(ConfigError):
        ExperimentConfig(mode="other")
    with pytest.raises(ConfigError):
        ExperimentConfig(clip_eps=2.0)


def test_config_text_round_trip_and_unknown_keys():
    cfg = resolve_config("desk")
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_text("n_agnets = 3\n")
    assert ExperimentConfig.from_text("t_max = 1e4  # comment\n").t_max == 10_000


def test_builtin_configs():
    full = resolve_config("full")
    assert (full.n_agents, full.t_max, full.l) == (10, 10_000_000, 1000)
    desk = resolve_config("desk")
    assert (desk.map, desk.n_agents, desk.l, desk.t_max) == ("desk_15x9", 4, 500, 200_000)
    assert resolve_config("desk", seed=7, mode=None).seed == 7
    with pytest.raises(ConfigError):
        builtin_config("nope")


def test_baseline_has_zero_mi_weight():
    assert resolve_config("desk", mode="baseline").ppo().c_i == 0.0
    assert resolve_config("desk", mode="cms").ppo().c_i == 0.1


# -- the loop ----------------------------------------------------------------------

def test_run_length_is_floor_of_steps(smoke_cfg, untrained_sensors):
    exp = T.Experiment(smoke_cfg.replace(t_max=230), sensors=untrained_sensors)
    recs = exp.run()
    assert [r.t_total for r in recs] == [0, 50, 100, 150]
    assert exp.t_total == 200


def test_zero_steps_runs_nothing(smoke_cfg, untrained_sensors, tmp_path):
    recs = T.run_training(smoke_cfg.replace(t_max=0), tmp_path, sensors=untrained_sensors)
    assert recs == []
    assert read_run_csv(tmp_path / "metrics.csv")["U"].size == 0


def test_same_seed_same_metrics(smoke_cfg, untrained_sensors):
    a = T.Experiment(smoke_cfg, sensors=untrained_sensors).run()
    b = T.Experiment(smoke_cfg, sensors=untrained_sensors).run()
    assert same_rows(a, b)


def test_trajectories_skip_absent_steps(smoke_cfg, untrained_sensors):
    exp = T.Experiment(smoke_cfg, sensors=untrained_sensors)
    trajs, window = exp.collect(200)
    for i, tr in enumerate(trajs):
        # steps started while out of the game are not recorded
        assert len(tr) == 200 - int(window.timed_out[i, :-1].sum())
        beamed = window.timed_out[i, 1:] & ~window.timed_out[i, :-1]
        assert tr.dones.sum() >= beamed.sum()
        assert np.allclose(tr.probs.sum(axis=1), 1.0)
        assert tr.states.shape[1] == 32 + 512


def test_decentralized_updates(smoke_cfg, untrained_sensors):
    """Changing agent 1's buffer leaves agent 0's update untouched."""
    exp = T.Experiment(smoke_cfg, sensors=untrained_sensors)
    trajs, _ = exp.collect()
    flags = {"train_Y": True, "train_F": True, "train_C": True}
    other = T.Experiment(smoke_cfg, sensors=untrained_sensors)
    other.collect()
    exp.train_agent(0, trajs[0], flags)
    t1 = trajs[1]
    t1.rewards = t1.rewards + 5.0
    other.train_agent(1, t1, flags)
    other.train_agent(0, trajs[0], flags)
    for tag, ps in exp.agents[0].parameter_sets().items():
        assert params_equal(ps, other.agents[0].parameter_sets()[tag]), tag


def test_checkpoint_resume_matches_uninterrupted(smoke_cfg, untrained_sensors, tmp_path):
    cfg = smoke_cfg.replace(t_max=200)
    full = T.Experiment(cfg, sensors=untrained_sensors)
    full.run()
    part = T.Experiment(cfg, sensors=untrained_sensors)
    part.run(iterations=2)
    part.save(tmp_path / "ck")
    resumed = T.Experiment.load(tmp_path / "ck")
    resumed.run()
    assert same_rows(resumed.records, full.records)


def test_corrupt_checkpoint_rejected(smoke_cfg, untrained_sensors, tmp_path):
    exp = T.Experiment(smoke_cfg, sensors=untrained_sensors)
    exp.save(tmp_path / "ck")
    (tmp_path / "ck" / "meta.json").write_text("{")
    with pytest.raises(T.CheckpointError):
        T.Experiment.load(tmp_path / "ck")


def test_sensor_cache_reused(smoke_cfg, tmp_path):
    s1, rep = T.obtain_sensors(smoke_cfg, tmp_path)
    assert rep["frames"] == smoke_cfg.pretrain_steps * smoke_cfg.pretrain_agents
    s2, _ = T.obtain_sensors(smoke_cfg, tmp_path)
    assert s1.checksum() == s2.checksum()
    assert len(list(tmp_path.glob("sensors-*.bin"))) == 1


def test_failed_run_leaves_state(smoke_cfg, untrained_sensors, tmp_path, monkeypatch):
    exp = T.Experiment(smoke_cfg, sensors=untrained_sensors)

    def boom(*a, **k):
        raise DivergenceError("forced")

    monkeypatch.setattr(exp, "train_agent", boom)
    with pytest.raises(DivergenceError):
        exp.run(tmp_path)
    assert (tmp_path / "failed" / "state.bin").exists()
