"""Decentralised training loop: shared environment, private learners.

Every agent owns its controller, predictor, statistic network, memory state and
random streams. Per iteration all agents act in the shared game for ``l`` steps,
then each agent trains on its own buffer according to the ``n_Y`` / ``n_F`` /
``n_C`` schedules. The only things agents share are the frozen sensors and the
environment itself.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import controller as K
from . import critic as C
from .config import ExperimentConfig
from .env import commons
from .metrics import IterationRecord, write_run_csv
from .sensors import Sensors, pretrain_sensors
from .tensor import CheckpointError, ParameterSet, read_records, write_records
from .tensor.params import Adam

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

# spawn-key roles for the counter-based seed tree
_ENV, _AGENT = 0, 1
_INIT, _ACT, _TRAIN = 0, 1, 2


def schedule_flags(t_total: int, n_y: int, n_f: int, n_c: int) -> dict:
    return {"train_Y": t_total % n_y == 0, "train_F": t_total % n_f == 0, "train_C": t_total % n_c == 0}


def seed_stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for one role of the seed tree; streams for different keys never overlap
    and adding agents leaves existing keys untouched."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


# -- sensor cache ------------------------------------------------------------

def _source_digest() -> str:
    root = Path(__file__).parent
    h = hashlib.sha256()
    for rel in ("sensors.py", "env/commons.py", "env/_pykernels.py", "tensor/functional.py",
                "tensor/layers.py", "tensor/params.py"):
        h.update((root / rel).read_bytes())
    return h.hexdigest()[:16]


def default_cache_dir() -> Path:
    env = os.environ.get("COOPMI_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "coopmi"


def sensor_cache_key(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.sensor_key(), sort_keys=True) + _source_digest()
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def obtain_sensors(cfg: ExperimentConfig, cache_dir=None):
    """Pretrained sensors for ``cfg``, trained once per key and reused afterwards.

    Returns ``(sensors, report)``; the report holds the per-epoch validation history.
    """
    cache_dir = default_cache_dir() if cache_dir is None else Path(cache_dir)
    key = sensor_cache_key(cfg)
    path = cache_dir / f"sensors-{key}.bin"
    meta = cache_dir / f"sensors-{key}.json"
    if path.exists() and meta.exists():
        log.info("using cached sensors %s", path)
        return Sensors.load(path), json.loads(meta.read_text())
    map_spec = commons.resolve_map(cfg.sensor_map)
    log.info("pretraining sensors on %s (%d steps x %d agents)", cfg.sensor_map, cfg.pretrain_steps,
             cfg.pretrain_agents)
    sensors, report = pretrain_sensors(
        map_spec, cfg.pretrain_steps, cfg.pretrain_agents, cfg.pretrain_seed,
        epochs=cfg.pretrain_epochs, batch_size=cfg.pretrain_batch_size, lr=cfg.pretrain_lr,
        spectral_radius_target=cfg.spectral_radius, dy_channels=cfg.dy_channels,
    )
    summary = {
        "key": cfg.sensor_key(),
        "frames": report["frames"],
        "val_accuracy_x": [h.val_accuracy for h in report["history_x"]],
        "val_accuracy_y": [h.val_accuracy for h in report["history_y"]],
        "train_loss_x": [h.train_loss for h in report["history_x"]],
        "train_loss_y": [h.train_loss for h in report["history_y"]],
    }
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    sensors.save(tmp)
    os.replace(tmp, path)
    meta.write_text(json.dumps(summary, indent=1))
    return sensors, summary


# -- agents --------------------------------------------------------------------

@dataclass
class Agent:
    id: int
    theta: ParameterSet
    critic: C.SocialCritic
    act_rng: np.random.Generator
    train_rng: np.random.Generator

    @classmethod
    def create(cls, seed, i):
        rng = seed_stream(seed, _AGENT, i, _INIT)
        theta = K.build_controller(rng)
        critic = C.SocialCritic.build(rng)
        return cls(i, theta, critic, seed_stream(seed, _AGENT, i, _ACT), seed_stream(seed, _AGENT, i, _TRAIN))

    def parameter_sets(self):
        return {"theta": self.theta, "Y": self.critic.predictor.params, "F": self.critic.statistic.params}


@dataclass
class Window:
    """Population-level raw data of one iteration, used for the indices."""

    rewards: np.ndarray       # (n, l)
    timed_out: np.ndarray     # (n, l) after each step
    apple_counts: np.ndarray  # (l,)
    terminations: int = 0

    @property
    def G(self):
        return self.rewards.sum(axis=1)


@dataclass
class AgentUpdate:
    flags: dict
    predictor_loss: float = float("nan")
    mi: float = float("nan")
    controller: K.UpdateStats | None = None
    extra: dict = field(default_factory=dict)


class Experiment:
    """One run of the training loop. ``mi_path=False`` builds the controller update
    without any MI term (used to check that the baseline is exactly plain PPO)."""

    def __init__(self, cfg: ExperimentConfig, sensors: Sensors | None = None, cache_dir=None, mi_path=True):
        self.cfg = cfg
        self.ppo = cfg.ppo()
        self.mi_path = mi_path
        if sensors is None:
            sensors, _ = obtain_sensors(cfg, cache_dir)
        self.sensors = sensors
        self.map = commons.resolve_map(cfg.map)
        n = cfg.n_agents
        self.env = commons.reset(self.map, n, rng=seed_stream(cfg.seed, _ENV))
        self.agents = [Agent.create(cfg.seed, i) for i in range(n)]
        self.optimizers = [Adam(cfg.ppo_lr) for _ in range(n)]
        self.h = np.zeros((n, sensors.memory.w_rec.shape[0]))
        self.t_total = 0
        self.iteration = 0
        self.records: list[IterationRecord] = []
        self._refresh_codes()

    @property
    def n(self):
        return self.cfg.n_agents

    def _refresh_codes(self):
        self.obs = commons.observation_indices(self.env)
        self.x, self.y = self.sensors.encode(self.obs)

    # -- interaction ---------------------------------------------------

    def collect(self, l=None, on_step=None):
        """Step the shared game ``l`` times. Returns ``(trajectories, window)``.

        An agent records a transition only for steps it starts in the game. The step
        on which it is beamed is kept (its next observation is the timeout sentinel)
        and ends its stretch like an episode end; absent steps are skipped.
        ``on_step(state, rewards, log)`` is called after every environment step.
        """
        l = self.cfg.l if l is None else l
        n = self.n
        mem = self.sensors.memory
        cols = [{"s": [], "a": [], "p": [], "r": [], "y": [], "d": []} for _ in range(n)]
        rewards = np.zeros((n, l))
        timed_out = np.zeros((n, l), dtype=bool)
        apples = np.zeros(l)
        terminations = 0
        for t in range(l):
            active = np.array([a.active for a in self.env.agents])
            idx = np.flatnonzero(active)
            actions = np.zeros(n, dtype=np.int64)
            s_hat = np.concatenate([self.x[idx], self.h[idx]], axis=1)
            if idx.size:
                self.h[idx] = mem.advance(self.h[idx], self.x[idx])
            for k, i in enumerate(idx):
                agent = self.agents[i]
                out = K.policy_forward(agent.theta, s_hat[k])
                a = K.sample_action(out.p, agent.act_rng)
                actions[i] = a
                c = cols[i]
                c["s"].append(s_hat[k])
                c["a"].append(a)
                c["p"].append(out.p)
            _, r, ev = commons.step(self.env, actions)
            if on_step is not None:
                on_step(self.env, r, ev)
            self._refresh_codes()
            rewards[:, t] = r
            timed_out[:, t] = self.env.timeouts() > 0
            apples[t] = ev.apples_present
            if ev.terminated:
                terminations += 1
                self.h[:] = 0.0
            for i in idx:
                c = cols[i]
                c["r"].append(r[i])
                c["y"].append(self.y[i])
                c["d"].append(bool(ev.terminated or timed_out[i, t]))
        trajs = []
        for i, c in enumerate(cols):
            boot = np.concatenate([self.x[i], self.h[i]])
            if not c["s"]:
                trajs.append(None)
                continue
            trajs.append(K.Trajectory(np.array(c["s"]), np.array(c["a"]), np.array(c["p"]), np.array(c["r"]),
                                      np.array(c["y"]), np.array(c["d"]), boot))
        return trajs, Window(rewards, timed_out, apples, terminations)

    # -- learning ------------------------------------------------------

    def train_agent(self, i: int, traj: K.Trajectory, flags: dict) -> AgentUpdate:
        """All learning for agent ``i`` on its own buffer; touches only agent ``i``'s state."""
        agent = self.agents[i]
        cfg = self.cfg
        upd = AgentUpdate(dict(flags))
        if traj is None or len(traj) == 0:
            return upd
        critic = agent.critic
        if flags["train_Y"]:
            hist = C.train_predictor(critic.predictor, traj.states, traj.actions, traj.y_next, agent.train_rng,
                                     cfg.y_epochs, cfg.y_batch_size, cfg.y_lr)
            upd.predictor_loss = hist[-1] if hist else float("nan")
        batch = critic.batch_for(traj.probs, traj.states, traj.y_next)
        if flags["train_F"]:
            upd.mi = C.train_statistic_network(critic.statistic, batch, agent.train_rng,
                                               cfg.f_epochs, cfg.f_batch_size, cfg.f_lr)
        else:
            upd.mi = C.mi_value(critic.statistic, batch)
        if flags["train_C"]:
            upd.controller = K.update_controller(agent.theta, traj, critic if self.mi_path else None, self.ppo,
                                                 agent.train_rng, self.optimizers[i])
        return upd

    def iterate(self) -> IterationRecord:
        """One pass of the loop body: collect, train on schedule, record the indices."""
        cfg = self.cfg
        flags = schedule_flags(self.t_total, cfg.n_y, cfg.n_f, cfg.n_c)
        trajs, window = self.collect()
        updates = [self.train_agent(i, trajs[i], flags) for i in range(self.n)]
        policies = [tr.probs if tr is not None else np.zeros((0, commons.N_ACTIONS)) for tr in trajs]
        extra = {
            "terminations": window.terminations,
            "train_Y": int(flags["train_Y"]),
            "train_F": int(flags["train_F"]),
            "train_C": int(flags["train_C"]),
            "Y_mse": _nanmean([u.predictor_loss for u in updates]),
            "clip_fraction": _nanmean([u.controller.clip_fraction if u.controller else float("nan") for u in updates]),
        }
        rec = IterationRecord.from_window(self.iteration, self.t_total, window.G, window.timed_out,
                                          window.apple_counts, policies, [u.mi for u in updates], extra)
        self.records.append(rec)
        self.t_total += cfg.l
        self.iteration += 1
        return rec

    def evaluate(self, steps, on_step=None) -> IterationRecord:
        """Act for ``steps`` steps with the current parameters and no learning."""
        trajs, window = self.collect(steps, on_step=on_step)
        mi = []
        for agent, tr in zip(self.agents, trajs):
            if tr is None:
                mi.append(float("nan"))
                continue
            mi.append(C.mi_value(agent.critic.statistic, agent.critic.batch_for(tr.probs, tr.states, tr.y_next)))
        policies = [tr.probs if tr is not None else np.zeros((0, commons.N_ACTIONS)) for tr in trajs]
        return IterationRecord.from_window(self.iteration, self.t_total, window.G, window.timed_out,
                                           window.apple_counts, policies, mi,
                                           {"terminations": window.terminations, "steps": steps})

    def run(self, out_dir=None, iterations=None, progress=None):
        """Iterate until ``floor(t_max / l)`` records exist (or ``iterations`` more)."""
        target = self.cfg.iterations if iterations is None else self.iteration + iterations
        target = min(target, self.cfg.iterations)
        out_dir = Path(out_dir) if out_dir is not None else None
        every = self.cfg.checkpoint_every
        while self.iteration < target:
            try:
                rec = self.iterate()
            except Exception:
                if out_dir is not None:
                    self.save(out_dir / "failed")
                    log.error("run state saved to %s", out_dir / "failed")
                raise
            log.info("iter %d t=%d U=%.2f E=%.3f P=%.3f S=%.0f H=%.3f I=%.4f psi=%.4f", rec.iteration, rec.t_total,
                     rec.U, rec.E, rec.P, rec.S, rec.H_bar, rec.I_shifted, rec.psi)
            if progress is not None:
                progress(rec)
            if out_dir is not None and every and self.iteration % every == 0:
                self.save(out_dir / "checkpoint")
        if out_dir is not None:
            self.save(out_dir / "checkpoint")
            write_run_csv(out_dir / "metrics.csv", self.records)
        return self.records

    # -- checkpoints ---------------------------------------------------

    def save(self, path):
        """Write a resumable snapshot into directory ``path``."""
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        records = [("h", self.h)]
        for agent in self.agents:
            for tag, ps in agent.parameter_sets().items():
                prefix = f"a{agent.id}/{tag}/"
                for name, p in ps:
                    records.append((prefix + name, p.value))
                    records.append((prefix + name + "@m", p.m))
                    records.append((prefix + name + "@v", p.v))
                records.append((prefix + "@step", np.array([float(ps.step_count)])))
        write_records(path / "state.bin", records)
        self.sensors.save(path / "sensors.bin")
        self.cfg.save(path / "config.cfg")
        meta = {
            "version": CHECKPOINT_VERSION,
            "t_total": self.t_total,
            "iteration": self.iteration,
            "mi_path": self.mi_path,
            "env": self.env.to_dict(),
            "rng": {str(a.id): {"act": a.act_rng.bit_generator.state, "train": a.train_rng.bit_generator.state}
                    for a in self.agents},
        }
        (path / "meta.json").write_text(json.dumps(meta))
        write_run_csv(path / "metrics.csv", self.records)
        return path

    @classmethod
    def load(cls, path) -> "Experiment":
        path = Path(path)
        try:
            meta = json.loads((path / "meta.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable checkpoint metadata ({exc})") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
        cfg = ExperimentConfig.load(path / "config.cfg")
        sensors = Sensors.load(path / "sensors.bin")
        exp = cls(cfg, sensors=sensors, mi_path=meta["mi_path"])
        rec = dict(read_records(path / "state.bin"))
        exp.h[...] = rec["h"]
        for agent in exp.agents:
            for tag, ps in agent.parameter_sets().items():
                prefix = f"a{agent.id}/{tag}/"
                for name, p in ps:
                    try:
                        p.value[...] = rec[prefix + name]
                        p.m[...] = rec[prefix + name + "@m"]
                        p.v[...] = rec[prefix + name + "@v"]
                    except KeyError as exc:
                        raise CheckpointError(f"{path}: missing record {exc}") from exc
                ps.step_count = int(rec[prefix + "@step"][0])
            states = meta["rng"][str(agent.id)]
            agent.act_rng.bit_generator.state = states["act"]
            agent.train_rng.bit_generator.state = states["train"]
        exp.env = commons.GridState.from_dict(meta["env"])
        exp.t_total = int(meta["t_total"])
        exp.iteration = int(meta["iteration"])
        exp._refresh_codes()
        csv_path = path / "metrics.csv"
        exp.records = _records_from_csv(csv_path, cfg.n_agents) if csv_path.exists() else []
        return exp


def _nanmean(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def _records_from_csv(path, n):
    from .metrics import read_run_csv

    cols = read_run_csv(path)
    if "U" not in cols:
        return []
    out = []
    base = {"iter", "t_total", "U", "E", "P", "S", "psi", "H_bar", "I_raw", "I_shifted"}
    for k in range(len(cols["iter"])):
        G = [cols[f"G_{i}"][k] for i in range(n)]
        I_agents = [cols[f"I_{i}"][k] for i in range(n)]
        extra = {c: cols[c][k] for c in cols
                 if c not in base and not c.startswith("G_") and not c.startswith("I_")}
        out.append(IterationRecord(int(cols["iter"][k]), int(cols["t_total"][k]), G, cols["U"][k], cols["E"][k],
                                   cols["P"][k], cols["S"][k], cols["psi"][k], cols["H_bar"][k],
                                   cols["I_raw"][k], cols["I_shifted"][k], I_agents, extra))
    return out


def run_training(cfg: ExperimentConfig, out_dir=None, cache_dir=None, sensors=None) -> list[IterationRecord]:
    """Pretrain (or reuse) the sensors and run the whole loop; ``t_max = 0`` stops after pretraining."""
    exp = Experiment(cfg, sensors=sensors, cache_dir=cache_dir)
    return exp.run(out_dir)
