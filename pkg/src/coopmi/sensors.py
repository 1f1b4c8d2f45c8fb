"""Offline perception: observation autoencoder, other-agent autoencoder and echo-state memory."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import commons
from .tensor import DivergenceError, Network, ParameterSet, read_records, write_records
from .tensor import functional as F
from .tensor.layers import conv, dense, reshape, tconv
from .tensor.params import Adam

log = logging.getLogger(__name__)

X_DIM = 32
Y_DIM = 16
H_DIM = 512
S_DIM = X_DIM + H_DIM

FRAME_MAGIC = b"CMIFRAME"
FRAME_VERSION = 1


# -- architectures ------------------------------------------------------

def build_encoder_x(rng):
    return Network([
        conv("ex/conv", (9, 9), commons.N_CHANNELS, 16, "relu"),
        reshape("ex/flat", (7, 7, 16), (784,)),
        dense("ex/fc1", 784, 32, "relu"),
        dense("ex/fc2", 32, X_DIM),
    ], rng=rng)


def build_decoder_x(rng):
    return Network([
        dense("dx/fc1", X_DIM, 32, "relu"),
        dense("dx/fc2", 32, 784, "relu"),
        reshape("dx/unflat", (784,), (7, 7, 16)),
        tconv("dx/tconv", (7, 7), 16, commons.N_CHANNELS, "softmax"),
    ], rng=rng)


def build_encoder_y(rng):
    return Network([
        dense("ey/fc1", X_DIM, 512, "relu"),
        dense("ey/fc2", 512, 128, "relu"),
        dense("ey/fc3", 128, Y_DIM),
    ], rng=rng)


def build_decoder_y(rng, channels=5):
    if channels < 2:
        raise ValueError("the other-agent decoder needs at least the empty and other-agent classes")
    return Network([
        dense("dy/fc1", Y_DIM, 128, "relu"),
        dense("dy/fc2", 128, 784, "relu"),
        reshape("dy/unflat", (784,), (7, 7, 16)),
        tconv("dy/tconv", (7, 7), 16, channels, "softmax"),
    ], rng=rng)


def masked_labels(indices):
    """Targets for the other-agent decoder: 1 where another agent is, 0 elsewhere."""
    return (np.asarray(indices) == commons.OTHER).astype(np.uint8)


# -- pretraining data ---------------------------------------------------

@dataclass
class PretrainDataset:
    """Frames stored as (N, 9, 9) class indices; one-hot expansion happens per batch."""

    frames: np.ndarray
    n_train: int

    @property
    def train(self):
        return self.frames[: self.n_train]

    @property
    def validation(self):
        return self.frames[self.n_train:]

    def __len__(self):
        return len(self.frames)

    def save(self, path):
        f = np.ascontiguousarray(self.frames, dtype=np.uint8)
        header = FRAME_MAGIC + struct.pack("<IQQIII", FRAME_VERSION, len(f), self.n_train,
                                           f.shape[1], f.shape[2], commons.N_CHANNELS)
        Path(path).write_bytes(header + f.tobytes())

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if buf[:8] != FRAME_MAGIC:
            raise ValueError(f"{path}: not a frame dataset")
        size = struct.calcsize("<IQQIII")
        version, count, n_train, h, w, ch = struct.unpack("<IQQIII", buf[8:8 + size])
        if version != FRAME_VERSION or ch != commons.N_CHANNELS:
            raise ValueError(f"{path}: unsupported dataset (version {version}, {ch} channels)")
        body = buf[8 + size:]
        if len(body) != count * h * w:
            raise ValueError(f"{path}: truncated dataset")
        frames = np.frombuffer(body, dtype=np.uint8).reshape(count, h, w).copy()
        return cls(frames, int(n_train))


def sample_pretrain_dataset(map_spec, steps: int, n: int, seed, validation_fraction=0.21875):
    """Run ``n`` uniform-random agents for ``steps`` ticks and keep every agent's view.

    The default validation fraction is 2.8e6 / 1.28e7.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_seq, act_seq = ss.spawn(2)
    state = commons.reset(map_spec, n, rng=np.random.default_rng(env_seq))
    act_rng = np.random.default_rng(act_seq)
    frames = np.empty((steps * n, commons.VIEW, commons.VIEW), dtype=np.uint8)
    for t in range(steps):
        frames[t * n:(t + 1) * n] = commons.observation_indices(state)
        commons.step(state, act_rng.integers(0, commons.N_ACTIONS, size=n))
    n_val = int(round(len(frames) * validation_fraction))
    return PretrainDataset(frames, len(frames) - n_val)


# -- autoencoder training ----------------------------------------------

def pixel_cross_entropy(logits, labels):
    """Mean per-pixel categorical cross-entropy and its gradient w.r.t. ``logits``."""
    logp = F.log_softmax(logits, axis=-1)
    k = logits.shape[-1]
    onehot = np.eye(k)[labels]
    count = labels.size
    loss = -float(np.sum(onehot * logp)) / count
    grad = (np.exp(logp) - onehot) / count
    return loss, grad


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_accuracy: float

    @property
    def val_error(self):
        return 1.0 - self.val_accuracy


def _fit(encoder, decoder, inputs_of, labels_of, n_train, n_total, rng, epochs, batch_size, lr,
         tag, train_encoder=True):
    opt = Adam(lr)
    history = []
    order = np.arange(n_train)
    for epoch in range(epochs):
        rng.shuffle(order)
        losses = []
        for lo in range(0, n_train, batch_size):
            idx = np.sort(order[lo:lo + batch_size])
            xb = inputs_of(idx)
            code = encoder.forward(xb, record=train_encoder)
            logits = decoder.forward(code, final_activation=False)
            loss, grad = pixel_cross_entropy(logits, labels_of(idx))
            if not np.isfinite(loss):
                raise DivergenceError(f"{tag}: non-finite reconstruction loss at epoch {epoch}")
            dcode = decoder.backward(grad)
            opt.step(decoder.params)
            if train_encoder:
                encoder.backward(dcode, input_grad=False)
                opt.step(encoder.params)
            losses.append(loss)
        acc = _accuracy(encoder, decoder, inputs_of, labels_of, np.arange(n_train, n_total))
        history.append(EpochStats(epoch + 1, float(np.mean(losses)), acc))
        log.info("%s epoch %d loss %.5f val acc %.5f", tag, epoch + 1, history[-1].train_loss, acc)
    return history


def _accuracy(encoder, decoder, inputs_of, labels_of, idx, chunk=2048):
    if len(idx) == 0:
        return float("nan")
    hits = 0
    total = 0
    for lo in range(0, len(idx), chunk):
        part = idx[lo:lo + chunk]
        logits = decoder.forward(encoder.forward(inputs_of(part), record=False), final_activation=False,
                                 record=False)
        lab = labels_of(part)
        hits += int(np.sum(np.argmax(logits, axis=-1) == lab))
        total += lab.size
    return hits / total


def train_autoencoder_x(dataset: PretrainDataset, rng, epochs=10, batch_size=128, lr=1e-3,
                        encoder=None, decoder=None):
    """Fit E_x / D_x as a per-pixel classifier. Returns ``(encoder, decoder, history)``."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    encoder = build_encoder_x(rng) if encoder is None else encoder
    decoder = build_decoder_x(rng) if decoder is None else decoder
    frames = dataset.frames
    history = _fit(encoder, decoder, lambda i: commons.one_hot(frames[i]), lambda i: frames[i],
                   dataset.n_train, len(frames), rng, epochs, batch_size, lr, "E_x")
    return encoder, decoder, history


def encode_frames(encoder_x, frames, chunk=4096):
    out = np.empty((len(frames), X_DIM))
    for lo in range(0, len(frames), chunk):
        out[lo:lo + chunk] = encoder_x.forward(commons.one_hot(frames[lo:lo + chunk]), record=False)
    return out


def train_autoencoder_y(dataset: PretrainDataset, encoder_x, rng, epochs=10, batch_size=128, lr=1e-3,
                        channels=5, encoder=None, decoder=None):
    """Fit E_y / D_y on frozen E_x codes to rebuild the other-agents-only frame."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    encoder = build_encoder_y(rng) if encoder is None else encoder
    decoder = build_decoder_y(rng, channels) if decoder is None else decoder
    codes = encode_frames(encoder_x, dataset.frames)
    labels = masked_labels(dataset.frames)
    history = _fit(encoder, decoder, lambda i: codes[i], lambda i: labels[i],
                   dataset.n_train, len(codes), rng, epochs, batch_size, lr, "E_y")
    return encoder, decoder, history


def standardize_code(encoder, decoder, codes, eps=1e-8):
    """Rescale a trained autoencoder so its code has zero mean and unit variance per
    dimension over ``codes`` (the encoder's outputs on the training frames).

    The affine map is folded into the encoder's last dense layer and undone in the
    decoder's first one, so reconstructions are unchanged up to rounding. Without it
    the linear code can sit an order of magnitude above unit scale, which saturates the
    reservoir and makes a freshly initialised policy nearly deterministic.
    Returns ``(mean, std)``.
    """
    mu = codes.mean(axis=0)
    sd = codes.std(axis=0)
    sd = np.where(sd > eps, sd, 1.0)
    enc_w, enc_b = encoder.params[encoder.specs[-1].name + "/W"], encoder.params[encoder.specs[-1].name + "/b"]
    dec_w, dec_b = decoder.params[decoder.specs[0].name + "/W"], decoder.params[decoder.specs[0].name + "/b"]
    dec_b.value[...] = dec_b.value + mu @ dec_w.value
    dec_w.value[...] = dec_w.value * sd[:, None]
    enc_w.value[...] = enc_w.value / sd
    enc_b.value[...] = (enc_b.value - mu) / sd
    return mu, sd


# -- echo-state memory --------------------------------------------------

@dataclass
class EchoStateMemory:
    """Fixed random reservoir. ``h`` is the state of a single owner; batched use goes
    through :meth:`advance`."""

    w_in: np.ndarray
    w_rec: np.ndarray
    h: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.h is None:
            self.h = np.zeros(self.w_rec.shape[0])

    def advance(self, h, x):
        return np.tanh(h @ self.w_rec.T + x @ self.w_in.T)

    def reset(self):
        self.h = np.zeros(self.w_rec.shape[0])


def spectral_radius(w) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(w))))


def init_memory(seed, spectral_radius_target=0.95, size=H_DIM, in_dim=X_DIM) -> EchoStateMemory:
    if not 0.0 < spectral_radius_target < 1.0:
        raise ValueError("spectral radius target must lie in (0, 1)")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = rng.normal(size=(size, size)) / np.sqrt(size)
    w *= spectral_radius_target / spectral_radius(w)
    w_in = rng.uniform(-0.1, 0.1, size=(size, in_dim))
    return EchoStateMemory(w_in, w)


def memory_step(mem: EchoStateMemory, x) -> np.ndarray:
    mem.h = mem.advance(mem.h, np.asarray(x, dtype=np.float64))
    return mem.h


# -- assembled sensors --------------------------------------------------

@dataclass
class SensorCodes:
    x: np.ndarray
    y: np.ndarray
    h: np.ndarray
    s_hat: np.ndarray


@dataclass
class Sensors:
    encoder_x: Network
    decoder_x: Network
    encoder_y: Network
    decoder_y: Network
    memory: EchoStateMemory

    @classmethod
    def untrained(cls, seed=0, channels=5, spectral_radius_target=0.95) -> "Sensors":
        """Randomly initialised sensors; useful for plumbing tests and quick smoke runs."""
        rng = np.random.default_rng(seed)
        nets = [build_encoder_x(rng), build_decoder_x(rng), build_encoder_y(rng), build_decoder_y(rng, channels)]
        return cls(*nets, init_memory(rng, spectral_radius_target))

    def encode(self, indices):
        """Class-index frames (B, 9, 9) -> (x, y) codes."""
        x = self.encoder_x.forward(commons.one_hot(indices), record=False)
        y = self.encoder_y.forward(x, record=False)
        return x, y

    def perceive(self, mem: EchoStateMemory, o) -> SensorCodes:
        """Codes for one one-hot observation; ``s_hat`` uses the memory state before the update."""
        o = np.asarray(o)
        idx = np.argmax(o, axis=-1) if o.ndim == 3 else o
        x, y = self.encode(idx[None])
        h = mem.h.copy()
        s_hat = np.concatenate([x[0], h])
        memory_step(mem, x[0])
        return SensorCodes(x[0], y[0], h, s_hat)

    def parameter_sets(self):
        return {"ex": self.encoder_x.params, "dx": self.decoder_x.params,
                "ey": self.encoder_y.params, "dy": self.decoder_y.params}

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for ps in self.parameter_sets().values():
            h.update(ps.checksum().encode())
        h.update(self.memory.w_rec.tobytes())
        h.update(self.memory.w_in.tobytes())
        return h.hexdigest()

    def save(self, path):
        records = []
        for _, ps in self.parameter_sets().items():
            records.extend((name, p.value) for name, p in ps)
        records.append(("mem/w_in", self.memory.w_in))
        records.append(("mem/w_rec", self.memory.w_rec))
        records.append(("dy/channels", np.array([self.decoder_y.out_dim[-1]], dtype=float)))
        write_records(path, records)

    @classmethod
    def load(cls, path) -> "Sensors":
        rec = dict(read_records(path))
        channels = int(rec["dy/channels"][0])
        rng = np.random.default_rng(0)
        nets = [build_encoder_x(rng), build_decoder_x(rng), build_encoder_y(rng),
                build_decoder_y(rng, channels)]
        for net in nets:
            for name, p in net.params:
                p.value[...] = rec[name]
        return cls(*nets, EchoStateMemory(rec["mem/w_in"], rec["mem/w_rec"]))


def pretrain_sensors(map_spec, steps, n_agents, seed, epochs=10, batch_size=128, lr=1e-3,
                     spectral_radius_target=0.95, dy_channels=5, validation_fraction=0.21875,
                     dataset=None):
    """Dataset sampling, both autoencoders and the reservoir. Returns ``(sensors, report)``."""
    ss = np.random.SeedSequence(seed)
    data_seq, ax_seq, ay_seq, mem_seq = ss.spawn(4)
    if dataset is None:
        dataset = sample_pretrain_dataset(map_spec, steps, n_agents, data_seq, validation_fraction)
    ex, dx, hist_x = train_autoencoder_x(dataset, np.random.default_rng(ax_seq), epochs, batch_size, lr)
    standardize_code(ex, dx, encode_frames(ex, dataset.frames[:dataset.n_train]))
    ey, dy, hist_y = train_autoencoder_y(dataset, ex, np.random.default_rng(ay_seq), epochs, batch_size, lr,
                                         channels=dy_channels)
    codes = encode_frames(ex, dataset.frames[:dataset.n_train])
    standardize_code(ey, dy, ey.forward(codes, record=False))
    mem = init_memory(np.random.default_rng(mem_seq), spectral_radius_target)
    report = {"frames": len(dataset), "history_x": hist_x, "history_y": hist_y}
    return Sensors(ex, dx, ey, dy, mem), report


def frozen_parameter_set(sensors: Sensors) -> ParameterSet:
    """All sensor weights in one set, for checksum comparisons."""
    out = ParameterSet()
    for _, ps in sensors.parameter_sets().items():
        for name, p in ps:
            out.add(name, p.value)
    return out
