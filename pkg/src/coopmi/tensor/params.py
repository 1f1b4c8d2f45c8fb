"""Named parameter storage, Adam and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import kernels

MAGIC = b"CMIPARAM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""


class Param:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape


class ParameterSet:
    """Ordered collection of trainable tensors with gradient and Adam slots."""

    def __init__(self):
        self._entries: "OrderedDict[str, Param]" = OrderedDict()
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(value)
        self._entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries.items())

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def size(self) -> int:
        return sum(p.value.size for p in self._entries.values())

    def zero_grad(self):
        for p in self._entries.values():
            p.grad.fill(0.0)

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._entries.items()}

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for k, p in self._entries.items():
            q = out.add(k, p.value.copy())
            q.grad[...] = p.grad
            q.m[...] = p.m
            q.v[...] = p.v
        out.step_count = self.step_count
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, p in self._entries.items():
            h.update(k.encode())
            h.update(p.value.tobytes())
        return h.hexdigest()

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([p.grad.ravel() for p in self._entries.values()])

    # -- serialization -------------------------------------------------

    def save(self, path) -> None:
        records = []
        for k, p in self._entries.items():
            records.append((k, p.value))
            records.append((k + "@m", p.m))
            records.append((k + "@v", p.v))
        records.append(("@step", np.array([float(self.step_count)])))
        write_records(path, records)

    @classmethod
    def load(cls, path) -> "ParameterSet":
        records = read_records(path)
        out = cls()
        extra = {}
        for name, arr in records:
            if name == "@step":
                out.step_count = int(arr[0])
            elif "@" in name:
                extra[name] = arr
            else:
                out.add(name, arr)
        for name, p in out:
            if name + "@m" in extra:
                p.m[...] = extra[name + "@m"]
                p.v[...] = extra[name + "@v"]
        return out

    def load_values_from(self, other: "ParameterSet") -> None:
        for k, p in self._entries.items():
            if k not in other or other[k].shape != p.shape:
                raise CheckpointError(f"parameter {k!r} missing or mis-shaped in source")
            p.value[...] = other[k].value
            p.m[...] = other[k].m
            p.v[...] = other[k].v
        self.step_count = other.step_count


def write_records(path, records) -> None:
    """Write ``(name, array)`` records as little-endian float64 blobs."""
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    for name, arr in records:
        arr = np.asarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_records(path) -> list[tuple[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        out.append((name, arr))
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after {count} records")
    return out


class Adam:
    """Adam with bias correction. Hyperparameters are shared, moments live on each Param."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, params: ParameterSet, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in params:
            if not kernels.all_finite(p.grad.reshape(-1)):
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
        params.step_count += 1
        t = params.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for _, p in params:
            kernels.adam_update(p.value.reshape(-1), p.m.reshape(-1), p.v.reshape(-1), p.grad.reshape(-1),
                                self.beta1, self.beta2, c1, c2, lr, self.eps)


def adam_step(params: ParameterSet, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8) -> ParameterSet:
    Adam(learning_rate, beta1, beta2, eps).step(params)
    return params
