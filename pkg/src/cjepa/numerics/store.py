"""Named parameter collection with gradient accumulators and flat-file I/O."""

from __future__ import annotations

import struct

import numpy as np

from .tape import Tensor, init_uniform

MAGIC = b"CJPS"
VERSION = 1


class ParameterStore:
    """Map from name to a trainable Tensor, plus per-parameter optimizer state.

    Not safe for concurrent mutation. Gradient accumulators live on the
    tensors themselves (``Tensor.grad``); ``zero_grad`` resets them.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self.adam_t = 0

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def add_uniform(self, name: str, rng, shape, fan_in=None) -> Tensor:
        return self.add(name, init_uniform(rng, shape, fan_in))

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def __len__(self):
        return len(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads(self):
        return {n: t.grad for n, t in self._params.items()}

    def copy_values(self):
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_values(self, values):
        for n, v in values.items():
            self._params[n].data = np.array(v, dtype=np.float64)

    # -- flat binary format --------------------------------------------------
    # header: magic, version (u32), count (u32)
    # per parameter: name length (u32), name bytes, rank (u32),
    #                shape (u64 each), raw little-endian float64 values

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(self._params)))
            for name in sorted(self._params):
                data = self._params[name].data
                nb = name.encode("utf-8")
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<I", data.ndim))
                for s in data.shape:
                    fh.write(struct.pack("<Q", s))
                fh.write(data.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path):
        store = cls()
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise ValueError(f"{path}: not a parameter store file")
            version, count = struct.unpack("<II", fh.read(8))
            if version != VERSION:
                raise ValueError(f"{path}: unsupported version {version}")
            for _ in range(count):
                (nlen,) = struct.unpack("<I", fh.read(4))
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                shape = tuple(
                    struct.unpack("<Q", fh.read(8))[0] for _ in range(rank))
                n = int(np.prod(shape)) if shape else 1
                values = np.frombuffer(
                    fh.read(8 * n), dtype="<f8").reshape(shape)
                store.add(name, values.copy())
        return store


def adam_step(store: ParameterStore, lr: float, betas=(0.9, 0.999),
              eps: float = 1e-8):
    """One Adam update with bias correction; moments persist in the store.

    Refuses the whole step if any populated gradient is non-finite, naming
    the offending parameter. Parameters without a gradient are skipped
    (their moments still decay).
    """
    for name, t in store.items():
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise FloatingPointError(
                f"non-finite gradient for parameter {name!r}; step refused")
    b1, b2 = betas
    store.adam_t += 1
    t_step = store.adam_t
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = store._adam_m.get(name)
        v = store._adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        store._adam_m[name] = m
        store._adam_v[name] = v
        mhat = m / (1.0 - b1 ** t_step)
        vhat = v / (1.0 - b2 ** t_step)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
