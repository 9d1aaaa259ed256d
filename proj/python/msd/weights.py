"""MSDW weight files: writer, reader and a reference forward pass in numpy."""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MSDW"
VERSION = 1
SIGMA_DATA = 0.5


@dataclass
class Embedding:
    fourier_features: int = 16
    num_classes: int = 0
    skip: int = 1
    activation: int = 0  # 0: SiLU, 1: ReLU


@dataclass
class Mlp:
    weights: list  # float32 arrays, (out_dim, in_dim)
    biases: list  # float32 arrays, (out_dim,)
    embedding: Embedding = field(default_factory=Embedding)

    @property
    def input_dim(self):
        return 2 + self.embedding.fourier_features + self.embedding.num_classes

    def validate(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix")
        if self.embedding.fourier_features % 2:
            raise ValueError("fourier_features must be even")
        prev = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != prev or b.shape != (w.shape[0],):
                raise ValueError(f"layer shape mismatch: {w.shape}, {b.shape}, input {prev}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite parameter")
            prev = w.shape[0]
        if prev != 2:
            raise ValueError("last layer must output 2 values")


def random_mlp(hidden=(32, 32), num_classes=0, skip=1, activation=0, fourier_features=16, seed=0):
    rng = np.random.default_rng(seed)
    emb = Embedding(fourier_features, num_classes, skip, activation)
    dims = [2 + fourier_features + num_classes, *hidden, 2]
    ws = [(rng.standard_normal((o, i)) / np.sqrt(i)).astype(np.float32) for i, o in zip(dims[:-1], dims[1:])]
    bs = [(0.1 * rng.standard_normal(o)).astype(np.float32) for o in dims[1:]]
    return Mlp(ws, bs, emb)


def encode(m):
    m.validate()
    e = m.embedding
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(m.weights))
    for w in m.weights:
        out += struct.pack("<II", w.shape[1], w.shape[0])
    out += struct.pack("<IIII", e.fourier_features, e.num_classes, e.skip, e.activation)
    for w in m.weights:
        out += np.ascontiguousarray(w, dtype="<f4").tobytes()
    for b in m.biases:
        out += np.ascontiguousarray(b, dtype="<f4").tobytes()
    return bytes(out)


def decode(data):
    if data[:4] != MAGIC:
        raise ValueError("bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    off = 12
    dims = []
    for _ in range(count):
        dims.append(struct.unpack_from("<II", data, off))
        off += 8
    emb = Embedding(*struct.unpack_from("<IIII", data, off))
    off += 16
    ws, bs = [], []
    for i, o in dims:
        ws.append(np.frombuffer(data, "<f4", i * o, off).reshape(o, i).astype(np.float32))
        off += 4 * i * o
    for _, o in dims:
        bs.append(np.frombuffer(data, "<f4", o, off).astype(np.float32))
        off += 4 * o
    if off != len(data):
        raise ValueError("trailing or missing payload bytes")
    m = Mlp(ws, bs, emb)
    m.validate()
    return m


def sidecar(m):
    return {
        "magic": MAGIC.decode(),
        "version": VERSION,
        "layers": [{"in_dim": int(w.shape[1]), "out_dim": int(w.shape[0])} for w in m.weights],
        "embedding": vars(m.embedding).copy(),
    }


def save(path, m):
    path = Path(path)
    path.write_bytes(encode(m))
    Path(str(path) + ".json").write_text(json.dumps(sidecar(m), indent=2))


def load(path):
    return decode(Path(path).read_bytes())


def forward(m, z, sigma, cls=None):
    """Denoised points for z of shape (n, 2) at noise level sigma, in float64."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    e = m.embedding
    denom = np.sqrt(sigma * sigma + SIGMA_DATA * SIGMA_DATA)
    t = np.log(sigma) / 4.0
    j = np.arange(1, e.fourier_features // 2 + 1)
    time = np.concatenate([np.cos(np.pi * j * t), np.sin(np.pi * j * t)])
    onehot = np.zeros(e.num_classes)
    if cls is not None:
        onehot[cls] = 1.0
    h = np.hstack([z / denom, np.tile(np.concatenate([time, onehot]), (len(z), 1))])
    for k, (w, b) in enumerate(zip(m.weights, m.biases)):
        h = h @ w.astype(np.float64).T + b.astype(np.float64)
        if k + 1 < len(m.weights):
            h = h / (1.0 + np.exp(-h)) if e.activation == 0 else np.maximum(h, 0.0)
    if not e.skip:
        return h
    c_skip = SIGMA_DATA**2 / (sigma * sigma + SIGMA_DATA**2)
    c_out = sigma * SIGMA_DATA / denom
    return c_skip * z + c_out * h
