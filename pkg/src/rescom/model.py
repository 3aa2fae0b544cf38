"""A small Siamese MLP with hand-written backward pass, SGD with momentum,
learning-rate schedules and a flat binary checkpoint format.

Parameters are stored in ``dtype`` (float32 by default) but every forward and
backward computation runs in float64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import DegenerateEmbeddingError

MAGIC = b"RSCM"
FORMAT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward was called with activations from before the last parameter update."""


class CheckpointError(ValueError):
    pass


def _init_dense(rng, fan_in, fan_out, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=fan_out).astype(dtype)
    return w, b


class _MLP:
    """Chain of affine maps; every layer but (optionally) the last is followed by tanh."""

    def __init__(self, prefix, params, n_layers, activate_last):
        self.prefix = prefix
        self.params = params
        self.n_layers = n_layers
        self.activate_last = activate_last

    def _wb(self, i):
        p = self.params
        return (p[f"{self.prefix}.{i}.weight"].astype(np.float64),
                p[f"{self.prefix}.{i}.bias"].astype(np.float64))

    def forward(self, x):
        acts = [x]
        h = x
        for i in range(self.n_layers):
            w, b = self._wb(i)
            h = h @ w + b
            if i < self.n_layers - 1 or self.activate_last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out, grads):
        g = grad_out
        for i in reversed(range(self.n_layers)):
            out = acts[i + 1]
            if i < self.n_layers - 1 or self.activate_last:
                g = g * (1.0 - out * out)
            w, _ = self._wb(i)
            name = f"{self.prefix}.{i}"
            grads[f"{name}.weight"] = grads.get(f"{name}.weight", 0.0) + acts[i].T @ g
            grads[f"{name}.bias"] = grads.get(f"{name}.bias", 0.0) + g.sum(axis=0)
            g = g @ w.T
        return g


class EncoderNet(_MLP):
    def __init__(self, params, n_layers):
        super().__init__("encoder", params, n_layers, activate_last=True)


class ProjectionHead(_MLP):
    """Two affine maps (tanh between) followed by L2 normalization."""

    def __init__(self, params):
        super().__init__("head", params, 2, activate_last=False)

    def forward(self, f):
        pre, acts = super().forward(f)
        norms = np.linalg.norm(pre, axis=1, keepdims=True)
        if np.any(norms == 0.0) or not np.all(np.isfinite(norms)):
            raise DegenerateEmbeddingError("projection output has zero norm")
        z = pre / norms
        return z, (acts, z, norms)

    def backward(self, cache, grad_z, grads):
        acts, z, norms = cache
        # exact Jacobian of p / |p|: (I - z z^T) / |p|
        grad_pre = (grad_z - z * np.sum(z * grad_z, axis=1, keepdims=True)) / norms
        return super().backward(acts, grad_pre, grads)


class LinearClassifier(_MLP):
    def __init__(self, params):
        super().__init__("fc", params, 1, activate_last=False)


@dataclass
class SiameseOutput:
    f1: np.ndarray
    f2: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


@dataclass
class _Cache:
    version: int
    enc1: list
    enc2: list
    head1: tuple
    f1: np.ndarray
    f2: np.ndarray


class SiameseNetwork:
    """Shared encoder feeding a linear classifier and a projection head.

    Parameters
    ----------
    input_dim, n_classes : int
    hidden : tuple of int
        Encoder widths; the last one is the feature dimension ``D``.
    proj_hidden, proj_dim : int
        Projection head widths ``D -> proj_hidden -> proj_dim``.
    rng : numpy Generator used for initialization.
    """

    def __init__(self, input_dim, n_classes, hidden=(64, 64), proj_hidden=64, proj_dim=32,
                 rng=None, dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.dtype = np.dtype(dtype)
        self.params = {}
        dims = [int(input_dim), *map(int, hidden)]
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            self.params[f"encoder.{i}.weight"], self.params[f"encoder.{i}.bias"] = _init_dense(rng, a, b, dtype)
        feat = dims[-1]
        for i, (a, b) in enumerate([(feat, proj_hidden), (proj_hidden, proj_dim)]):
            self.params[f"head.{i}.weight"], self.params[f"head.{i}.bias"] = _init_dense(rng, a, b, dtype)
        self.params["fc.0.weight"], self.params["fc.0.bias"] = _init_dense(rng, feat, n_classes, dtype)
        self._build()
        self.version = 0

    def _build(self):
        n_enc = sum(1 for k in self.params if k.startswith("encoder.") and k.endswith(".weight"))
        self.encoder = EncoderNet(self.params, n_enc)
        self.head = ProjectionHead(self.params)
        self.fc = LinearClassifier(self.params)

    @property
    def input_dim(self):
        return self.params["encoder.0.weight"].shape[0]

    @property
    def n_classes(self):
        return self.params["fc.0.weight"].shape[1]

    @property
    def feature_dim(self):
        return self.params["fc.0.weight"].shape[0]

    @property
    def embed_dim(self):
        return self.params["head.1.weight"].shape[1]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (n, {self.input_dim}), got {x.shape}")
        return x

    def features(self, x):
        return self.encoder.forward(self._check_input(x))[0]

    def logits(self, x):
        """Inference path: encoder and classifier only; the projection head is unused."""
        return self.fc.forward(self.features(x))[0]

    def embed(self, x):
        return self.head.forward(self.features(x))[0]

    def forward_siamese(self, x1, x2):
        x1, x2 = self._check_input(x1), self._check_input(x2)
        if x1.shape != x2.shape:
            raise ValueError("the two views must have the same shape")
        f1, enc1 = self.encoder.forward(x1)
        f2, enc2 = self.encoder.forward(x2)
        z1, head1 = self.head.forward(f1)
        z2, _ = self.head.forward(f2)
        s1 = self.fc.forward(f1)[0]
        s2 = self.fc.forward(f2)[0]
        out = SiameseOutput(f1, f2, z1, z2, s1, s2)
        return out, _Cache(self.version, enc1, enc2, head1, f1, f2)

    def backward(self, cache, grad_z1, grad_s1, grad_s2):
        """Parameter gradients from gradients at ``z1``, ``s1`` and ``s2``.

        ``z2`` feeds only the key memory, so no gradient flows through it.
        """
        if cache.version != self.version:
            raise StaleCacheError("forward cache predates the latest parameter update")
        grads = {}
        wfc = self.params["fc.0.weight"].astype(np.float64)
        grads["fc.0.weight"] = cache.f1.T @ grad_s1 + cache.f2.T @ grad_s2
        grads["fc.0.bias"] = grad_s1.sum(axis=0) + grad_s2.sum(axis=0)
        df1 = grad_s1 @ wfc.T
        if grad_z1 is not None:
            df1 = df1 + self.head.backward(cache.head1, grad_z1, grads)
        else:
            for i in range(2):
                grads.setdefault(f"head.{i}.weight", np.zeros(self.params[f"head.{i}.weight"].shape))
                grads.setdefault(f"head.{i}.bias", np.zeros(self.params[f"head.{i}.bias"].shape))
        df2 = grad_s2 @ wfc.T
        self.encoder.backward(cache.enc1, df1, grads)
        self.encoder.backward(cache.enc2, df2, grads)
        return grads

    def state_dict(self):
        return {k: v.copy() for k, v in self.params.items()}

    @classmethod
    def from_state_dict(cls, tensors, dtype=np.float32):
        net = cls.__new__(cls)
        net.dtype = np.dtype(dtype)
        net.params = {k: np.asarray(v, dtype=dtype).copy() for k, v in tensors.items()
                      if not k.startswith("meta.")}
        for need in ("encoder.0.weight", "head.0.weight", "head.1.weight", "fc.0.weight"):
            if need not in net.params:
                raise CheckpointError(f"checkpoint is missing tensor {need!r}")
        net._build()
        net.version = 0
        return net


class SGD:
    """SGD with heavy-ball momentum: ``v <- mu v + g``, ``p <- p - lr v``."""

    def __init__(self, params, momentum=0.9, lr=0.1):
        self.params = params
        self.momentum = float(momentum)
        self.lr = float(lr)
        self.velocity = {k: np.zeros(v.shape) for k, v in params.items()}

    def step(self, grads):
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            p[...] = (p.astype(np.float64) - self.lr * v).astype(p.dtype)


def backward_and_step(net, cache, grad_z1, grad_s1, grad_s2, opt):
    """One optimizer step from output gradients; invalidates outstanding caches."""
    grads = net.backward(cache, grad_z1, grad_s1, grad_s2)
    opt.step(grads)
    net.version += 1
    return grads


def lr_schedule(kind, base_lr, epoch, total_epochs, milestones=(), decay=0.1):
    """Learning rate at ``epoch`` for a multistep or cosine schedule."""
    if kind == "multistep":
        passed = sum(1 for m in milestones if epoch >= m)
        return base_lr * decay ** passed
    if kind == "cosine":
        return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
    if kind == "constant":
        return base_lr
    raise ValueError(f"unknown schedule {kind!r}")


# -- checkpoint ---------------------------------------------------------------


def save_checkpoint(path, tensors):
    """Write named tensors as little-endian float32 after an ``RSCM`` header."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an RSCM checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    tensors = {}
    try:
        while pos < len(data):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    return tensors
