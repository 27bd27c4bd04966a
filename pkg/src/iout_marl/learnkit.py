"""Small feed-forward networks with hand-written gradients.

Networks act on row batches: ``x`` has shape (batch, in) and weights are
stored (in, out). Hidden layers use a smooth rectifier (softplus) by default;
the output layer is affine.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ShapeError(ValueError):
    pass


@dataclass
class MLP:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "softplus"

    @property
    def sizes(self) -> list[int]:
        if not self.weights:
            return []
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype if self.weights else np.dtype(np.float64)

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self) -> "MLP":
        return MLP([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases],
                   self.activation)


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, activation: str = "softplus",
             dtype=np.float64) -> MLP:
    """Uniform(+-1/sqrt(fan_in)) weights and biases. ``sizes=[n]`` is the identity map."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return MLP(weights, biases, activation)


def _act(name: str, z: np.ndarray):
    """Returns activation value and whatever the derivative needs."""
    if name == "softplus":
        e = np.exp(-np.abs(z))
        out = np.maximum(z, 0.0)
        out += np.log1p(e)
        return out, (z, e)
    if name == "relu":
        return np.maximum(z, 0.0), z
    if name == "tanh":
        h = np.tanh(z)
        return h, h
    if name == "identity":
        return z, None
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, saved, g: np.ndarray) -> np.ndarray:
    if name == "softplus":
        z, e = saved
        sig = 1.0 / (1.0 + e)  # sigmoid(|z|)
        np.multiply(sig, e, out=sig, where=z < 0.0)
        return g * sig
    if name == "relu":
        return g * (saved > 0.0)
    if name == "tanh":
        return g * (1.0 - saved * saved)
    return g


@dataclass
class Cache:
    inputs: list[np.ndarray] = field(default_factory=list)
    saved: list = field(default_factory=list)
    squeeze: bool = False


def forward(params: MLP, x, cache: Optional[Cache] = None) -> np.ndarray:
    x = np.asarray(x)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if params.weights and h.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(f"input width {h.shape[1]} != {params.weights[0].shape[0]}")
    if cache is not None:
        cache.squeeze = squeeze
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if cache is not None:
            cache.inputs.append(h)
        z = h @ w + b
        if i < last:
            h, saved = _act(params.activation, z)
            if cache is not None:
                cache.saved.append(saved)
        else:
            h = z
    return h[0] if squeeze else h


def backward(params: MLP, cache: Cache, upstream) -> tuple[MLP, np.ndarray]:
    """Gradients of ``sum(upstream * forward(x))`` w.r.t. parameters and input."""
    g = np.asarray(upstream)
    if cache.squeeze:
        g = g[None, :]
    grads = params.zeros_like()
    n = len(params.weights)
    for i in range(n - 1, -1, -1):
        if g.shape[1] != params.weights[i].shape[1]:
            raise ShapeError("upstream gradient does not match layer output")
        grads.weights[i] = cache.inputs[i].T @ g
        grads.biases[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = _act_grad(params.activation, cache.saved[i - 1], g)
    return grads, (g[0] if cache.squeeze else g)


# --- optimisation ------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    skipped: int = 0


def adam_state(params: MLP, lr: float) -> AdamState:
    arrs = params.arrays()
    return AdamState([np.zeros_like(a) for a in arrs], [np.zeros_like(a) for a in arrs], lr)


def optimizer_step(params: MLP, grads: MLP, state: AdamState) -> tuple[MLP, AdamState]:
    """Bias-corrected Adam step, in place. Non-finite gradients skip the step."""
    garr = grads.arrays()
    if not all(np.all(np.isfinite(g)) for g in garr):
        state.skipped += 1
        logger.warning("non-finite gradient, optimizer step skipped")
        return params, state
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params.arrays(), garr, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state


@dataclass
class ScalarAdam:
    """Adam for a single scalar parameter (e.g. log entropy coefficient)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: float = 0.0
    v: float = 0.0
    t: int = 0

    def step(self, value: float, grad: float) -> float:
        if not math.isfinite(grad):
            return value
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mh = self.m / (1.0 - self.beta1**self.t)
        vh = self.v / (1.0 - self.beta2**self.t)
        return value - self.lr * mh / (math.sqrt(vh) + self.eps)


def sgd_step(params: MLP, grads: MLP, lr: float) -> MLP:
    for p, g in zip(params.arrays(), grads.arrays()):
        p -= lr * g
    return params


def soft_update(target: MLP, online: MLP, tau: float) -> MLP:
    """target <- tau * online + (1 - tau) * target, in place."""
    if target.sizes != online.sizes:
        raise ShapeError(f"cannot blend {target.sizes} into {online.sizes}")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o
    return target


def param_distance(a: MLP, b: MLP) -> float:
    return math.sqrt(sum(float(np.sum((x.astype(float) - y.astype(float)) ** 2))
                         for x, y in zip(a.arrays(), b.arrays())))


# --- squashed Gaussian policy head ----------------------------------------------------


@dataclass
class PolicySample:
    action: np.ndarray  # tanh(u), in (-1, 1)
    log_prob: np.ndarray  # (batch,)
    u: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    eps: np.ndarray
    in_range: np.ndarray  # log-std not clipped
    cache: Cache


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def squash_log_det(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), computed without cancellation."""
    return 2.0 * (math.log(2.0) - u - _softplus(-2.0 * u))


def policy_sample(params: MLP, obs, rng: Optional[np.random.Generator] = None,
                  eps: Optional[np.ndarray] = None, deterministic: bool = False) -> PolicySample:
    """Reparameterised sample: u = mean + std * eps, action = tanh(u)."""
    obs = np.asarray(obs)
    if obs.ndim == 1:
        obs = obs[None, :]
    cache = Cache()
    out = forward(params, obs, cache)
    k = out.shape[1] // 2
    mean, raw_ls = out[:, :k], out[:, k:]
    log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    in_range = (raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)
    if deterministic:
        eps = np.zeros_like(mean)
    elif eps is None:
        eps = rng.standard_normal(mean.shape).astype(mean.dtype)
    std = np.exp(log_std)
    u = mean + std * eps
    log_prob = np.sum(-0.5 * eps * eps - log_std - _HALF_LOG_2PI - squash_log_det(u), axis=1)
    return PolicySample(np.tanh(u), log_prob, u, mean, log_std, eps, in_range, cache)


def gaussian_policy_sample(params: MLP, obs, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Pre-squash action and its log-probability (with tanh correction)."""
    s = policy_sample(params, obs, rng)
    if np.asarray(obs).ndim == 1:
        return s.u[0], s.log_prob[0]
    return s.u, s.log_prob


def policy_backward(params: MLP, sample: PolicySample, d_action: np.ndarray, d_log_prob: np.ndarray) -> MLP:
    """Gradient of ``sum(d_action * action) + sum(d_log_prob * log_prob)``, eps held fixed."""
    a = sample.action
    d_u = d_action * (1.0 - a * a) + d_log_prob[:, None] * 2.0 * a
    d_mean = d_u
    d_ls = (-d_log_prob[:, None] + d_u * np.exp(sample.log_std) * sample.eps) * sample.in_range
    grads, _ = backward(params, sample.cache, np.concatenate([d_mean, d_ls], axis=1))
    return grads


def gaussian_nll(params: MLP, obs: np.ndarray, u_target: np.ndarray) -> tuple[float, MLP]:
    """Mean negative log-likelihood of pre-squash targets and its gradient.

    The tanh Jacobian does not depend on the parameters, so it is dropped.
    """
    cache = Cache()
    out = forward(params, obs, cache)
    k = out.shape[1] // 2
    mean, raw_ls = out[:, :k], out[:, k:]
    log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    in_range = (raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)
    z = (u_target - mean) * np.exp(-log_std)
    n = obs.shape[0]
    loss = float(np.sum(0.5 * z * z + log_std + _HALF_LOG_2PI)) / n
    d_mean = -z * np.exp(-log_std) / n
    d_ls = (1.0 - z * z) * in_range / n
    grads, _ = backward(params, cache, np.concatenate([d_mean, d_ls], axis=1))
    return loss, grads


# --- checkpoints -------------------------------------------------------------------

CKPT_MAGIC = b"IOUTCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, nets: dict[str, MLP], meta: Optional[dict] = None) -> None:
    """Versioned blob: magic, version, JSON shape manifest, raw little-endian arrays."""
    manifest = {"version": CKPT_VERSION, "meta": meta or {}, "nets": {}}
    blobs = []
    for name in sorted(nets):
        net = nets[name]
        manifest["nets"][name] = {
            "activation": net.activation,
            "sizes": net.sizes,
            "dtype": np.dtype(net.dtype).str.replace("<", "").replace("=", ""),
        }
        for a in net.arrays():
            blobs.append(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())
    head = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(head)) + head)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, MLP], dict]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CKPT_VERSION}")
    manifest = json.loads(data[16:16 + n])
    off = 16 + n
    nets = {}
    for name in sorted(manifest["nets"]):
        spec = manifest["nets"][name]
        dt = np.dtype("<" + spec["dtype"])
        sizes = spec["sizes"]
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            for shape in ((fan_in, fan_out), (fan_out,)):
                count = int(np.prod(shape))
                end = off + count * dt.itemsize
                if end > len(data):
                    raise CheckpointError(f"{path}: truncated payload")
                arr = np.frombuffer(data[off:end], dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
                (ws if len(shape) == 2 else bs).append(arr)
                off = end
        nets[name] = MLP(ws, bs, spec["activation"])
    return nets, manifest["meta"]
