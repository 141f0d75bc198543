"""Small dense networks with hand-written reverse-mode gradients: a diagonal
Gaussian policy head over robot velocities and a scalar value function.

Checkpoint format (little-endian throughout):

    magic            8 bytes  b"SWGNCKP1"
    version          u32      currently 1
    flags            u32      bit0: value net present, bit1: adam moments present
    policy net       u32 dim-count, then that many u32 layer dims,
                     then float64 weight matrices row-major layer by layer,
                     then float64 bias vectors layer by layer,
                     then float64 log-std vector
    value net        same header and parameter layout, no log-std (if flagged)
    adam moments     per net: u64 step count, then first-moment arrays, then
                     second-moment arrays, in [W0, b0, W1, b1, ..., log_std]
                     order (if flagged)

Save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

_MAGIC = b"SWGNCKP1"
_VERSION = 1
_FLAG_VALUE = 1
_FLAG_MOMENTS = 2


class NnError(Exception):
    pass


class DimensionMismatch(NnError):
    pass


class ShapeMismatch(NnError):
    pass


class NoForwardRecorded(NnError):
    pass


class CheckpointError(NnError):
    pass


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Fully connected net, tanh on hidden layers, identity output.

    forward(record=True) stashes activations for one subsequent backward();
    the stash is consumed by backward.
    """

    def __init__(self, layer_dims, rng: np.random.Generator | None = None,
                 weights=None, biases=None):
        self.layer_dims = tuple(int(d) for d in layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if weights is not None:
            self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
            self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        else:
            if rng is None:
                raise ValueError("either parameter arrays or an rng is required")
            self.weights = [glorot_uniform(a, b, rng)
                            for a, b in zip(self.layer_dims, self.layer_dims[1:])]
            self.biases = [np.zeros(b) for b in self.layer_dims[1:]]
        for w, b, (d_in, d_out) in zip(self.weights, self.biases,
                                       zip(self.layer_dims, self.layer_dims[1:])):
            if w.shape != (d_in, d_out) or b.shape != (d_out,):
                raise ShapeMismatch("parameter arrays inconsistent with layer dims")
        self._cache: list[np.ndarray] | None = None

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def forward(self, x, record: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.in_dim:
            raise DimensionMismatch(f"expected input dim {self.in_dim}, got {h.shape[1]}")
        acts = [h]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if l < last:
                h = np.tanh(h)
            acts.append(h)
        if record:
            self._cache = acts
        return h[0] if single else h

    def backward(self, grad_out: np.ndarray):
        """Exact gradients of sum(grad_out * output) w.r.t. every weight and
        bias, for the batch recorded by the last forward(record=True)."""
        if self._cache is None:
            raise NoForwardRecorded("call forward(record=True) before backward")
        acts = self._cache
        self._cache = None
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        if g.shape != acts[-1].shape:
            raise ShapeMismatch(f"upstream gradient shape {g.shape} != output {acts[-1].shape}")
        d_weights = [None] * len(self.weights)
        d_biases = [None] * len(self.biases)
        for l in range(len(self.weights) - 1, -1, -1):
            d_weights[l] = acts[l].T @ g
            d_biases[l] = g.sum(axis=0)
            if l > 0:
                g = (g @ self.weights[l].T) * (1.0 - acts[l] ** 2)
        return d_weights, d_biases

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def _gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray):
    """Diagonal Gaussian log density, summed over action dimensions."""
    z = (action - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


class GaussianPolicy:
    """Deterministic mean network plus state-independent log standard
    deviations; actions are sampled pre-clamp and the density is evaluated
    on the pre-clamp value."""

    def __init__(self, mean_net: Mlp, log_std: np.ndarray):
        if log_std.shape != (mean_net.out_dim,):
            raise ShapeMismatch("log_std length must match the action dim")
        self.mean_net = mean_net
        self.log_std = np.asarray(log_std, dtype=np.float64)
        self._stash = None

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, rng: np.random.Generator,
               hidden=(64, 64), std_init: float = 0.5) -> "GaussianPolicy":
        net = Mlp([obs_dim, *hidden, act_dim], rng=rng)
        return cls(net, np.full(act_dim, math.log(std_init)))

    @property
    def act_dim(self) -> int:
        return self.mean_net.out_dim

    def mean(self, obs) -> np.ndarray:
        return self.mean_net.forward(obs)

    def sample(self, obs, rng: np.random.Generator):
        mu = self.mean(obs)
        std = np.exp(self.log_std)
        action = mu + std * rng.standard_normal(self.act_dim)
        return action, float(_gaussian_log_prob(mu, self.log_std, action))

    def log_prob(self, obs, action):
        return _gaussian_log_prob(self.mean(obs), self.log_std, np.asarray(action, float))

    def log_prob_recorded(self, obs_batch: np.ndarray, act_batch: np.ndarray) -> np.ndarray:
        """Batch log densities with activations recorded for backward_log_prob."""
        mu = self.mean_net.forward(obs_batch, record=True)
        act = np.asarray(act_batch, dtype=np.float64)
        self._stash = (act, mu)
        return _gaussian_log_prob(mu, self.log_std, act)

    def backward_log_prob(self, coeffs: np.ndarray):
        """Gradients of sum_i coeffs[i] * log_prob_i w.r.t. net params and
        log_std, for the batch recorded by log_prob_recorded."""
        if self._stash is None:
            raise NoForwardRecorded("call log_prob_recorded before backward_log_prob")
        act, mu = self._stash
        self._stash = None
        coeffs = np.asarray(coeffs, dtype=np.float64)[:, None]
        inv_var = np.exp(-2.0 * self.log_std)
        diff = act - mu
        d_mu = coeffs * diff * inv_var
        d_weights, d_biases = self.mean_net.backward(d_mu)
        d_log_std = np.sum(coeffs * (diff * diff * inv_var - 1.0), axis=0)
        return d_weights, d_biases, d_log_std

    def parameters(self) -> list[np.ndarray]:
        return self.mean_net.parameters() + [self.log_std]

    def grads_as_list(self, d_weights, d_biases, d_log_std) -> list[np.ndarray]:
        out = []
        for dw, db in zip(d_weights, d_biases):
            out.append(dw)
            out.append(db)
        return out + [d_log_std]


class ValueNet:
    def __init__(self, net: Mlp):
        if net.out_dim != 1:
            raise ShapeMismatch("value net must have a single output")
        self.net = net

    @classmethod
    def create(cls, obs_dim: int, rng: np.random.Generator, hidden=(64, 64)) -> "ValueNet":
        return cls(Mlp([obs_dim, *hidden, 1], rng=rng))

    def value(self, obs) -> float | np.ndarray:
        out = self.net.forward(obs)
        if out.ndim == 1:
            return float(out[0])
        return out[:, 0]

    def value_recorded(self, obs_batch: np.ndarray) -> np.ndarray:
        return self.net.forward(obs_batch, record=True)[:, 0]

    def backward(self, coeffs: np.ndarray):
        """Gradients of sum_i coeffs[i] * V_i for the recorded batch."""
        return self.net.backward(np.asarray(coeffs, dtype=np.float64)[:, None])

    def parameters(self) -> list[np.ndarray]:
        return self.net.parameters()


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
                lr: float, maximize: bool = False,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam step with bias correction; maximize=True ascends."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and moments must align")
    state.t += 1
    b1c = 1.0 - beta1 ** state.t
    b2c = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape}")
        if maximize:
            g = -g
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)


@dataclass
class Checkpoint:
    policy: GaussianPolicy
    value_net: ValueNet | None = None
    policy_adam: AdamState | None = None
    value_adam: AdamState | None = None


def _write_array(parts: list[bytes], arr: np.ndarray) -> None:
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _write_net(parts: list[bytes], net: Mlp) -> None:
    parts.append(struct.pack("<I", len(net.layer_dims)))
    parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for w in net.weights:
        _write_array(parts, w)
    for b in net.biases:
        _write_array(parts, b)


def _write_adam(parts: list[bytes], state: AdamState) -> None:
    parts.append(struct.pack("<Q", state.t))
    for arr in state.m:
        _write_array(parts, arr)
    for arr in state.v:
        _write_array(parts, arr)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return vals

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        out = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.off)
        self.off += count * 8
        return out.reshape(shape).astype(np.float64)


def _read_net_header(r: _Reader) -> tuple[int, ...]:
    (ndims,) = r.take("<I")
    return r.take(f"<{ndims}I")


def _read_net(r: _Reader) -> Mlp:
    dims = _read_net_header(r)
    weights = [r.array((a, b)) for a, b in zip(dims, dims[1:])]
    biases = [r.array((b,)) for b in dims[1:]]
    return Mlp(dims, weights=weights, biases=biases)


def _read_adam(r: _Reader, params: list[np.ndarray]) -> AdamState:
    (t,) = r.take("<Q")
    m = [r.array(p.shape) for p in params]
    v = [r.array(p.shape) for p in params]
    return AdamState(m=m, v=v, t=t)


def save_checkpoint(path, policy: GaussianPolicy, value_net: ValueNet | None = None,
                    policy_adam: AdamState | None = None,
                    value_adam: AdamState | None = None) -> None:
    flags = 0
    if value_net is not None:
        flags |= _FLAG_VALUE
    if policy_adam is not None:
        if value_net is not None and value_adam is None:
            raise CheckpointError("value moments required when saving moments with a value net")
        flags |= _FLAG_MOMENTS
    parts: list[bytes] = [_MAGIC, struct.pack("<II", _VERSION, flags)]
    _write_net(parts, policy.mean_net)
    _write_array(parts, policy.log_std)
    if value_net is not None:
        _write_net(parts, value_net.net)
    if policy_adam is not None:
        _write_adam(parts, policy_adam)
        if value_adam is not None:
            _write_adam(parts, value_adam)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    r = _Reader(buf)
    r.off = 8
    version, flags = r.take("<II")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    mean_net = _read_net(r)
    log_std = r.array((mean_net.out_dim,))
    policy = GaussianPolicy(mean_net, log_std)
    value_net = None
    if flags & _FLAG_VALUE:
        value_net = ValueNet(_read_net(r))
    policy_adam = value_adam = None
    if flags & _FLAG_MOMENTS:
        policy_adam = _read_adam(r, policy.parameters())
        if value_net is not None:
            value_adam = _read_adam(r, value_net.parameters())
    return Checkpoint(policy=policy, value_net=value_net,
                      policy_adam=policy_adam, value_adam=value_adam)
