"""Minimal reverse-mode differentiation for the trajectory model.

Implements exactly the pieces the sequence VAE needs: a Tensor with a
recorded operation graph, dense and gated-recurrent layers, Gaussian
reparameterization, exponential and categorical likelihood heads, an
adaptive-moment optimizer, finite-difference gradient checking, and a
versioned binary checkpoint format. Arrays are float64 throughout;
batching is the leading dimension.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_SIGMA_CLAMP = 8.0


class NeuralError(Exception):
    pass


class ShapeMismatch(NeuralError):
    pass


class EmptySequence(NeuralError):
    pass


class GraphNotRecorded(NeuralError):
    pass


class NonFinite(NeuralError):
    pass


class BadCheckpoint(NeuralError):
    pass


# ---------------------------------------------------------------------------
# tensor and graph


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """N-d array with recorded parents for reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # -- graph plumbing

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        return out

    @staticmethod
    def _accum(p: "Tensor", g: np.ndarray) -> None:
        if not p.requires_grad:
            return
        g = _unbroadcast(g, p.data.shape)
        p.grad = g if p.grad is None else p.grad + g

    def backward(self) -> None:
        """Populate .grad on every reachable requires_grad tensor.

        The loss must be scalar. Traversal is iterative so long unrolled
        sequences cannot hit the recursion limit.
        """
        if not self.requires_grad:
            raise GraphNotRecorded("tensor has no recorded graph")
        if self.data.size != 1:
            raise ShapeMismatch("backward() needs a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic

    @staticmethod
    def _lift(v) -> "Tensor":
        return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))

    @staticmethod
    def _broadcastable(a: "Tensor", b: "Tensor") -> None:
        try:
            np.broadcast_shapes(a.data.shape, b.data.shape)
        except ValueError as e:
            raise ShapeMismatch(str(e)) from e

    def __add__(self, other):
        other = Tensor._lift(other)
        Tensor._broadcastable(self, other)

        def bwd(g):
            Tensor._accum(self, g)
            Tensor._accum(other, g)

        return Tensor._make(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other)
        Tensor._broadcastable(self, other)

        def bwd(g):
            Tensor._accum(self, g * other.data)
            Tensor._accum(other, g * self.data)

        return Tensor._make(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        def bwd(g):
            Tensor._accum(self, -g)

        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __truediv__(self, other):
        other = Tensor._lift(other)
        Tensor._broadcastable(self, other)

        def bwd(g):
            Tensor._accum(self, g / other.data)
            Tensor._accum(other, -g * self.data / (other.data**2))

        return Tensor._make(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, p: float):
        p = float(p)

        def bwd(g):
            Tensor._accum(self, g * p * self.data ** (p - 1.0))

        return Tensor._make(self.data**p, (self,), bwd)

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2 or self.data.shape[1] != other.data.shape[0]:
            raise ShapeMismatch(
                f"matmul needs (n,k)@(k,m), got {self.data.shape} @ {other.data.shape}"
            )

        def bwd(g):
            Tensor._accum(self, g @ other.data.T)
            Tensor._accum(other, self.data.T @ g)

        return Tensor._make(self.data @ other.data, (self, other), bwd)

    # -- reductions and elementwise maps

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g):
            if axis is None:
                Tensor._accum(self, np.broadcast_to(g, self.data.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            Tensor._accum(self, np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            Tensor._accum(self, g * out_data)

        return Tensor._make(out_data, (self,), bwd)

    def log(self):
        def bwd(g):
            Tensor._accum(self, g / self.data)

        return Tensor._make(np.log(self.data), (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            Tensor._accum(self, g * (1.0 - out_data**2))

        return Tensor._make(out_data, (self,), bwd)

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def bwd(g):
            Tensor._accum(self, g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), bwd)

    def softplus(self):
        out_data = np.logaddexp(0.0, self.data)
        sig = np.where(
            self.data >= 0,
            1.0 / (1.0 + np.exp(-np.abs(self.data))),
            np.exp(-np.abs(self.data)) / (1.0 + np.exp(-np.abs(self.data))),
        )

        def bwd(g):
            Tensor._accum(self, g * sig)

        return Tensor._make(out_data, (self,), bwd)

    def clamp(self, lo: float, hi: float):
        """Clip values; gradient passes only where the value was inside [lo, hi]."""
        mask = (self.data >= lo) & (self.data <= hi)

        def bwd(g):
            Tensor._accum(self, g * mask)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), bwd)

    def row_pick(self, idx: np.ndarray):
        """out[i] = self[i, idx[i]] for a (N, V) tensor; backward scatter-adds."""
        if self.data.ndim != 2:
            raise ShapeMismatch(f"row_pick needs a 2-d tensor, got {self.data.shape}")
        idx = np.asarray(idx, dtype=np.intp)
        if idx.ndim != 1 or idx.shape[0] != self.data.shape[0]:
            raise ShapeMismatch("row_pick index must be 1-d with one entry per row")
        rows = np.arange(self.data.shape[0])

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, (rows, idx), g)
            Tensor._accum(self, full)

        return Tensor._make(self.data[rows, idx], (self,), bwd)

    def log_softmax(self):
        """Row-wise log softmax over the last axis, max-shifted for stability."""
        m = Tensor(self.data.max(axis=-1, keepdims=True))  # constant shift
        shifted = self - m
        lse = shifted.exp().sum(axis=-1, keepdims=True).log()
        return shifted - lse

    def softmax(self):
        return self.log_softmax().exp()


def concat_rows(tensors: list[Tensor]) -> Tensor:
    """Stack equally shaped (B, d_i) tensors along the last axis."""
    datas = [t.data for t in tensors]
    widths = [d.shape[-1] for d in datas]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            Tensor._accum(t, g[..., a:b])

    return Tensor._make(np.concatenate(datas, axis=-1), tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# layers

INIT_SCALE = 0.08


@dataclass
class MLPParams:
    """Affine->tanh stack; the final layer is a bare affine head."""

    layers: list  # [(W, b)] of Tensor pairs

    def named(self, prefix: str) -> dict:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


@dataclass
class RecurrentCellParams:
    """Gated recurrent cell (update gate u, reset gate r, candidate c)."""

    input_dim: int
    hidden_dim: int
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_u: Tensor
    u_u: Tensor
    b_u: Tensor
    w_c: Tensor
    u_c: Tensor
    b_c: Tensor

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.{n}": getattr(self, n)
            for n in ("w_r", "u_r", "b_r", "w_u", "u_u", "b_u", "w_c", "u_c", "b_c")
        }


@dataclass
class GaussianParams:
    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        if self.mu.data.shape != self.log_sigma.data.shape:
            raise ShapeMismatch("mu and log_sigma shapes differ")


@dataclass
class LatentCode:
    z: Tensor


def init_mlp(rng: np.random.Generator, dims: list[int]) -> MLPParams:
    """Seeded uniform(-0.08, 0.08) initialization for all weights and biases."""
    layers = []
    for din, dout in zip(dims[:-1], dims[1:]):
        w = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(din, dout)), requires_grad=True)
        b = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(dout,)), requires_grad=True)
        layers.append((w, b))
    return MLPParams(layers=layers)


def init_recurrent(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> RecurrentCellParams:
    def mat(a, b):
        return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(a, b)), requires_grad=True)

    def vec(a):
        return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(a,)), requires_grad=True)

    return RecurrentCellParams(
        input_dim=input_dim,
        hidden_dim=hidden_dim,
        w_r=mat(input_dim, hidden_dim), u_r=mat(hidden_dim, hidden_dim), b_r=vec(hidden_dim),
        w_u=mat(input_dim, hidden_dim), u_u=mat(hidden_dim, hidden_dim), b_u=vec(hidden_dim),
        w_c=mat(input_dim, hidden_dim), u_c=mat(hidden_dim, hidden_dim), b_c=vec(hidden_dim),
    )


def mlp_forward(params: MLPParams, x: Tensor) -> Tensor:
    """Affine->tanh per hidden layer; the last layer stays affine."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"mlp input must be (batch, dim), got {x.data.shape}")
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        if h.data.shape[1] != w.data.shape[0]:
            raise ShapeMismatch(f"layer {i}: input {h.data.shape} vs weight {w.data.shape}")
        h = h @ w + b
        if i != last:
            h = h.tanh()
    return h


def recurrent_step(params: RecurrentCellParams, x: Tensor, h: Tensor) -> Tensor:
    """One gated update: h' = u*h + (1-u)*tanh(W_c x + U_c (r*h) + b_c)."""
    r = (x @ params.w_r + h @ params.u_r + params.b_r).sigmoid()
    u = (x @ params.w_u + h @ params.u_u + params.b_u).sigmoid()
    c = (x @ params.w_c + (r * h) @ params.u_c + params.b_c).tanh()
    return u * h + (1.0 - u) * c


def recurrent_forward(params: RecurrentCellParams, sequence: list[Tensor]) -> list[Tensor]:
    """Run the cell over a step list; h_0 = 0. Returns h_t for every step."""
    if not sequence:
        raise EmptySequence("recurrent_forward needs at least one step")
    batch = sequence[0].data.shape[0]
    for t, x in enumerate(sequence):
        if x.data.ndim != 2 or x.data.shape != (batch, params.input_dim):
            raise ShapeMismatch(f"step {t}: expected ({batch}, {params.input_dim}), got {x.data.shape}")
    h = Tensor(np.zeros((batch, params.hidden_dim)))
    states = []
    for x in sequence:
        h = recurrent_step(params, x, h)
        states.append(h)
    return states


# ---------------------------------------------------------------------------
# heads and loss


def reparameterize(g: GaussianParams, eps: Tensor) -> LatentCode:
    """z = mu + exp(log_sigma) * eps with log_sigma clamped to [-8, 8]."""
    if g.mu.data.shape != eps.data.shape:
        raise ShapeMismatch(f"eps shape {eps.data.shape} vs mu {g.mu.data.shape}")
    sigma = g.log_sigma.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP).exp()
    return LatentCode(z=g.mu + sigma * eps)


def duration_nll(rate: Tensor, durations: np.ndarray) -> Tensor:
    """Exponential negative log likelihood: sum of rate*d - ln rate."""
    d = Tensor(np.asarray(durations, dtype=np.float64))
    if d.data.shape != rate.data.shape:
        raise ShapeMismatch(f"durations {d.data.shape} vs rate {rate.data.shape}")
    return (rate * d - rate.log()).sum()


def location_nll(logits: Tensor, tokens: np.ndarray) -> Tensor:
    """Categorical negative log likelihood of the true tokens, summed."""
    return -(logits.log_softmax().row_pick(tokens).sum())


def kl_gaussian(g: GaussianParams) -> Tensor:
    """KL(q || N(0, I)) summed over all dims: 0.5*(mu^2 + sigma^2 - 1 - 2*log_sigma)."""
    ls = g.log_sigma.clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    return (0.5 * (g.mu * g.mu + (2.0 * ls).exp() - 1.0 - 2.0 * ls)).sum()


def elbo_loss(recon_duration_nll: Tensor, recon_location_nll: Tensor, g: GaussianParams):
    """Total loss = duration NLL + location NLL + KL, plus a per-term breakdown."""
    kl = kl_gaussian(g)
    loss = recon_duration_nll + recon_location_nll + kl
    if not np.isfinite(loss.data):
        raise NonFinite("elbo loss is not finite")
    breakdown = {
        "duration_nll": float(recon_duration_nll.data),
        "location_nll": float(recon_location_nll.data),
        "kl": float(kl.data),
    }
    return loss, breakdown


# ---------------------------------------------------------------------------
# optimizer

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_init(params: dict) -> dict:
    """First/second moment state for a named parameter dict."""
    return {
        "t": 0,
        "m": {k: np.zeros_like(p.data) for k, p in params.items()},
        "v": {k: np.zeros_like(p.data) for k, p in params.items()},
    }


def adam_step(params: dict, grads: dict, state: dict, lr: float) -> dict:
    """Bias-corrected adaptive-moment update, applied in place; returns params."""
    state["t"] += 1
    t = state["t"]
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"{k}: grad {g.shape} vs param {p.data.shape}")
        m = state["m"][k] = ADAM_BETA1 * state["m"][k] + (1 - ADAM_BETA1) * g
        v = state["v"][k] = ADAM_BETA2 * state["v"][k] + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params


def collect_grads(params: dict) -> dict:
    return {k: p.grad for k, p in params.items() if p.grad is not None}


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(loss_fn, params: dict, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must rebuild the forward graph from the live parameter data on
    every call. Meant for small shapes; every entry is perturbed. The error
    denominator is floored at 1e-5 so near-zero gradients are compared on an
    absolute scale; below that, central differences are round-off noise.
    """
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    worst = 0.0
    for k, p in params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            dn = loss_fn().item()
            flat[i] = orig
            numeric = (up - dn) / (2 * h)
            a = analytic[k].reshape(-1)[i]
            denom = max(1e-5, abs(a) + abs(numeric))
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoint format

_CKPT_MAGIC = b"NSCP"
_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict, meta: dict | None = None) -> None:
    """Binary dump: magic, version byte, JSON header, then raw float64 LE data."""
    entries = []
    blobs = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(
            tensors[name].data if isinstance(tensors[name], Tensor) else tensors[name],
            dtype=np.float64,
        ))
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8").tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<B", _CKPT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_checkpoint(path: str | Path):
    """Inverse of save_checkpoint; returns (name->ndarray, meta)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise BadCheckpoint(f"bad magic {raw[:4]!r}")
    version = raw[4]
    if version != _CKPT_VERSION:
        raise BadCheckpoint(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9 : 9 + hlen].decode("utf-8"))
    offset = 9 + hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors[entry["name"]] = arr.astype(np.float64)
        offset += n * 8
    return tensors, header["meta"]
