"""Dense layers, attention and the transformer stack used by every model."""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def sinusoidal_pe(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position table of shape ``(length, dim)``.

    Column ``2i`` holds ``sin(t / 10000**(2i/dim))`` and column ``2i+1`` the
    matching cosine.
    """
    if dim % 2:
        raise ValueError(f"positional encoding dim must be even, got {dim}")
    if length < 1:
        raise ValueError("positional encoding length must be >= 1")
    t = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    pe = np.empty((length, dim))
    pe[:, 0::2] = np.sin(t / freq)
    pe[:, 1::2] = np.cos(t / freq)
    return pe


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of (possibly non-integer) timesteps, shape ``(len(t), dim)``."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    freq = 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    emb = np.empty((t.shape[0], dim))
    emb[:, 0::2] = np.sin(t / freq)
    emb[:, 1::2] = np.cos(t / freq)
    return emb


class Module:
    """Minimal parameter container; parameters are discovered from attributes."""

    training = False

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())

    def digest(self) -> str:
        """sha256 over parameter names and float64 bytes, in name order."""
        h = hashlib.sha256()
        for k, p in sorted(self.named_parameters().items()):
            h.update(k.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


@contextlib.contextmanager
def frozen(*modules: Module):
    """Temporarily stop recording gradients for every parameter of ``modules``."""
    params = [p for m in modules for p in m.named_parameters().values()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 init_scale: float = 1.0):
        bound = init_scale / np.sqrt(d_in)
        self.weight = ag.parameter(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = ag.parameter(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"Linear expects last dim {self.d_in}, got {x.shape[-1]}")
        y = ag.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = ag.parameter(np.ones(dim))
        self.beta = ag.parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)


class Dropout:
    """Inverted dropout drawing masks from a caller-supplied generator."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def __call__(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        if rng is None or self.rate == 0.0:
            return x
        keep = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep


def dropout_rng(seed: int, step: int) -> np.random.Generator:
    """Counter-based generator: identical masks for identical (seed, step)."""
    return np.random.Generator(np.random.Philox(key=seed, counter=step))


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ValueError(f"hidden dim {dim} not divisible by {heads} heads")
        self.heads = heads
        # no key bias: it shifts every score of a query equally and has zero gradient
        self.qkv = Linear(dim, 3 * dim, rng, bias=False)
        self.q_bias = ag.parameter(np.zeros(dim))
        self.v_bias = ag.parameter(np.zeros(dim))
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        h = self.heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q = qkv[0] + self.q_bias.reshape(h, 1, dh)
        k = qkv[1]
        v = qkv[2] + self.v_bias.reshape(h, 1, dh)
        scores = ag.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        if key_mask is not None:
            # padding only: invalid keys receive a large negative additive bias
            scores = scores + np.where(key_mask, 0.0, -1e9)[:, None, None, :]
        attn = ag.softmax(scores, axis=-1)
        ctx = ag.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)


class TransformerBlock(Module):
    """Pre-norm residual block: attention then GELU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float,
                 rng: np.random.Generator):
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.drop = Dropout(dropout)

    def __call__(self, x, key_mask=None, rng=None):
        x = x + self.drop(self.attn(self.norm1(x), key_mask), rng)
        h = self.ff2(ag.gelu(self.ff1(self.norm2(x))))
        return x + self.drop(h, rng)


@dataclass(frozen=True)
class StackConfig:
    layers: int = 4
    heads: int = 4
    hidden_dim: int = 128
    ff_mult: int = 2
    dropout_rate: float = 0.0
    long_skip: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


class TransformerStack(Module):
    """Stack of pre-norm blocks with optional U-Net style long skips.

    With ``long_skip`` the output of block ``i < L//2`` is concatenated to the
    input of block ``L-1-i``, mapped back to ``hidden_dim`` by a learned linear
    layer and added residually, so zeroed fusion weights give a plain stack.
    A final layer norm closes the stack.
    """

    def __init__(self, cfg: StackConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.hidden_dim
        self.blocks = [TransformerBlock(d, cfg.heads, cfg.ff_mult * d, cfg.dropout_rate, rng)
                       for _ in range(cfg.layers)]
        n_skip = cfg.layers // 2 if cfg.long_skip else 0
        self.skip_fuse = [Linear(2 * d, d, rng) for _ in range(n_skip)]
        self.final_norm = LayerNorm(d) if cfg.layers else None

    def __call__(self, x: Tensor, key_mask: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> Tensor:
        if x.shape[-1] != self.cfg.hidden_dim:
            raise ValueError(f"tokens have dim {x.shape[-1]}, stack expects {self.cfg.hidden_dim}")
        if not self.training:
            rng = None
        n = self.cfg.layers
        saved: list[Tensor] = []
        for i, block in enumerate(self.blocks):
            j = n - 1 - i
            if self.skip_fuse and j < len(self.skip_fuse) and i >= n - len(self.skip_fuse):
                x = x + self.skip_fuse[j](ag.concat([x, saved[j]], axis=-1))
            x = block(x, key_mask, rng)
            if i < len(self.skip_fuse):
                saved.append(x)
        return self.final_norm(x) if self.final_norm is not None else x


def forward_stack(stack: TransformerStack, tokens, train_mode: bool = False,
                  seed: int = 0, key_mask=None) -> np.ndarray:
    """Run ``stack`` on an ``(n_tokens, hidden)`` or batched token array."""
    x = ag.as_tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    was_training = stack.training
    stack.train(train_mode)
    try:
        out = stack(x, key_mask, dropout_rng(seed, 0) if train_mode else None)
    finally:
        stack.train(was_training)
    return out.data[0] if squeeze else out.data
