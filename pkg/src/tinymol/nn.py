"""Shared transformer building blocks.

Pre-norm blocks over (L, d) or (B, L, d) row tensors, used by the language
model, the sequence autoencoder, the latent denoiser, and the reaction
encoder. Attention masks are additive (0 or a large negative number).
"""

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .rng import Rng

MASK_NEG = -1e30


@dataclass
class BlockParams:
    ln1_g: ag.Tensor
    ln1_b: ag.Tensor
    wq: ag.Tensor
    wk: ag.Tensor
    wv: ag.Tensor
    wo: ag.Tensor
    ln2_g: ag.Tensor
    ln2_b: ag.Tensor
    w1: ag.Tensor
    b1: ag.Tensor
    w2: ag.Tensor
    b2: ag.Tensor

    def named(self, prefix: str):
        for field in ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                      "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
            yield f"{prefix}{field}", getattr(self, field)


def init_block(d: int, mlp: int, rng: Rng) -> BlockParams:
    s = 1.0 / math.sqrt(d)
    return BlockParams(
        ln1_g=ag.param(np.ones(d)),
        ln1_b=ag.param(np.zeros(d)),
        wq=ag.param(rng.split("wq").normal((d, d), scale=s)),
        wk=ag.param(rng.split("wk").normal((d, d), scale=s)),
        wv=ag.param(rng.split("wv").normal((d, d), scale=s)),
        wo=ag.param(rng.split("wo").normal((d, d), scale=s)),
        ln2_g=ag.param(np.ones(d)),
        ln2_b=ag.param(np.zeros(d)),
        w1=ag.param(rng.split("w1").normal((mlp, d), scale=s)),
        b1=ag.param(np.zeros(mlp)),
        w2=ag.param(rng.split("w2").normal((d, mlp), scale=1.0 / math.sqrt(mlp))),
        b2=ag.param(np.zeros(d)),
    )


def sin_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    enc = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return enc


@functools.lru_cache(maxsize=4096)
def _timestep_embedding_cached(t: int, d: int) -> bytes:
    return sin_positions(t + 1, d)[t].tobytes()


def timestep_embedding(t: int, d: int) -> np.ndarray:
    return np.frombuffer(_timestep_embedding_cached(t, d)).copy()


def causal_mask(length: int) -> np.ndarray:
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = MASK_NEG
    return mask


def _split_heads(x: ag.Tensor, heads: int) -> ag.Tensor:
    """(..., L, d) -> (..., heads, L, d/heads)."""
    *lead, length, d = x.shape
    x = ag.reshape(x, (*lead, length, heads, d // heads))
    ndim = len(x.shape)
    axes = tuple(range(ndim - 3)) + (ndim - 2, ndim - 3, ndim - 1)
    return ag.transpose(x, axes)


def _merge_heads(x: ag.Tensor) -> ag.Tensor:
    """(..., heads, L, dh) -> (..., L, heads*dh)."""
    *lead, heads, length, dh = x.shape
    ndim = len(x.shape)
    axes = tuple(range(ndim - 3)) + (ndim - 2, ndim - 3, ndim - 1)
    x = ag.transpose(x, axes)
    return ag.reshape(x, (*lead, length, heads * dh))


def attention(x: ag.Tensor, p: BlockParams, heads: int, mask=None) -> ag.Tensor:
    d = x.shape[-1]
    dh = d // heads
    q = _split_heads(ag.matmul(x, ag.transpose(p.wq)), heads)
    k = _split_heads(ag.matmul(x, ag.transpose(p.wk)), heads)
    v = _split_heads(ag.matmul(x, ag.transpose(p.wv)), heads)
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(dh))
    if mask is not None:
        scores = ag.add(scores, ag.tensor(mask))
    out = ag.matmul(ag.softmax(scores), v)
    return ag.matmul(_merge_heads(out), ag.transpose(p.wo))


def run_block(x: ag.Tensor, p: BlockParams, heads: int, mask=None) -> ag.Tensor:
    h = ag.layer_norm(x, p.ln1_g, p.ln1_b)
    x = ag.add(x, attention(h, p, heads, mask))
    h = ag.layer_norm(x, p.ln2_g, p.ln2_b)
    h = ag.relu(ag.add(ag.matmul(h, ag.transpose(p.w1)), p.b1))
    h = ag.add(ag.matmul(h, ag.transpose(p.w2)), p.b2)
    return ag.add(x, h)


def run_stack(x: ag.Tensor, blocks, heads: int, mask=None) -> ag.Tensor:
    for p in blocks:
        x = run_block(x, p, heads, mask)
    return x
