"""The self-attention block: dilated feed-forward, instance norm, scaled
dot-product attention with a swappable value source, 1x1 projection,
layer norm and residual.

Shapes throughout are T x C (time major, channels last).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ShapeError
from .tensor import Tensor

KERNEL_SIZE = 3


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return tn.parameter(rng.uniform(-bound, bound, size=shape))


@dataclass
class AttentionParams:
    w_q: Tensor  # C x (heads * head_dim)
    w_k: Tensor
    w_v: Tensor
    w_out: Tensor  # (heads * head_dim) x C
    r: int = 1
    heads: int = 1
    split_heads: bool = True
    window: Optional[int] = None

    @property
    def head_dim(self):
        return self.w_q.shape[1] // self.heads

    def parameters(self):
        return {"w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v, "w_out": self.w_out}


def attention_dims(dim, r=1, heads=1, split_heads=True):
    """Return (head_dim, total projection width) for a block of width ``dim``.

    With ``split_heads`` the C/r projection is divided evenly across heads;
    otherwise every head gets its own C/r-wide projection.
    """
    problems = []
    if r < 1 or dim % r:
        problems.append(f"r={r} must be a positive divisor of model_dim={dim}")
    if heads < 1:
        problems.append(f"heads={heads} must be >= 1")
    elif split_heads and r >= 1 and dim % (r * heads):
        problems.append(f"model_dim={dim} is not divisible by r*heads={r * heads}")
    if problems:
        raise ConfigError(problems)
    proj = dim // r
    head_dim = proj // heads if split_heads else proj
    return head_dim, head_dim * heads


def init_attention(rng, dim, r=1, heads=1, split_heads=True, window=None):
    head_dim, width = attention_dims(dim, r, heads, split_heads)
    return AttentionParams(
        w_q=uniform_init(rng, (dim, width), dim),
        w_k=uniform_init(rng, (dim, width), dim),
        w_v=uniform_init(rng, (dim, width), dim),
        w_out=uniform_init(rng, (width, dim), width),
        r=r, heads=heads, split_heads=split_heads, window=window,
    )


@dataclass
class BlockParams:
    conv_w: Tensor  # 3 x C x C
    conv_b: Tensor
    in_weight: Tensor
    in_bias: Tensor
    attn: AttentionParams
    ln_weight: Tensor
    ln_bias: Tensor
    dilation: int

    @property
    def dim(self):
        return self.conv_w.shape[1]

    def parameters(self):
        params = {
            "conv_w": self.conv_w, "conv_b": self.conv_b,
            "in_weight": self.in_weight, "in_bias": self.in_bias,
            "ln_weight": self.ln_weight, "ln_bias": self.ln_bias,
        }
        params.update({f"attn.{k}": v for k, v in self.attn.parameters().items()})
        return params


def init_block(rng, dim, index, r=1, heads=1, split_heads=True, window=None):
    """Block ``index`` of a stack; its convolution dilation is 2**index."""
    fan_in = KERNEL_SIZE * dim
    return BlockParams(
        conv_w=uniform_init(rng, (KERNEL_SIZE, dim, dim), fan_in),
        conv_b=uniform_init(rng, (dim,), fan_in),
        in_weight=tn.parameter(np.ones(dim)),
        in_bias=tn.parameter(np.zeros(dim)),
        attn=init_attention(rng, dim, r, heads, split_heads, window),
        ln_weight=tn.parameter(np.ones(dim)),
        ln_bias=tn.parameter(np.zeros(dim)),
        dilation=2 ** index,
    )


def feed_forward(x, block):
    """InstanceNorm(ReLU(DilatedConv(x)))."""
    h = tn.relu(tn.dilated_conv1d(x, block.conv_w, block.conv_b, block.dilation))
    return tn.instance_norm(h, block.in_weight, block.in_bias)


def _window_mask(T, window):
    idx = np.arange(T)
    far = np.abs(idx[:, None] - idx[None, :]) > window
    return np.where(far, -1e30, 0.0)


def scaled_dot_attention(q_in, kv_in, v_in, p, return_weights=False):
    """softmax(Q K^T / sqrt(d)) V per head, heads concatenated along channels.

    Q = q_in W_q, K = kv_in W_k, V = v_in W_v and d is the per-head width.
    Returns a T x (heads * head_dim) tensor, plus the list of per-head
    attention matrices when ``return_weights`` is set.
    """
    T = q_in.shape[0]
    if kv_in.shape[0] != T or v_in.shape[0] != T:
        raise ShapeError(
            f"attention inputs disagree on T: q {q_in.shape}, k {kv_in.shape}, v {v_in.shape}")
    q = tn.matmul(q_in, p.w_q)
    k = tn.matmul(kv_in, p.w_k)
    v = tn.matmul(v_in, p.w_v)
    d = p.head_dim
    mask = None if p.window is None else _window_mask(T, p.window)
    outs, weights = [], []
    for h in range(p.heads):
        cols = slice(h * d, (h + 1) * d)
        qh, kh, vh = (q, k, v) if p.heads == 1 else (q[:, cols], k[:, cols], v[:, cols])
        scores = tn.scale(tn.matmul(qh, tn.transpose(kh)), 1.0 / np.sqrt(d))
        if mask is not None:
            scores = tn.add(scores, mask)
        att = tn.softmax_rows(scores)
        weights.append(att)
        outs.append(tn.matmul(att, vh))
    out = outs[0] if p.heads == 1 else tn.concat_channels(outs)
    return (out, weights) if return_weights else out


def self_attention_block(x, block, cross_v=None):
    """One block; ``cross_v`` (T x C) replaces the value input when given.

    Without ``cross_v`` the values come from the normalised feed-forward
    output, same as the queries and keys.
    """
    if cross_v is not None and cross_v.shape != x.shape:
        raise ShapeError(f"cross value source {cross_v.shape} does not match block input {x.shape}")
    h = feed_forward(x, block)
    v_src = h if cross_v is None else cross_v
    att = scaled_dot_attention(h, h, v_src, block.attn)
    y = tn.layer_norm(tn.matmul(att, block.attn.w_out), block.ln_weight, block.ln_bias)
    return tn.add(y, x)


def conv_receptive_field(num_blocks):
    """Frames seen by a stack of kernel-3 convolutions with dilations 1, 2, ..., 2**(n-1)."""
    return 2 ** (num_blocks + 1) - 1
