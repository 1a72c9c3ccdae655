"""The three attention flavors of the restoration network.

* spatial_attention: pixel tokens inside non-overlapping query windows
  attending to enlarged, replicate-padded key/value windows (OCA style)
* transposed_attention: channel tokens with L2-normalized Q/K and a
  learnable per-head temperature (Restormer style)
* cross_attention_mafg: the median-penalty deconvolution queries all M
  bank outputs jointly, reweighting them per window
* enhance_query: high-pass residual q - avgpool(q) applied to the queries
  of every odd decoder block

All ops are pure given their parameter structs and differentiate through
the shared tape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor
from .wiener import DeconvStack


@dataclass
class WindowSpec:
    """Non-overlapping query windows; key/value windows are enlarged to
    floor(window * (1 + overlap_ratio)) and centered on the query window."""

    window: int = 8
    overlap_ratio: float = 0.5

    def __post_init__(self):
        if self.window < 1 or self.overlap_ratio < 0:
            raise ContractError("need window >= 1 and overlap_ratio >= 0")

    def kv_side(self) -> int:
        return int(math.floor(self.window * (1.0 + self.overlap_ratio)))


@dataclass
class AttentionParams:
    """Projection weights for one attention op.

    temperature is the learnable per-head scale used by channel attention;
    spatial attention uses the fixed 1/sqrt(d_head) instead.  w_embed, when
    present, is a 1x1 input projection (used by the bank cross-attention to
    lift images into the feature space).
    """

    dim: int
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    temperature: Tensor
    w_embed: Tensor | None = None

    def __post_init__(self):
        if self.dim % self.heads:
            raise ContractError(f"dim {self.dim} not divisible by heads {self.heads}")

    def named(self, prefix: str) -> dict:
        out = {
            f"{prefix}.wq": self.wq,
            f"{prefix}.wk": self.wk,
            f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
            f"{prefix}.temperature": self.temperature,
        }
        if self.w_embed is not None:
            out[f"{prefix}.w_embed"] = self.w_embed
        return out


def uniform_init(rng, shape, fan_in, dtype=np.float32) -> Tensor:
    """Seeded uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), dtype=dtype, requires_grad=True)


def init_attention_params(
    rng, dim: int, heads: int, embed_channels: int | None = None, dtype=np.float32
) -> AttentionParams:
    w_embed = (
        uniform_init(rng, (dim, embed_channels), embed_channels, dtype)
        if embed_channels
        else None
    )
    return AttentionParams(
        dim=dim,
        heads=heads,
        wq=uniform_init(rng, (dim, dim), dim, dtype),
        wk=uniform_init(rng, (dim, dim), dim, dtype),
        wv=uniform_init(rng, (dim, dim), dim, dtype),
        wo=uniform_init(rng, (dim, dim), dim, dtype),
        temperature=Tensor(np.ones((heads, 1, 1)), dtype=dtype, requires_grad=True),
        w_embed=w_embed,
    )


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = T.sqrt(T.tensor_sum(T.square(x), axis=axis, keepdims=True) + eps)
    return T.div(x, norm)


# ---------------------------------------------------------------------------
# token plumbing


def _window_tokens(wnd: Tensor, heads: int) -> Tensor:
    """[B,L,C,s,s] windows -> [B*L*heads, s*s, d_head] token batches."""
    B, L, C, s, _ = wnd.shape
    dh = C // heads
    t = T.reshape(wnd, (B, L, heads, dh, s * s))
    t = T.transpose(t, (0, 1, 2, 4, 3))
    return T.reshape(t, (B * L * heads, s * s, dh))


def _tokens_to_windows(tok: Tensor, B: int, L: int, heads: int, s: int) -> Tensor:
    dh = tok.shape[-1]
    t = T.reshape(tok, (B, L, heads, s * s, dh))
    t = T.transpose(t, (0, 1, 2, 4, 3))
    return T.reshape(t, (B, L, heads * dh, s, s))


def _stack_tokens(wnd: Tensor, heads: int) -> Tensor:
    """[M,L,C,s,s] windows -> [L*heads, M*s*s, d_head]: all M variants of a
    spatial window are merged into one key/value token set."""
    M, L, C, s, _ = wnd.shape
    dh = C // heads
    t = T.reshape(wnd, (M, L, heads, dh, s * s))
    t = T.transpose(t, (1, 2, 0, 4, 3))
    return T.reshape(t, (L * heads, M * s * s, dh))


def _pad_to_window_multiple(x: Tensor, win: int):
    H, W = x.shape[-2:]
    Hp = -(-H // win) * win
    Wp = -(-W // win) * win
    if (Hp, Wp) == (H, W):
        return x, H, W
    return T.pad_replicate(x, (0, Hp - H, 0, Wp - W)), H, W


def _crop(x: Tensor, H: int, W: int) -> Tensor:
    if x.shape[-2:] == (H, W):
        return x
    x = T.narrow(x, x.ndim - 2, 0, H)
    return T.narrow(x, x.ndim - 1, 0, W)


# ---------------------------------------------------------------------------
# ops


def spatial_attention(
    x: Tensor, p: AttentionParams, w: WindowSpec, q_override: Tensor | None = None
) -> Tensor:
    """Windowed self-attention over pixel tokens; output extents match input."""
    if x.ndim != 4 or x.shape[1] != p.dim:
        raise ShapeError(f"expected [B,{p.dim},H,W], got {x.shape}")
    if q_override is not None and q_override.shape != x.shape:
        raise ShapeError("q_override must match the input shape")
    B = x.shape[0]
    win = w.window
    xq = x if q_override is None else q_override
    x, H, W = _pad_to_window_multiple(x, win)
    xq, _, _ = _pad_to_window_multiple(xq, win)

    q = T.conv2d(xq, p.wq, "pointwise_1x1")
    k = T.conv2d(x, p.wk, "pointwise_1x1")
    v = T.conv2d(x, p.wv, "pointwise_1x1")

    kv = w.kv_side()
    pl = (kv - win) // 2
    pr = kv - win - pl
    nh, nw = x.shape[2] // win, x.shape[3] // win
    qw = T.extract_windows(q, win, win)
    kw = T.extract_windows(T.pad_replicate(k, (pl, pr, pl, pr)), kv, win)
    vw = T.extract_windows(T.pad_replicate(v, (pl, pr, pl, pr)), kv, win)

    dh = p.dim // p.heads
    qt = _window_tokens(qw, p.heads)
    kt = _window_tokens(kw, p.heads)
    vt = _window_tokens(vw, p.heads)
    logits = T.scale(T.matmul(qt, T.transpose(kt, (0, 2, 1))), 1.0 / math.sqrt(dh))
    out = T.matmul(T.softmax(logits, axis=-1), vt)
    img = T.merge_windows(_tokens_to_windows(out, B, nh * nw, p.heads, win), nh, nw)
    return _crop(T.conv2d(img, p.wo, "pointwise_1x1"), H, W)


def transposed_attention(
    x: Tensor, p: AttentionParams, q_override: Tensor | None = None
) -> Tensor:
    """Self-attention over channel tokens: Q/K are L2-normalized along the
    flattened spatial axis and scaled by the learnable temperature."""
    if x.ndim != 4 or x.shape[1] != p.dim:
        raise ShapeError(f"expected [B,{p.dim},H,W], got {x.shape}")
    if q_override is not None and q_override.shape != x.shape:
        raise ShapeError("q_override must match the input shape")
    B, C, H, W = x.shape
    xq = x if q_override is None else q_override
    q = T.conv2d(xq, p.wq, "pointwise_1x1")
    k = T.conv2d(x, p.wk, "pointwise_1x1")
    v = T.conv2d(x, p.wv, "pointwise_1x1")
    dh = C // p.heads

    def heads_view(t):
        return T.reshape(t, (B, p.heads, dh, H * W))

    qs = l2_normalize(heads_view(q), axis=-1)
    ks = l2_normalize(heads_view(k), axis=-1)
    vs = heads_view(v)
    logits = T.mul(T.matmul(qs, T.transpose(ks, (0, 1, 3, 2))), p.temperature)
    out = T.matmul(T.softmax(logits, axis=-1), vs)
    out = T.reshape(out, (B, C, H, W))
    return T.conv2d(out, p.wo, "pointwise_1x1")


def cross_attention_mafg(stack, p: AttentionParams, w: WindowSpec) -> Tensor:
    """Reweight the deconvolution bank: the median-k image queries the
    joint key/value tokens of all M images, per spatial window.

    Returns the [1, dim, H, W] feature handed to the restoration network.
    """
    if isinstance(stack, DeconvStack):
        images, med = stack.images, stack.median_index
    else:
        raise ContractError("cross_attention_mafg expects a DeconvStack")
    if p.w_embed is None:
        raise ContractError("params need w_embed to project images")
    M = len(images)
    dtype = p.wq.dtype
    data = np.stack([im.data for im in images]).astype(dtype)
    if data.ndim != 4 or data.shape[1] != p.w_embed.shape[1]:
        raise ShapeError(f"stack shape {data.shape} does not match embedding")

    f = T.conv2d(Tensor(data), p.w_embed, "pointwise_1x1")  # [M,dim,H,W]
    win = w.window
    f, H, W = _pad_to_window_multiple(f, win)
    fq = T.narrow(f, 0, med, 1)  # [1,dim,Hp,Wp]

    q = T.conv2d(fq, p.wq, "pointwise_1x1")
    k = T.conv2d(f, p.wk, "pointwise_1x1")
    v = T.conv2d(f, p.wv, "pointwise_1x1")

    kv = w.kv_side()
    pl = (kv - win) // 2
    pr = kv - win - pl
    nh, nw = f.shape[2] // win, f.shape[3] // win
    qw = T.extract_windows(q, win, win)  # [1,L,dim,win,win]
    kw = T.extract_windows(T.pad_replicate(k, (pl, pr, pl, pr)), kv, win)
    vw = T.extract_windows(T.pad_replicate(v, (pl, pr, pl, pr)), kv, win)

    dh = p.dim // p.heads
    qt = _window_tokens(qw, p.heads)  # [L*h, win^2, dh]
    kt = _stack_tokens(kw, p.heads)  # [L*h, M*kv^2, dh]
    vt = _stack_tokens(vw, p.heads)
    logits = T.scale(T.matmul(qt, T.transpose(kt, (0, 2, 1))), 1.0 / math.sqrt(dh))
    out = T.matmul(T.softmax(logits, axis=-1), vt)
    img = T.merge_windows(_tokens_to_windows(out, 1, nh * nw, p.heads, win), nh, nw)
    return _crop(T.conv2d(img, p.wo, "pointwise_1x1"), H, W)


def enhance_query(q: Tensor, block_index: int, pool_window=3) -> Tensor:
    """Even blocks pass queries through; odd blocks keep the high-pass
    residual q - avgpool(q).  pool_window is a box side or "global"."""
    if block_index < 0:
        raise ContractError("block_index must be >= 0")
    if block_index % 2 == 0:
        return q
    if pool_window == "global":
        pooled = T.avg_pool(q, "spatial")
    else:
        pooled = T.avg_pool(q, "window", window=int(pool_window))
    return T.sub(q, pooled)
