"""Restoration network: parallel spatial/channel attention blocks whose
features are fused by learned sigmoid gates (pooled per-channel in the
encoder, per-pixel in the decoder), assembled into a U-shaped
encoder-decoder entered through the Wiener-bank cross-attention and closed
by a residual over the median-penalty deconvolution.

The toy configuration (4 levels, base dim 16, one block per level) is the
one exercised by the test suite; larger configs are expressible.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio, tensor as T
from .attention import (
    AttentionParams,
    WindowSpec,
    cross_attention_mafg,
    enhance_query,
    init_attention_params,
    spatial_attention,
    transposed_attention,
    uniform_init,
)
from .optics import PsfGrid, PsfKernel
from .tensor import ContractError, ShapeError, Tensor
from .wiener import DeconvStack, FilterBankConfig, deconvolve_bank, deconvolve_patchwise

CKPT_MAGIC = b"MLAR"
LN_EPS = 1e-5


class TrainingError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


##########################################################################
## parameter structs


@dataclass
class FusionParams:
    """Two 1x1 convs (2C -> 2C -> C) with GELU between."""

    w1: Tensor
    w2: Tensor

    def __post_init__(self):
        c2 = self.w1.shape[1]
        if self.w1.shape != (c2, c2) or self.w2.shape != (c2 // 2, c2):
            raise ShapeError("fusion weights must map 2C -> 2C -> C")


@dataclass
class GdfnParams:
    """Gated feed-forward: 1x1 expand to 2h, depthwise 3x3, gate, 1x1 back."""

    w_in: Tensor  # [2h, C]
    w_dw: Tensor  # [2h, 3, 3]
    w_out: Tensor  # [C, h]


@dataclass
class StafBlockParams:
    sa: AttentionParams
    sa_window: WindowSpec
    ta: AttentionParams
    fusion: FusionParams
    ffn: GdfnParams
    norm_attn: Tensor
    norm_ffn: Tensor
    stage: str  # encoder | decoder
    block_index: int
    pool_window: int | str = 3

    def __post_init__(self):
        if self.stage not in ("encoder", "decoder"):
            raise ContractError(f"unknown stage {self.stage!r}")

    def named(self, prefix: str) -> dict:
        out = {}
        out.update(self.sa.named(f"{prefix}.sa"))
        out.update(self.ta.named(f"{prefix}.ta"))
        out[f"{prefix}.fuse.w1"] = self.fusion.w1
        out[f"{prefix}.fuse.w2"] = self.fusion.w2
        out[f"{prefix}.ffn.w_in"] = self.ffn.w_in
        out[f"{prefix}.ffn.w_dw"] = self.ffn.w_dw
        out[f"{prefix}.ffn.w_out"] = self.ffn.w_out
        out[f"{prefix}.norm_attn.w"] = self.norm_attn
        out[f"{prefix}.norm_ffn.w"] = self.norm_ffn
        return out


@dataclass
class NetworkConfig:
    levels: int = 4
    base_dim: int = 16
    blocks_per_level: list = field(default_factory=lambda: [1, 1, 1, 1])
    heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    window: WindowSpec = field(default_factory=lambda: WindowSpec(8, 0.5))
    pool_window: int | str = 3
    ffn_expansion: float = 2.0
    mafg: FilterBankConfig = field(default_factory=FilterBankConfig)
    mafg_dim: int = 32
    mafg_heads: int = 2
    mafg_window: WindowSpec = field(default_factory=lambda: WindowSpec(8, 0.5))

    def __post_init__(self):
        if self.levels < 1:
            raise ContractError("levels must be >= 1")
        if len(self.blocks_per_level) != self.levels:
            raise ContractError("blocks_per_level must list one count per level")
        if len(self.heads) != self.levels:
            raise ContractError("heads must list one count per level")

    def dim_at(self, level: int) -> int:
        return self.base_dim * (2**level)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_dim": self.base_dim,
            "blocks_per_level": list(self.blocks_per_level),
            "heads": list(self.heads),
            "window": {"window": self.window.window, "overlap_ratio": self.window.overlap_ratio},
            "pool_window": self.pool_window,
            "ffn_expansion": self.ffn_expansion,
            "mafg": {
                "m_count": self.mafg.m_count,
                "k_min": self.mafg.k_min,
                "k_max": self.mafg.k_max,
                "adaptive": self.mafg.adaptive,
            },
            "mafg_dim": self.mafg_dim,
            "mafg_heads": self.mafg_heads,
            "mafg_window": {
                "window": self.mafg_window.window,
                "overlap_ratio": self.mafg_window.overlap_ratio,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = {
            "levels", "base_dim", "blocks_per_level", "heads", "window",
            "pool_window", "ffn_expansion", "mafg", "mafg_dim", "mafg_heads",
            "mafg_window",
        }
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "window" in kw:
            kw["window"] = WindowSpec(**kw["window"])
        if "mafg_window" in kw:
            kw["mafg_window"] = WindowSpec(**kw["mafg_window"])
        if "mafg" in kw:
            mk = set(kw["mafg"]) - {"m_count", "k_min", "k_max", "adaptive"}
            if mk:
                raise ContractError(f"unknown filter bank keys: {sorted(mk)}")
            kw["mafg"] = FilterBankConfig(**kw["mafg"])
        return cls(**kw)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class Checkpoint:
    params: dict  # name -> Tensor
    config: NetworkConfig
    step: int = 0
    rng_state: dict | None = None


##########################################################################
## block ops


def layer_norm(x: Tensor, w: Tensor) -> Tensor:
    """Bias-free per-pixel norm over channels: x / sqrt(var_c + eps) * w."""
    mu = T.mean(x, axis=1, keepdims=True)
    var = T.mean(T.square(T.sub(x, mu)), axis=1, keepdims=True)
    wr = T.reshape(w, (1, w.shape[0], 1, 1))
    return T.mul(T.div(x, T.sqrt(T.add(var, LN_EPS))), wr)


def gdfn_forward(x: Tensor, p: GdfnParams) -> Tensor:
    h = T.conv2d(x, p.w_in, "pointwise_1x1")
    h = T.conv2d(h, p.w_dw, "depthwise_3x3")
    hidden = p.w_out.shape[1]
    gate = T.narrow(h, 1, 0, hidden)
    value = T.narrow(h, 1, hidden, hidden)
    return T.conv2d(T.mul(T.gelu(gate), value), p.w_out, "pointwise_1x1")


def staf_fuse(f_sa: Tensor, f_ta: Tensor, params, stage: str) -> Tensor:
    """Gate the two attention features into a convex combination.

    The gate map A comes from two 1x1 convs with GELU on the channel
    concat; the encoder squeezes it spatially to [B,C,1,1], the decoder
    across channels to [B,1,H,W], and sigmoid(A) weights f_sa against f_ta.
    """
    fusion = params.fusion if isinstance(params, StafBlockParams) else params
    if f_sa.shape != f_ta.shape:
        raise ShapeError(f"feature shapes differ: {f_sa.shape} vs {f_ta.shape}")
    if stage not in ("encoder", "decoder"):
        raise ContractError(f"unknown stage {stage!r}")
    cat = T.concat([f_sa, f_ta], axis=1)
    a = T.conv2d(T.gelu(T.conv2d(cat, fusion.w1, "pointwise_1x1")), fusion.w2, "pointwise_1x1")
    pooled = T.avg_pool(a, "spatial" if stage == "encoder" else "channel")
    gate = T.sigmoid(pooled)
    return T.add(T.mul(f_sa, gate), T.mul(f_ta, T.sub(1.0, gate)))


def staf_block_forward(x: Tensor, p: StafBlockParams) -> Tensor:
    nx = layer_norm(x, p.norm_attn)
    q_override = None
    if p.stage == "decoder" and p.block_index % 2 == 1:
        q_override = enhance_query(nx, p.block_index, p.pool_window)
    f_sa = spatial_attention(nx, p.sa, p.sa_window, q_override=q_override)
    f_ta = transposed_attention(nx, p.ta, q_override=q_override)
    y = T.add(x, staf_fuse(f_sa, f_ta, p.fusion, p.stage))
    return T.add(y, gdfn_forward(layer_norm(y, p.norm_ffn), p.ffn))


##########################################################################
## model assembly


def _init_block(rng, dim, heads, window, stage, block_index, pool_window, expansion, dtype):
    hidden = int(dim * expansion)
    return StafBlockParams(
        sa=init_attention_params(rng, dim, heads, dtype=dtype),
        sa_window=window,
        ta=init_attention_params(rng, dim, heads, dtype=dtype),
        fusion=FusionParams(
            w1=uniform_init(rng, (2 * dim, 2 * dim), 2 * dim, dtype),
            w2=uniform_init(rng, (dim, 2 * dim), 2 * dim, dtype),
        ),
        ffn=GdfnParams(
            w_in=uniform_init(rng, (2 * hidden, dim), dim, dtype),
            w_dw=uniform_init(rng, (2 * hidden, 3, 3), 9, dtype),
            w_out=uniform_init(rng, (dim, hidden), hidden, dtype),
        ),
        norm_attn=Tensor(np.ones(dim), dtype=dtype, requires_grad=True),
        norm_ffn=Tensor(np.ones(dim), dtype=dtype, requires_grad=True),
        stage=stage,
        block_index=block_index,
        pool_window=pool_window,
    )


class RestorationModel:
    """Parameter container plus the forward pass from a deconvolution stack."""

    def __init__(self, cfg: NetworkConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        L = cfg.levels
        self.mafg_attn = init_attention_params(
            rng, cfg.mafg_dim, cfg.mafg_heads, embed_channels=3, dtype=dtype
        )
        self.stem = uniform_init(rng, (cfg.base_dim, cfg.mafg_dim), cfg.mafg_dim, dtype)
        self.enc, self.down = [], []
        for lvl in range(L - 1):
            dim = cfg.dim_at(lvl)
            self.enc.append([
                _init_block(rng, dim, cfg.heads[lvl], cfg.window, "encoder", b,
                            cfg.pool_window, cfg.ffn_expansion, dtype)
                for b in range(cfg.blocks_per_level[lvl])
            ])
            self.down.append(uniform_init(rng, (2 * dim, 4 * dim), 4 * dim, dtype))
        top = cfg.dim_at(L - 1)
        self.latent = [
            _init_block(rng, top, cfg.heads[L - 1], cfg.window, "encoder", b,
                        cfg.pool_window, cfg.ffn_expansion, dtype)
            for b in range(cfg.blocks_per_level[L - 1])
        ]
        self.up, self.skip, self.dec = {}, {}, {}
        for lvl in reversed(range(L - 1)):
            d_in = cfg.dim_at(lvl + 1)
            self.up[lvl] = uniform_init(rng, (2 * d_in, d_in), d_in, dtype)
            self.skip[lvl] = uniform_init(rng, (d_in // 2, d_in), d_in, dtype)
            self.dec[lvl] = [
                _init_block(rng, cfg.dim_at(lvl), cfg.heads[lvl], cfg.window, "decoder",
                            b, cfg.pool_window, cfg.ffn_expansion, dtype)
                for b in range(cfg.blocks_per_level[lvl])
            ]
        self.head = uniform_init(rng, (3, cfg.base_dim), cfg.base_dim, dtype)
        self.params = self._collect()

    def _collect(self) -> dict:
        out = {}
        out.update(self.mafg_attn.named("mafg"))
        out["stem.w"] = self.stem
        for lvl, blocks in enumerate(self.enc):
            for b, blk in enumerate(blocks):
                out.update(blk.named(f"enc{lvl}.b{b}"))
            out[f"down{lvl}.w"] = self.down[lvl]
        for b, blk in enumerate(self.latent):
            out.update(blk.named(f"lat.b{b}"))
        for lvl in sorted(self.dec):
            out[f"up{lvl}.w"] = self.up[lvl]
            out[f"skip{lvl}.w"] = self.skip[lvl]
            for b, blk in enumerate(self.dec[lvl]):
                out.update(blk.named(f"dec{lvl}.b{b}"))
        out["head.w"] = self.head
        return out

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "RestorationModel":
        dtype = next(iter(ckpt.params.values())).dtype
        rng = np.random.default_rng(0)
        model = cls(ckpt.config, rng, dtype)
        if set(model.params) != set(ckpt.params):
            missing = set(model.params) ^ set(ckpt.params)
            raise ContractError(f"checkpoint does not match config, offenders: {sorted(missing)[:6]}")
        for name, t in ckpt.params.items():
            if t.shape != model.params[name].shape:
                raise ContractError(f"parameter {name} has shape {t.shape}, expected {model.params[name].shape}")
            model.params[name].data = t.data.astype(dtype).copy()
        return model

    def checkpoint(self, step=0, rng_state=None) -> Checkpoint:
        return Checkpoint(self.params, self.cfg, step, rng_state)

    # -- forward ----------------------------------------------------------

    def forward_from_stack(self, stack: DeconvStack) -> Tensor:
        cfg = self.cfg
        C, H, W = stack.images[0].shape
        mult = 2 ** (cfg.levels - 1)
        ph = (mult - H % mult) % mult
        pw = (mult - W % mult) % mult
        if ph or pw:
            padded = DeconvStack(
                [
                    Tensor(np.pad(im.data, ((0, 0), (0, ph), (0, pw)), mode="reflect"))
                    for im in stack.images
                ],
                stack.k_values,
                stack.median_index,
            )
        else:
            padded = stack
        Hp, Wp = H + ph, W + pw
        if min(Hp, Wp) // mult < cfg.window.window:
            raise ContractError(
                f"coarsest extents {Hp // mult}x{Wp // mult} fall below window "
                f"{cfg.window.window}; use smaller windows or fewer levels"
            )

        feat = cross_attention_mafg(padded, self.mafg_attn, cfg.mafg_window)
        x = T.conv2d(feat, self.stem, "pointwise_1x1")
        skips = []
        for lvl in range(cfg.levels - 1):
            for blk in self.enc[lvl]:
                x = staf_block_forward(x, blk)
            skips.append(x)
            x = T.conv2d(T.pixel_unshuffle(x, 2), self.down[lvl], "pointwise_1x1")
        for blk in self.latent:
            x = staf_block_forward(x, blk)
        for lvl in reversed(range(cfg.levels - 1)):
            x = T.pixel_shuffle(T.conv2d(x, self.up[lvl], "pointwise_1x1"), 2)
            x = T.conv2d(T.concat([x, skips[lvl]], axis=1), self.skip[lvl], "pointwise_1x1")
            for blk in self.dec[lvl]:
                x = staf_block_forward(x, blk)
        residual = T.conv2d(x, self.head, "pointwise_1x1")
        median = Tensor(padded.median_image.data.astype(self.dtype)[None])
        out = T.add(residual, median)
        if ph or pw:
            out = T.narrow(out, 2, 0, H)
            out = T.narrow(out, 3, 0, W)
        return T.reshape(out, (C, H, W))


def init_network(cfg: NetworkConfig, seed: int, dtype=np.float32) -> Checkpoint:
    rng = np.random.Generator(np.random.Philox(seed))
    model = RestorationModel(cfg, rng, dtype)
    return model.checkpoint(step=0, rng_state=_jsonable(rng.bit_generator.state))


def deconvolve_for_network(observed: Tensor, psf_source, bank: FilterBankConfig) -> DeconvStack:
    """PsfGrid inputs get per-patch inversion, a bare kernel a global one."""
    if isinstance(psf_source, PsfGrid):
        return deconvolve_patchwise(observed, psf_source, bank)
    if isinstance(psf_source, PsfKernel):
        return deconvolve_bank(observed, psf_source, bank)
    raise ContractError("psf_source must be a PsfGrid or PsfKernel")


def network_forward(observed: Tensor, psf_source, cfg: NetworkConfig, ckpt: Checkpoint) -> Tensor:
    """Full pipeline: bank deconvolution, cross-attention entry, U-shaped
    refinement, residual over the median deconvolution."""
    if cfg.to_dict() != ckpt.config.to_dict():
        raise ContractError(
            f"config/checkpoint mismatch: config {cfg.digest()} vs checkpoint {ckpt.config.digest()}"
        )
    model = RestorationModel.from_checkpoint(ckpt)
    stack = deconvolve_for_network(observed, psf_source, cfg.mafg)
    with T.no_grad():
        return model.forward_from_stack(stack)


##########################################################################
## training


class Adam:
    def __init__(self, params: dict, lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            p.data = (p.data - self.lr * update).astype(p.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def train_toy(pairs, cfg: NetworkConfig, steps: int, lr: float, seed: int, psf_source=None):
    """Overfit-scale training: mean absolute error, Adam, deterministic
    given the seed.  Returns (Checkpoint, per-step loss list).

    pairs is a list of (clean, observed) [C,H,W] tensors with shared
    extents; psf_source drives the bank deconvolution of each observation
    (the deconvolved stacks are precomputed, the bank has no learnable
    state).
    """
    if not pairs:
        raise ContractError("need at least one training pair")
    extents = pairs[0][0].shape
    if any(c.shape != extents or o.shape != extents for c, o in pairs):
        raise ContractError("all training pairs must share extents")
    if psf_source is None:
        raise ContractError("training needs the blur kernels (psf_source)")

    rng = np.random.Generator(np.random.Philox(seed))
    model = RestorationModel(cfg, rng, np.float32)
    stacks = [deconvolve_for_network(obs, psf_source, cfg.mafg) for _, obs in pairs]
    targets = [Tensor(clean.data.astype(np.float32)) for clean, _ in pairs]
    opt = Adam(model.params, lr)
    losses = []
    for step in range(steps):
        idx = int(rng.integers(len(pairs)))
        T.reset_tape()
        opt.zero_grad()
        pred = model.forward_from_stack(stacks[idx])
        loss = T.mean(T.absolute(T.sub(pred, targets[idx])))
        value = float(loss.item())
        if not np.isfinite(value):
            raise TrainingError(f"loss diverged at step {step}", step)
        T.backward(loss)
        opt.step()
        losses.append(value)
    ckpt = model.checkpoint(step=steps, rng_state=_jsonable(rng.bit_generator.state))
    return ckpt, losses


##########################################################################
## checkpoint archive: u32 manifest length, manifest JSON, then one MLTN
## blob per parameter at the recorded offsets


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def save_checkpoint(path, ckpt: Checkpoint):
    blobs = {}
    offset = 0
    order = sorted(ckpt.params)
    for name in order:
        raw = fileio.tensor_to_bytes(ckpt.params[name])
        blobs[name] = (offset, len(raw), raw)
        offset += len(raw)
    manifest = {
        "format": 1,
        "params": {
            name: {
                "offset": blobs[name][0],
                "length": blobs[name][1],
                "shape": list(ckpt.params[name].shape),
                "dtype": str(ckpt.params[name].dtype),
            }
            for name in order
        },
        "config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "rng_state": _jsonable(ckpt.rng_state),
    }
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", len(mbytes)))
        f.write(mbytes)
        for name in order:
            f.write(blobs[name][2])


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ContractError("not a checkpoint archive")
    (mlen,) = struct.unpack_from("<I", raw, 4)
    manifest = json.loads(raw[8:8 + mlen])
    base = 8 + mlen
    params = {}
    for name, entry in manifest["params"].items():
        blob = raw[base + entry["offset"]: base + entry["offset"] + entry["length"]]
        t = fileio.tensor_from_bytes(blob)
        t.requires_grad = True
        params[name] = t
    return Checkpoint(
        params=params,
        config=NetworkConfig.from_dict(manifest["config"]),
        step=manifest["step"],
        rng_state=manifest.get("rng_state"),
    )
