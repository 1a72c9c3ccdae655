"""Forward imaging model for a flat lens with field-dependent blur.

An image is split into a grid of patches and each patch is convolved with
that grid cell's per-channel kernel (hard patch boundaries by default), then
sensor noise is applied once to the whole frame.  Kernels are synthesized as
a normalized mixture of per-channel defocus discs (chromatic proxy, radius
grows toward the field edge) and a radially oriented smear (coma proxy,
length grows with field angle).  Severity 0 collapses every cell to a Dirac
kernel, making the render an exact identity up to noise.

Convolution convention: circular, kernel center at the anchor, i.e.
out[i,j] = sum_uv k[u,v] * x[(i-(u-c)) mod H, (j-(v-c)) mod W].  The Wiener
module pads kernels with the same centering so inversion introduces no
half-kernel shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .tensor import ContractError, ShapeError, Tensor

MAX_FIELD_ANGLE_DEG = 20.0

# per-channel defocus base radii in pixels at severity 1; red focuses
# tightest, blue worst (chromatic proxy)
_CHANNEL_RADII = (0.8, 1.2, 1.6)


@dataclass
class PsfKernel:
    """One grid cell's blur: non-negative [C,k,k] taps, each channel
    normalized to unit sum."""

    taps: Tensor

    def __post_init__(self):
        t = self.taps.data
        if t.ndim != 3 or t.shape[1] != t.shape[2] or t.shape[1] % 2 == 0:
            raise ContractError(f"kernel taps must be [C,k,k] with odd k, got {t.shape}")
        if (t < 0).any():
            raise ContractError("kernel taps must be non-negative")
        sums = t.sum(axis=(1, 2))
        if np.abs(sums - 1.0).max() > 1e-6:
            raise ContractError("each kernel channel must sum to 1")

    @property
    def channels(self):
        return self.taps.shape[0]

    @property
    def extent(self):
        return self.taps.shape[1]

    def is_dirac(self) -> bool:
        t = self.taps.data
        c = self.extent // 2
        center = t[:, c, c]
        return bool((center == 1.0).all() and (t.sum(axis=(1, 2)) == center).all())

    def second_moment(self) -> np.ndarray:
        """Mean squared distance of mass from the geometric center, per channel."""
        k = self.extent
        c = k // 2
        ii, jj = np.meshgrid(np.arange(k) - c, np.arange(k) - c, indexing="ij")
        r2 = (ii**2 + jj**2).astype(np.float64)
        return (self.taps.data * r2).sum(axis=(1, 2))


@dataclass
class PsfGrid:
    """Field-varying blur: one kernel per grid cell plus the field angle map."""

    grid_h: int
    grid_w: int
    kernels: list  # row-major list of PsfKernel, length grid_h*grid_w
    field_angle_map: np.ndarray  # [grid_h, grid_w] degrees
    severity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.kernels) != self.grid_h * self.grid_w:
            raise ContractError("kernel count does not match grid extents")
        k0 = self.kernels[0]
        if any(
            k.extent != k0.extent or k.channels != k0.channels for k in self.kernels
        ):
            raise ContractError("all kernels must share extent and channel count")

    def cell(self, i: int, j: int) -> PsfKernel:
        return self.kernels[i * self.grid_w + j]

    @property
    def kernel_extent(self):
        return self.kernels[0].extent

    @property
    def channels(self):
        return self.kernels[0].channels

    def to_tensor(self) -> Tensor:
        k, c = self.kernel_extent, self.channels
        out = np.empty((self.grid_h, self.grid_w, c, k, k), dtype=np.float64)
        for i in range(self.grid_h):
            for j in range(self.grid_w):
                out[i, j] = self.cell(i, j).taps.data
        return Tensor(out)


@dataclass
class NoiseModel:
    """Sensor noise: signal-scaled shot noise plus additive read noise,
    y = sigma_p * Poisson(x / sigma_p) + N(0, sigma_g^2), clamped at 0."""

    sigma_g: float = 1e-5
    sigma_p: float = 4e-5
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_g < 0:
            raise ContractError("sigma_g must be >= 0")
        if self.sigma_p <= 0:
            raise ContractError("sigma_p must be > 0")


def apply_noise(x: Tensor, model: NoiseModel) -> Tensor:
    """Seeded noise realization; identical (image, model, seed) gives
    identical bits.  Input values must be non-negative."""
    d = x.data.astype(np.float64)
    if (d < 0).any():
        raise ContractError("noise model defined for non-negative inputs")
    rng = np.random.Generator(np.random.Philox(model.rng_seed))
    shot = model.sigma_p * rng.poisson(d / model.sigma_p).astype(np.float64)
    read = rng.normal(0.0, model.sigma_g, size=d.shape) if model.sigma_g > 0 else 0.0
    return Tensor(np.maximum(shot + read, 0.0).astype(x.dtype))


# ---------------------------------------------------------------------------
# kernel synthesis


def _soft_disc(k: int, radius: float) -> np.ndarray:
    c = k // 2
    ii, jj = np.meshgrid(np.arange(k) - c, np.arange(k) - c, indexing="ij")
    dist = np.sqrt(ii**2 + jj**2)
    taps = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    return taps / taps.sum()


def _oriented_gaussian(k: int, sigma_long: float, sigma_perp: float, theta: float):
    if sigma_long < 1e-6:
        taps = np.zeros((k, k))
        taps[k // 2, k // 2] = 1.0
        return taps
    c = k // 2
    ii, jj = np.meshgrid(np.arange(k) - c, np.arange(k) - c, indexing="ij")
    u = np.cos(theta) * jj + np.sin(theta) * ii
    v = -np.sin(theta) * jj + np.cos(theta) * ii
    sp = max(sigma_perp, 0.35)
    taps = np.exp(-0.5 * (u**2 / sigma_long**2 + v**2 / sp**2))
    return taps / taps.sum()


def synth_psf_grid(seed: int, grid, kernel_extent: int, severity: float) -> PsfGrid:
    """Deterministic field-varying kernel grid.

    Each cell mixes per-channel defocus discs (radius grows with field
    angle and differs per channel) with a radially oriented smear whose
    length grows with field angle.  severity scales every width, so
    severity 0 yields a Dirac kernel in every cell.
    """
    gh, gw = grid
    if gh < 1 or gw < 1:
        raise ContractError("grid extents must be >= 1")
    k = int(kernel_extent)
    if k % 2 == 0:
        raise ContractError("kernel extent must be odd")
    if severity < 0:
        raise ContractError("severity must be >= 0")

    rng = np.random.Generator(np.random.Philox(seed))
    cy, cx = (gh - 1) / 2.0, (gw - 1) / 2.0
    r_max = max(np.hypot(cy, cx), 1e-12)

    kernels = []
    angles = np.zeros((gh, gw))
    for i in range(gh):
        for j in range(gw):
            dy, dx = i - cy, j - cx
            r_norm = np.hypot(dy, dx) / r_max if r_max > 1e-9 else 0.0
            angles[i, j] = MAX_FIELD_ANGLE_DEG * r_norm
            theta = np.arctan2(dy, dx)
            jit = rng.uniform(0.9, 1.1, size=4)

            growth = 0.35 + 0.65 * r_norm
            smear_len = 2.5 * r_norm * severity * jit[3]
            smear_w = min(0.6, 0.6 * r_norm)
            taps = np.empty((3, k, k))
            for ch in range(3):
                radius = _CHANNEL_RADII[ch] * growth * severity * jit[ch]
                disc = _soft_disc(k, radius)
                smear = _oriented_gaussian(k, smear_len, 0.35 * severity, theta)
                ch_taps = (1.0 - smear_w) * disc + smear_w * smear
                taps[ch] = ch_taps / ch_taps.sum()
            kernels.append(PsfKernel(Tensor(taps)))
    return PsfGrid(gh, gw, kernels, angles, severity=float(severity), seed=int(seed))


# ---------------------------------------------------------------------------
# rendering


def _circular_conv(patch: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Exact circular convolution by tap accumulation (zero taps skipped,
    so a Dirac kernel reproduces the input bit for bit)."""
    k = taps.shape[0]
    c = k // 2
    out = np.zeros_like(patch)
    for u in range(k):
        for v in range(k):
            w = taps[u, v]
            if w == 0.0:
                continue
            out += w * np.roll(patch, (u - c, v - c), axis=(0, 1))
    return out


def _replicate_conv(patch: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = taps.shape[0]
    c = k // 2
    H, W = patch.shape
    xp = np.pad(patch, c, mode="edge")
    out = np.zeros_like(patch)
    for u in range(k):
        for v in range(k):
            w = taps[u, v]
            if w == 0.0:
                continue
            # out[i,j] += w * x[i-(u-c), j-(v-c)] on the padded domain
            out += w * xp[c - (u - c):c - (u - c) + H, c - (v - c):c - (v - c) + W]
    return out


def _pad_to_multiple(img: np.ndarray, gh: int, gw: int):
    C, H, W = img.shape
    ph = (gh - H % gh) % gh
    pw = (gw - W % gw) % gw
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return img, H, W


def render_aberrated(
    clean: Tensor,
    grid: PsfGrid,
    noise: NoiseModel | None,
    boundary: str = "circular",
    blend_overlap: int = 0,
) -> Tensor:
    """Patchwise spatially varying blur plus one noise pass.

    Image extents not divisible by the grid are edge-padded and cropped
    back.  boundary picks the per-patch convolution rule.  blend_overlap>0
    replaces the default hard patch boundaries with a linear cross-fade
    over that many pixels (a fidelity extension, off by default).
    """
    if boundary not in ("circular", "replicate"):
        raise ContractError(f"unknown boundary rule {boundary!r}")
    img = clean.data.astype(np.float64, copy=False)
    if img.ndim != 3:
        raise ShapeError(f"expected [C,H,W] image, got {clean.shape}")
    if img.shape[0] != grid.channels:
        raise ShapeError(
            f"image has {img.shape[0]} channels, kernels have {grid.channels}"
        )
    img, H0, W0 = _pad_to_multiple(img, grid.grid_h, grid.grid_w)
    C, H, W = img.shape
    ph, pw = H // grid.grid_h, W // grid.grid_w
    if grid.kernel_extent > min(ph, pw):
        raise ContractError(
            f"kernel extent {grid.kernel_extent} exceeds patch extents {ph}x{pw}"
        )
    conv = _circular_conv if boundary == "circular" else _replicate_conv

    if blend_overlap == 0:
        out = np.empty_like(img)
        for i in range(grid.grid_h):
            for j in range(grid.grid_w):
                taps = grid.cell(i, j).taps.data
                for ch in range(C):
                    out[ch, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw] = conv(
                        img[ch, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw], taps[ch]
                    )
    else:
        out = _render_blended(img, grid, ph, pw, conv, int(blend_overlap))

    result = Tensor(out[:, :H0, :W0].astype(clean.dtype))
    if noise is not None:
        result = apply_noise(result, noise)
    return result


def _render_blended(img, grid, ph, pw, conv, ov):
    """Cross-faded patch composition: each patch is rendered on a region
    expanded by ``ov`` pixels and accumulated under a linear ramp."""
    C, H, W = img.shape
    acc = np.zeros_like(img)
    wsum = np.zeros((H, W))

    def ramp(n, lo_open, hi_open):
        w = np.ones(n)
        if lo_open:
            w[:ov] = (np.arange(ov) + 1.0) / (ov + 1.0)
        if hi_open:
            w[n - ov:] = ((np.arange(ov) + 1.0) / (ov + 1.0))[::-1]
        return w

    for i in range(grid.grid_h):
        for j in range(grid.grid_w):
            t0, t1 = max(i * ph - ov, 0), min((i + 1) * ph + ov, H)
            l0, l1 = max(j * pw - ov, 0), min((j + 1) * pw + ov, W)
            wy = ramp(t1 - t0, t0 > 0, t1 < H)
            wx = ramp(l1 - l0, l0 > 0, l1 < W)
            wmat = np.outer(wy, wx)
            taps = grid.cell(i, j).taps.data
            for ch in range(C):
                acc[ch, t0:t1, l0:l1] += wmat * conv(img[ch, t0:t1, l0:l1], taps[ch])
            wsum[t0:t1, l0:l1] += wmat
    return acc / wsum[None]


# ---------------------------------------------------------------------------
# grid files: MLTN tensor [gh, gw, C, k, k] plus a JSON sidecar


def save_psf_grid(path, grid: PsfGrid):
    path = Path(path)
    fileio.save_tensor(path, grid.to_tensor())
    sidecar = {
        "grid": [grid.grid_h, grid.grid_w],
        "kernel_extent": grid.kernel_extent,
        "severity": grid.severity,
        "seed": grid.seed,
        "field_angle_map": grid.field_angle_map.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_psf_grid(path) -> PsfGrid:
    path = Path(path)
    t = fileio.load_tensor(path)
    if t.ndim != 5:
        raise ContractError(f"PSF grid tensor must be rank 5, got {t.ndim}")
    meta = json.loads(path.with_suffix(".json").read_text())
    gh, gw = t.shape[0], t.shape[1]
    kernels = [
        PsfKernel(Tensor(t.data[i, j])) for i in range(gh) for j in range(gw)
    ]
    return PsfGrid(
        gh,
        gw,
        kernels,
        np.asarray(meta["field_angle_map"], dtype=np.float64),
        severity=float(meta["severity"]),
        seed=int(meta["seed"]),
    )
