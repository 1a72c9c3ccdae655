"""Frequency-domain deconvolution with a bank of adaptive Wiener filters.

A filter response per channel is conj(H) / (|H|^2 + penalty) where H is the
FFT of the blur kernel zero-padded to the image extents with its center tap
at the origin (no phase tilt, so inversion undoes the forward render's
circular convolution exactly).  The penalty is either a fixed constant or,
in adaptive mode, scaled down for brighter channels: k * (1 - c_I) with c_I
the channel's mean intensity of the observed image.  A bank spreads M
penalty constants geometrically over [k_min, k_max]; the middle filter of
the sorted bank is the reference output the restoration network refines.

Bins where the effective penalty and H both vanish get a zero response (the
pure inverse is singular there); a degenerate-filter warning is emitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .optics import PsfGrid, PsfKernel
from .tensor import ContractError, ShapeError, Tensor, fft2, ifft2


@dataclass
class FilterBankConfig:
    m_count: int = 13
    k_min: float = 1e-5
    k_max: float = 1e-2
    adaptive: bool = True

    def __post_init__(self):
        if self.m_count < 1:
            raise ContractError("m_count must be >= 1")
        if self.k_min <= 0 or self.k_min > self.k_max:
            raise ContractError("need 0 < k_min <= k_max")

    def k_values(self) -> np.ndarray:
        """Geometric spacing k_m = k_min * (k_max/k_min)^((m-1)/(M-1))."""
        m = self.m_count
        if m == 1:
            return np.array([self.k_min])
        e = np.arange(m) / (m - 1)
        return self.k_min * (self.k_max / self.k_min) ** e

    @property
    def median_index(self) -> int:
        return (self.m_count - 1) // 2


@dataclass
class WienerFilter:
    """Per-channel frequency response with its penalty constant."""

    response: Tensor  # [C,H,W] complex128
    k_value: float
    effective_penalty: np.ndarray  # [C], the realized k*(1-c_I) or k
    source_psf_id: str = ""


@dataclass
class DeconvStack:
    """The M deconvolved variants of one observation, sorted by k."""

    images: list  # M tensors [C,H,W]
    k_values: list
    median_index: int

    def __post_init__(self):
        if not self.images:
            raise ContractError("empty deconvolution stack")
        shape = self.images[0].shape
        if any(im.shape != shape for im in self.images):
            raise ShapeError("stack images must share extents")

    @property
    def median_image(self) -> Tensor:
        return self.images[self.median_index]

    def to_tensor(self) -> Tensor:
        return Tensor(np.stack([im.data for im in self.images]))


def channel_intensity(image: Tensor) -> np.ndarray:
    """Per-channel arithmetic mean; defined for [C,H,W] values in [0,1]."""
    d = image.data
    if d.ndim != 3 or d.size == 0:
        raise ContractError(f"expected a non-empty [C,H,W] image, got {image.shape}")
    return d.mean(axis=(1, 2)).astype(np.float64)


def pad_psf(taps: np.ndarray, extents) -> np.ndarray:
    """Zero-pad [k,k] taps to image extents with the center tap at the
    origin so the transfer function carries no phase tilt."""
    H, W = extents
    k = taps.shape[0]
    if k > H or k > W:
        raise ContractError(f"kernel extent {k} exceeds image extents {H}x{W}")
    padded = np.zeros((H, W))
    padded[:k, :k] = taps
    return np.roll(padded, (-(k // 2), -(k // 2)), axis=(0, 1))


def wiener_response(H: np.ndarray, penalty: float) -> np.ndarray:
    """conj(H)/(|H|^2 + penalty); zero penalty zeroes the null bins."""
    mag2 = (H * H.conj()).real
    if penalty > 0:
        return H.conj() / (mag2 + penalty)
    null = mag2 == 0.0
    if null.any():
        warnings.warn(
            "degenerate filter: zero penalty on a non-invertible kernel; "
            "null frequencies set to 0",
            RuntimeWarning,
        )
    out = np.zeros_like(H)
    ok = ~null
    out[ok] = H.conj()[ok] / mag2[ok]
    return out


def build_filter(
    psf: PsfKernel, image_extents, k: float, c_i=None, psf_id: str = ""
) -> WienerFilter:
    """One Wiener filter for every channel of ``psf`` at ``image_extents``.

    c_i, when given, holds per-channel mean intensities and switches on the
    adaptive penalty k*(1-c_i); otherwise the penalty is the constant k.
    """
    if c_i is None:
        if k <= 0:
            raise ContractError("k must be > 0 without intensity adaptation")
        penalties = np.full(psf.channels, float(k))
    else:
        c_arr = np.asarray(c_i, dtype=np.float64)
        if c_arr.shape != (psf.channels,):
            raise ShapeError(f"c_i must have one entry per channel, got {c_arr.shape}")
        penalties = k * (1.0 - c_arr)
    H, W = image_extents
    resp = np.empty((psf.channels, H, W), dtype=np.complex128)
    for ch in range(psf.channels):
        Hf = fft2(Tensor(pad_psf(psf.taps.data[ch], image_extents))).data
        resp[ch] = wiener_response(Hf, penalties[ch])
    return WienerFilter(Tensor(resp), float(k), penalties, psf_id)


def deconvolve(observed: Tensor, filt: WienerFilter) -> Tensor:
    """Apply the filter per channel in the frequency domain.

    Output is finite (no NaN/inf survive) but deliberately not clamped to
    [0,1]; small ringing excursions carry information downstream.
    """
    if observed.shape != filt.response.shape:
        raise ShapeError(
            f"image {observed.shape} does not match filter {filt.response.shape}"
        )
    spec = fft2(observed)
    out = ifft2(Tensor(spec.data * filt.response.data))
    return Tensor(np.nan_to_num(out.data, posinf=0.0, neginf=0.0))


def deconvolve_bank(
    observed: Tensor, psf: PsfKernel, config: FilterBankConfig
) -> DeconvStack:
    """Deconvolve once per k in the bank; adaptive mode measures c_I on the
    observed image (the only image available at inference)."""
    c_i = channel_intensity(observed) if config.adaptive else None
    extents = observed.shape[1:]
    images = []
    for k in config.k_values():
        filt = build_filter(psf, extents, float(k), c_i)
        images.append(deconvolve(observed, filt))
    return DeconvStack(images, [float(k) for k in config.k_values()], config.median_index)


def deconvolve_patchwise(
    observed: Tensor, grid: PsfGrid, config: FilterBankConfig
) -> DeconvStack:
    """Per-patch bank deconvolution for a field-varying kernel grid.

    Each patch is inverted circularly with its own cell's filters, matching
    the forward render's hard patch boundaries; c_I comes from the full
    observed image.  Patch seams of a globally blurred input are a known
    residual of this route, surfaced by the tests rather than hidden.
    """
    d = observed.data
    if d.ndim != 3:
        raise ShapeError(f"expected [C,H,W], got {observed.shape}")
    C, H, W = d.shape
    if H % grid.grid_h or W % grid.grid_w:
        raise ContractError(
            f"extents {H}x{W} not divisible by grid {grid.grid_h}x{grid.grid_w}"
        )
    ph, pw = H // grid.grid_h, W // grid.grid_w
    c_i = channel_intensity(observed) if config.adaptive else None
    ks = config.k_values()
    outs = [np.empty_like(d, dtype=np.float64) for _ in ks]
    for i in range(grid.grid_h):
        for j in range(grid.grid_w):
            patch = Tensor(d[:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw])
            kern = grid.cell(i, j)
            for m, k in enumerate(ks):
                filt = build_filter(kern, (ph, pw), float(k), c_i, psf_id=f"cell{i},{j}")
                outs[m][:, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw] = deconvolve(
                    patch, filt
                ).data
    images = [Tensor(o) for o in outs]
    return DeconvStack(images, [float(k) for k in ks], config.median_index)
