"""Full-reference quality metrics and a spectral band diagnostic."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, ShapeError, Tensor, fft2

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); identical inputs give +inf."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    x = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1-D window along both axes."""
    n = g.size
    H, W = img.shape
    rows = np.zeros((H, W - n + 1))
    for t in range(n):
        rows += g[t] * img[:, t:t + W - n + 1]
    out = np.zeros((H - n + 1, W - n + 1))
    for t in range(n):
        out += g[t] * rows[t:t + H - n + 1, :]
    return out


def _to_gray(t: Tensor) -> np.ndarray:
    d = t.data.astype(np.float64)
    if d.ndim == 3:
        return d.mean(axis=0)
    if d.ndim == 2:
        return d
    raise ShapeError(f"expected [C,H,W] or [H,W], got {t.shape}")


def ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Single-scale SSIM on the channel-mean grayscale.

    11x11 Gaussian window (sigma 1.5), C1=(0.01*peak)^2, C2=(0.03*peak)^2,
    averaged over valid windows only (no padding).
    """
    x, y = _to_gray(a), _to_gray(b)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def highband_energy(x: Tensor, cutoff_fraction: float) -> float:
    """Sum of |FFT|^2 over bins whose radial frequency exceeds
    cutoff_fraction * Nyquist, summed over channels."""
    if not 0.0 < cutoff_fraction < 1.0:
        raise ContractError("cutoff_fraction must be in (0, 1)")
    d = x.data.astype(np.float64)
    if d.ndim == 2:
        d = d[None]
    H, W = d.shape[-2:]
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.fftfreq(W)[None, :]
    mask = np.sqrt(fy**2 + fx**2) > cutoff_fraction * 0.5
    total = 0.0
    for ch in range(d.shape[0]):
        X = fft2(Tensor(d[ch])).data
        total += float(((X * X.conj()).real * mask).sum())
    return total


# ---------------------------------------------------------------------------
# reports


@dataclass
class RestorationReport:
    """Per-image and aggregate quality numbers with run provenance."""

    images: list = field(default_factory=list)  # {"id", "psnr_db", "ssim"}
    provenance: dict = field(default_factory=dict)

    def add(self, image_id: str, psnr_db: float, ssim_value: float):
        self.images.append({"id": image_id, "psnr_db": psnr_db, "ssim": ssim_value})

    @property
    def aggregate(self) -> dict:
        if not self.images:
            return {"psnr_db": math.nan, "ssim": math.nan}
        return {
            "psnr_db": float(np.mean([e["psnr_db"] for e in self.images])),
            "ssim": float(np.mean([e["ssim"] for e in self.images])),
        }

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "aggregate": self.aggregate,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        # infinite PSNR serializes as bare Infinity, which json.loads accepts
        return json.dumps(self.to_dict(), indent=2)
