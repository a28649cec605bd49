"""Full-reference image quality metrics on [0, 1] float images.

PSNR is computed jointly over the three RGB channels with MAX = 1 and a
documented 100 dB cap for identical images.  SSIM follows the original
Wang et al. formulation: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
K2 = 0.03, L = 1, valid-region averaging, mean over channels.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

__all__ = ["psnr", "ssim", "PSNR_CAP"]

PSNR_CAP = 100.0

_K1 = 0.01
_K2 = 0.03
_WINDOW_SIZE = 11
_SIGMA = 1.5


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB: 10*log10(1 / MSE)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size: int = _WINDOW_SIZE, sigma: float = _SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = _K1 ** 2
    c2 = _K2 ** 2
    mu_x = fftconvolve(x, win, mode="valid")
    mu_y = fftconvolve(y, win, mode="valid")
    sxx = fftconvolve(x * x, win, mode="valid") - mu_x ** 2
    syy = fftconvolve(y * y, win, mode="valid") - mu_y ** 2
    sxy = fftconvolve(x * y, win, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over the valid region, averaged over RGB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[0] != 3:
        raise ValueError("expected (3, H, W) images")
    if a.shape[1] < _WINDOW_SIZE or a.shape[2] < _WINDOW_SIZE:
        raise ValueError(f"image smaller than the {_WINDOW_SIZE}x{_WINDOW_SIZE} window")
    win = _gaussian_window()
    return float(np.mean([_ssim_channel(a[c], b[c], win) for c in range(3)]))
