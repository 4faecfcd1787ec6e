# evaluation/metrics.py

import math

import numpy as np

# Stand-in written to CSV for an infinite PSNR (identical images).
PSNR_CAP = 99.0


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    x, ref = _pair(x, ref)
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def capped(value: float, cap: float = PSNR_CAP) -> float:
    return min(value, cap)


def nrmse(x, ref) -> float:
    """||x - ref|| / ||ref||."""
    x, ref = _pair(x, ref)
    norm = float(np.linalg.norm(ref))
    if norm == 0.0:
        raise ValueError("nrmse is undefined for an all-zero reference image")
    return float(np.linalg.norm(x - ref)) / norm


def _spot_excess(truth, spot, circle):
    """Circle intensity around the spot and the spot's total excess over it."""
    truth = np.asarray(truth, dtype=np.float64)
    spot = np.asarray(spot, dtype=bool)
    rim = np.asarray(circle, dtype=bool) & ~spot
    if spot.shape != truth.shape or rim.shape != truth.shape:
        raise ValueError(f"masks must match the image shape {truth.shape}")
    if not spot.any() or not rim.any():
        raise ValueError("spot capture needs a non-empty spot inside a larger circle")
    base = float(truth[rim].mean())
    excess = float((truth[spot] - base).sum())
    if excess <= 0:
        raise ValueError(f"the spot is not brighter than its circle (excess {excess:g})")
    return base, excess


def spot_capture(x, truth, spot, circle) -> float:
    """
    Share of the bright spot's excess over the surrounding circle intensity
    that the reconstruction x reproduces on the spot pixels: 1 for a perfect
    spot, 0 for a reconstruction that paints the spot at circle level.
    """
    x, truth = _pair(x, truth)
    base, excess = _spot_excess(truth, spot, circle)
    return float((x[np.asarray(spot, dtype=bool)] - base).sum()) / excess


def deviation_capture(u, truth, spot, circle) -> float:
    """Share of the spot's excess carried by a deviation image u (x = G(z) + u)."""
    u, truth = _pair(u, truth)
    _, excess = _spot_excess(truth, spot, circle)
    return float(u[np.asarray(spot, dtype=bool)].sum()) / excess
