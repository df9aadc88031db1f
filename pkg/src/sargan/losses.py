"""Hybrid reconstruction loss: histogram distance plus weighted per-pixel MSE.

The histogram term needs gradients, so next to the exact counting histogram
there is a soft variant: each pixel splits unit mass linearly between its two
nearest bin centers, with a sharpness factor that steepens the split toward
hard assignment.  The split is a partition of unity, so soft counts always
sum to the pixel count exactly.

Loss targets (the first argument of the pairwise losses) are treated as
constants; gradients flow only through the reconstruction argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _node, square, tmean, tsum, mul, sub, add


@dataclass
class LossConfig:
    omega: float = 0.001
    n_bins: int = 64
    sharpness: float = 1.0
    value_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.value_range
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.sharpness <= 0:
            raise ValueError(f"sharpness must be > 0, got {self.sharpness}")
        if not lo < hi:
            raise ValueError(f"value_range must satisfy lo < hi, got {self.value_range}")


def _as_batch(values: np.ndarray) -> np.ndarray:
    """Flatten to [n_images, n_pixels]: leading axis is the batch for rank>=3."""
    if values.size == 0:
        raise ValueError("histogram of an empty image")
    if values.ndim >= 3:
        return values.reshape(values.shape[0], -1)
    return values.reshape(1, -1)


def hard_histogram(image, n_bins: int, value_range: tuple[float, float]) -> np.ndarray:
    """Exact per-bin pixel counts; evaluation/oracle use only (no gradients).

    Uniform bins over ``value_range`` with the last bin right-closed; values
    outside the range are clamped into the boundary bins.  Returns int64
    counts of shape [n_bins] (or [n, n_bins] for batched input).
    """
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    lo, hi = value_range
    values = np.asarray(getattr(image, "data", image), dtype=np.float64)
    batch = _as_batch(values)
    width = (hi - lo) / n_bins
    idx = np.floor((np.clip(batch, lo, hi) - lo) / width).astype(np.int64)
    np.clip(idx, 0, n_bins - 1, out=idx)
    n, pix = batch.shape
    offsets = np.arange(n, dtype=np.int64)[:, None] * n_bins
    counts = np.bincount((idx + offsets).ravel(), minlength=n * n_bins)
    counts = counts.reshape(n, n_bins)
    return counts[0] if values.ndim < 3 else counts


def soft_histogram(image, cfg: LossConfig) -> Tensor:
    """Differentiable histogram with the same bin layout as the exact one.

    A pixel between bin centers c_j and c_{j+1} contributes
    clip(0.5 - sharpness*(t - 0.5), 0, 1) to bin j and the complement to
    bin j+1, where t is its fractional position.  Pixels beyond the first or
    last center assign their full mass to the boundary bin.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.data.size == 0:
        raise ValueError("histogram of an empty image")
    lo, hi = cfg.value_range
    nb = cfg.n_bins
    s = cfg.sharpness
    dtype = x.data.dtype
    batch = _as_batch(x.data)
    n, pix = batch.shape
    width = (hi - lo) / nb

    u = (np.clip(batch.astype(np.float64), lo, hi) - lo) / width - 0.5
    j = np.floor(u).astype(np.int64)
    t = u - j
    g_raw = 0.5 - s * (t - 0.5)
    g = np.clip(g_raw, 0.0, 1.0)

    low_edge = j < 0
    high_edge = j == nb - 1
    interior = ~(low_edge | high_edge)
    mass_left = np.where(interior, g, np.where(low_edge, 0.0, 1.0))
    mass_right = 1.0 - mass_left
    idx_left = np.clip(j, 0, nb - 1)
    idx_right = np.clip(j + 1, 0, nb - 1)

    offsets = np.arange(n, dtype=np.int64)[:, None] * nb
    counts = np.bincount((idx_left + offsets).ravel(), weights=mass_left.ravel(),
                         minlength=n * nb)
    counts += np.bincount((idx_right + offsets).ravel(), weights=mass_right.ravel(),
                          minlength=n * nb)
    counts = counts.reshape(n, nb)
    out = counts if x.data.ndim >= 3 else counts[0]

    active = interior & (g_raw > 0.0) & (g_raw < 1.0)
    slope = s / width
    rows = np.arange(n, dtype=np.int64)[:, None]
    in_shape = x.data.shape

    def bw(gout):
        go = gout.reshape(n, nb)
        dv = slope * (go[rows, idx_right] - go[rows, idx_left]) * active
        return (dv.reshape(in_shape).astype(dtype),)

    return _node(out.astype(dtype), (x,), bw)


def _check_pair(x, x_recon, op: str) -> tuple[Tensor, Tensor]:
    xt = x if isinstance(x, Tensor) else Tensor(x)
    rt = x_recon if isinstance(x_recon, Tensor) else Tensor(x_recon)
    if xt.data.shape != rt.data.shape:
        raise ValueError(f"{op}: shape mismatch {xt.data.shape} vs {rt.data.shape}")
    return xt.detach(), rt


def hist_loss(x, x_recon, cfg: LossConfig) -> Tensor:
    """Mean squared per-bin difference of soft histograms, scaled by 1/n_bins.

    Batched inputs average the per-image loss over the batch.
    """
    target, recon = _check_pair(x, x_recon, "hist_loss")
    h_target = soft_histogram(target, cfg)
    h_recon = soft_histogram(recon, cfg)
    n_images = h_target.data.shape[0] if h_target.data.ndim == 2 else 1
    diff = sub(h_recon, h_target)
    return mul(tsum(square(diff)), 1.0 / (cfg.n_bins * n_images))


def spatial_loss(x, x_recon) -> Tensor:
    """Mean squared per-pixel difference."""
    target, recon = _check_pair(x, x_recon, "spatial_loss")
    return tmean(square(sub(recon, target)))


def generated_loss(x, x_recon, cfg: LossConfig) -> Tensor:
    """hist_loss + omega * spatial_loss."""
    target, recon = _check_pair(x, x_recon, "generated_loss")
    return add(hist_loss(target, recon, cfg), mul(spatial_loss(target, recon), cfg.omega))
