"""Evaluation metrics and the two diagnostic analyses.

PSNR/SSIM operate on [0,1] grayscale arrays.  The gate-norm analysis
summarizes how strongly each gate draws on its input feature maps; the
spectral analysis bins 2-D power spectra into radial annuli.  The Fourier
transform here is hand-rolled: an iterative radix-2 FFT for power-of-two
sizes and a direct DFT matrix product otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 100.0


# ---------------------------------------------------------------------------
# fidelity metrics
# ---------------------------------------------------------------------------

def _shaved(a: np.ndarray, b: np.ndarray, shave: int) -> tuple[np.ndarray, np.ndarray]:
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if shave < 0:
        raise ValueError(f"shave must be non-negative, got {shave}")
    if shave:
        if 2 * shave >= min(a.shape):
            raise ValueError(f"shave {shave} leaves no pixels for {a.shape}")
        a = a[shave:-shave, shave:-shave]
        b = b[shave:-shave, shave:-shave]
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """10*log10(1/MSE) on [0,1] data, capped at 100 dB for exact matches."""
    a, b = _shaved(a, b, shave)
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", patches, win)


def ssim(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, dynamic range 1."""
    a, b = _shaved(a, b, shave)
    if min(a.shape) < 11:
        raise ValueError(f"image {a.shape} smaller than the 11x11 SSIM window")
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    win = _gaussian_window()
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a ** 2
    var_b = _filter_valid(b * b, win) - mu_b ** 2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricsReport:
    """Per-image PSNR/SSIM rows plus their arithmetic means."""

    task: str
    rows: list  # (image name, psnr_db, ssim)

    @property
    def avg_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def avg_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["image", "psnr_db", "ssim"])
            for name, p, s in self.rows:
                out.writerow([name, f"{p:.4f}", f"{s:.6f}"])
            out.writerow(["average", f"{self.avg_psnr:.4f}", f"{self.avg_ssim:.6f}"])


# ---------------------------------------------------------------------------
# gate weight norms
# ---------------------------------------------------------------------------

@dataclass
class GateNormReport:
    """Min-max normalized per-map gate norms and the three bar aggregates.

    curves[m] has one entry per gate input map of block m+1.  segments[m]
    labels each entry 'short_early', 'short_last', or 'long'.  Aggregates
    average the normalized values across all blocks; an absent segment
    (e.g. short_early when R=1) yields nan.
    """

    curves: list
    segments: list
    long_term_mean: float
    short_early_mean: float
    short_last_mean: float


def gate_weight_norms(net) -> GateNormReport:
    """Per-input-map L2 norms of each gate kernel, normalized to [0, 1].

    The norm of input map l is sqrt(sum_i W[i, l]^2) over the F output
    filters.  Each block's curve is min-max normalized; a constant curve
    maps to all zeros.
    """
    cfg = net.config
    curves = []
    segments = []
    buckets = {"long": [], "short_early": [], "short_last": []}
    for block in net.blocks:
        w = block.gate_conv.weight.data[:, :, 0, 0].astype(np.float64)
        v = np.sqrt((w ** 2).sum(axis=0))
        span = v.max() - v.min()
        curve = (v - v.min()) / span if span > 0 else np.zeros_like(v)
        if cfg.variant == "no_short_term":
            labels = ["short_last"] * cfg.f + ["long"] * (cfg.f * block.index)
        else:
            labels = (["short_early"] * (cfg.f * (cfg.r - 1)) + ["short_last"] * cfg.f)
            if cfg.variant == "full":
                labels += ["long"] * (cfg.f * block.index)
        assert len(labels) == curve.size
        for val, lab in zip(curve, labels):
            buckets[lab].append(val)
        curves.append(curve)
        segments.append(labels)

    def mean_of(key):
        return float(np.mean(buckets[key])) if buckets[key] else float("nan")

    return GateNormReport(
        curves=curves,
        segments=segments,
        long_term_mean=mean_of("long"),
        short_early_mean=mean_of("short_early"),
        short_last_mean=mean_of("short_last"),
    )


def write_gate_norms_tsv(report: GateNormReport, path) -> None:
    """Plot-ready tidy TSV: block, input map index, segment, normalized norm."""
    with open(path, "w") as fh:
        fh.write("block\tmap\tsegment\tnorm\n")
        for m, (curve, labels) in enumerate(zip(report.curves, report.segments), start=1):
            for idx, (val, lab) in enumerate(zip(curve, labels)):
                fh.write(f"{m}\t{idx}\t{lab}\t{val:.6f}\n")
        fh.write(f"# long_term_mean\t{report.long_term_mean:.6f}\n")
        fh.write(f"# short_early_mean\t{report.short_early_mean:.6f}\n")
        fh.write(f"# short_last_mean\t{report.short_last_mean:.6f}\n")


# ---------------------------------------------------------------------------
# spectral density
# ---------------------------------------------------------------------------

def _bit_reverse_indices(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(levels):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_radix2(a: np.ndarray) -> np.ndarray:
    """Iterative Cooley-Tukey along the last axis; length must be 2^k."""
    n = a.shape[-1]
    a = a[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        shaped = a.reshape(a.shape[:-1] + (n // size, size))
        even = shaped[..., :half]
        odd = shaped[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape)
        size *= 2
    return a


def fft1d(x: np.ndarray) -> np.ndarray:
    """DFT along the last axis: radix-2 FFT or direct matrix product."""
    n = x.shape[-1]
    x = np.asarray(x, dtype=np.complex128)
    if n > 1 and n & (n - 1) == 0:
        return _fft_radix2(x)
    k = np.arange(n)
    return x @ np.exp(-2j * np.pi * np.outer(k, k) / n)


def dft2(img: np.ndarray) -> np.ndarray:
    """2-D DFT via two passes of the 1-D transform."""
    f = fft1d(np.asarray(img, dtype=np.complex128))
    return np.swapaxes(fft1d(np.swapaxes(f, -1, -2)), -1, -2)


@dataclass
class SpectralDensity:
    """Mean power per radial-frequency annulus; edges span 0..Nyquist."""

    edges: np.ndarray   # (bins + 1,)
    density: np.ndarray  # (bins,)
    counts: np.ndarray   # coefficients per annulus
    total_power: float

    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


def spectral_density(img: np.ndarray, num_bins: int = 32) -> SpectralDensity:
    """Radial power-spectrum profile of one image.

    Frequencies are normalized so Nyquist is 1; the corner region beyond
    Nyquist clamps into the last annulus so total power is conserved.
    """
    h, w = img.shape
    if h < 8 or w < 8:
        raise ValueError(f"image {img.shape} too small for spectral analysis")
    power = np.abs(dft2(img)) ** 2

    def signed_freq(n):
        k = np.arange(n)
        return np.where(k <= n // 2, k, k - n) / (n / 2.0)

    fu = signed_freq(h)  # Nyquist -> magnitude 1
    fv = signed_freq(w)
    radius = np.sqrt(fu[:, None] ** 2 + fv[None, :] ** 2)
    bins = np.minimum((radius * num_bins).astype(np.int64), num_bins - 1)
    density = np.zeros(num_bins)
    counts = np.bincount(bins.ravel(), minlength=num_bins)
    sums = np.bincount(bins.ravel(), weights=power.ravel(), minlength=num_bins)
    nonzero = counts > 0
    density[nonzero] = sums[nonzero] / counts[nonzero]
    return SpectralDensity(
        edges=np.linspace(0.0, 1.0, num_bins + 1),
        density=density,
        counts=counts,
        total_power=float(power.sum()),
    )


def density_difference(d1: SpectralDensity, d2: SpectralDensity) -> np.ndarray:
    """Per-annulus difference d1 - d2; binnings must match."""
    if d1.edges.shape != d2.edges.shape or not np.allclose(d1.edges, d2.edges):
        raise ValueError("spectral densities use different binnings")
    return d1.density - d2.density


def write_density_tsv(densities: dict, path) -> None:
    """Plot-ready TSV: bin center column plus one density column per name."""
    names = list(densities)
    first = densities[names[0]]
    for name in names[1:]:
        if not np.allclose(densities[name].edges, first.edges):
            raise ValueError("spectral densities use different binnings")
    centers = first.bin_centers()
    with open(path, "w") as fh:
        fh.write("bin_center\t" + "\t".join(names) + "\n")
        for i, c in enumerate(centers):
            row = "\t".join(f"{densities[n].density[i]:.8e}" for n in names)
            fh.write(f"{c:.6f}\t{row}\n")
