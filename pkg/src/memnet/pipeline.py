"""Image I/O, degradations, patch extraction, and augmentation.

Images are 2-D float32 arrays with values in [0, 1].  Degradations are
applied to whole images before patch extraction so block boundaries and
resampling phase behave like the evaluation inputs.  All randomness comes
in through explicit generators.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MPST"
CACHE_VERSION = 1
PATCH_SIZE = 31
PATCH_STRIDE = 21

TASK_KINDS = ("denoise", "super_resolve", "jpeg")


# ---------------------------------------------------------------------------
# PGM I/O
# ---------------------------------------------------------------------------

def _read_pgm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integers, skipping # comments.

    Returns the values and the offset one past the final token's trailing
    whitespace byte (where P5 pixel data begins).
    """
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(raw):
            raise ValueError("truncated PGM header")
        c = raw[i:i + 1]
        if c == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j:j + 1].isspace() and raw[j:j + 1] != b"#":
                j += 1
            try:
                tokens.append(int(raw[i:j]))
            except ValueError:
                raise ValueError(f"bad PGM header token {raw[i:j]!r}") from None
            i = j
    if i < len(raw) and raw[i:i + 1].isspace():
        i += 1  # single whitespace separates header from P5 raster
    return tokens, i


def load_pgm(path) -> np.ndarray:
    """Load a P2 or P5 PGM with maxval 255 as float32 in [0, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic = raw[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file (magic {magic!r})")
    (width, height, maxval), offset = _read_pgm_tokens(raw[2:], 3)
    offset += 2
    if maxval != 255:
        raise ValueError(f"only maxval 255 PGMs are supported, got {maxval}")
    if width < 1 or height < 1:
        raise ValueError(f"bad PGM dimensions {width}x{height}")
    n = width * height
    if magic == b"P5":
        data = raw[offset:offset + n]
        if len(data) < n:
            raise ValueError("truncated PGM raster")
        pixels = np.frombuffer(data, dtype=np.uint8, count=n)
    else:
        values, _ = _read_pgm_tokens(raw[offset:], n)
        pixels = np.asarray(values, dtype=np.int64)
        if pixels.min() < 0 or pixels.max() > 255:
            raise ValueError("P2 sample outside 0..255")
        pixels = pixels.astype(np.uint8)
    return (pixels.reshape(height, width).astype(np.float32)) / 255.0


def save_pgm(img: np.ndarray, path) -> None:
    """Write a binary P5 PGM, rounding to the nearest of 256 levels."""
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    quant = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# patches and augmentation
# ---------------------------------------------------------------------------

def extract_patches(img: np.ndarray, size: int = PATCH_SIZE,
                    stride: int = PATCH_STRIDE) -> list[tuple[int, int]]:
    """Offsets (row, col) of every fully contained size x size patch."""
    h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the {size}x{size} patch")
    rows = range(0, (h - size) // stride * stride + 1, stride)
    cols = range(0, (w - size) // stride * stride + 1, stride)
    return [(r, c) for r in rows for c in cols]


def augment(patch: np.ndarray, aug_id: int) -> np.ndarray:
    """One of the 8 dihedral transforms; 0 is the identity.

    Ids 1-3 rotate by 90/180/270 degrees; 4-7 are the horizontal flip
    composed with those rotations.
    """
    if not 0 <= aug_id <= 7:
        raise ValueError(f"aug_id must be 0..7, got {aug_id}")
    quarter = aug_id % 4
    if quarter % 2 == 1 and patch.shape[0] != patch.shape[1]:
        raise ValueError("quarter-turn rotations need a square patch")
    out = patch
    if aug_id >= 4:
        out = np.fliplr(out)
    if quarter:
        out = np.rot90(out, k=quarter)
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# degradations
# ---------------------------------------------------------------------------

def add_gaussian_noise(img: np.ndarray, sigma_255: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Additive white Gaussian noise with sigma on the 0-255 scale."""
    if sigma_255 < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma_255}")
    if sigma_255 == 0:
        return np.asarray(img, dtype=np.float32).copy()
    noisy = img.astype(np.float64) + rng.standard_normal(img.shape) * (sigma_255 / 255.0)
    return np.clip(noisy, 0.0, 1.0).astype(np.float32)


def keys_kernel(t: np.ndarray) -> np.ndarray:
    """The cubic convolution kernel with a = -0.5."""
    a = -0.5
    t = np.abs(np.asarray(t, dtype=np.float64))
    near = (a + 2) * t**3 - (a + 3) * t**2 + 1
    far = a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resample_weights(n_in: int, n_out: int, antialias: bool) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for 1-D cubic resampling.

    Output sample i reads source coordinate (i + 0.5) * n_in/n_out - 0.5.
    When shrinking with antialias the kernel stretches by the scale factor.
    Out-of-range taps clamp to the border (edge replication), and each row
    renormalizes to sum 1 so constants are preserved exactly.
    """
    ratio = n_in / n_out
    s = max(ratio, 1.0) if antialias else 1.0
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * ratio - 0.5
    first = np.floor(x - 2.0 * s).astype(np.int64) + 1
    taps = int(np.ceil(4.0 * s)) + 1
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    for k in range(taps):
        j = first + k
        w = keys_kernel((x - j) / s) / s
        np.add.at(mat, (rows, np.clip(j, 0, n_in - 1)), w)
    mat /= mat.sum(axis=1, keepdims=True)
    return mat


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int,
                   antialias: bool = True) -> np.ndarray:
    """Separable cubic resize, clamped to [0, 1]."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape
    work = img.astype(np.float64)
    if out_h != h:
        work = resample_weights(h, out_h, antialias) @ work
    if out_w != w:
        work = work @ resample_weights(w, out_w, antialias).T
    return np.clip(work, 0.0, 1.0).astype(np.float32)


def crop_to_multiple(img: np.ndarray, scale: int) -> np.ndarray:
    """Trim bottom/right so both dimensions divide by the scale."""
    h, w = img.shape
    return np.ascontiguousarray(img[:h - h % scale, :w - w % scale])


def degrade_sr(img: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic down then up by `scale`; output matches the cropped input."""
    if scale < 2:
        raise ValueError(f"scale must be >= 2, got {scale}")
    cropped = crop_to_multiple(img, scale)
    h, w = cropped.shape
    low = bicubic_resize(cropped, h // scale, w // scale, antialias=True)
    return bicubic_resize(low, h, w, antialias=False)


# standard luminance quantization table
BASE_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


def quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled by the conventional quality mapping."""
    if not 1 <= quality <= 100:
        raise ValueError(f"quality must be 1..100, got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((BASE_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def _dct_matrix() -> np.ndarray:
    i = np.arange(8).reshape(8, 1)
    j = np.arange(8).reshape(1, 8)
    mat = np.sqrt(2.0 / 8.0) * np.cos((2 * j + 1) * i * np.pi / 16.0)
    mat[0, :] = np.sqrt(1.0 / 8.0)
    return mat


_DCT = _dct_matrix()


def jpeg_degrade(img: np.ndarray, quality: int) -> np.ndarray:
    """Grayscale baseline JPEG round trip: block DCT, quantize, invert.

    Edge blocks pad by replication; entropy coding is lossless so it is
    skipped entirely.
    """
    q = quant_table(quality)
    h, w = img.shape
    ph = (8 - h % 8) % 8
    pw = (8 - w % 8) % 8
    work = np.pad(img.astype(np.float64) * 255.0 - 128.0,
                  ((0, ph), (0, pw)), mode="edge")
    bh, bw = work.shape[0] // 8, work.shape[1] // 8
    blocks = work.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = np.einsum("ij,hwjk,lk->hwil", _DCT, blocks, _DCT)
    coef = np.round(coef / q) * q
    rec = np.einsum("ji,hwjk,kl->hwil", _DCT, coef, _DCT)
    out = rec.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)[:h, :w]
    return np.clip((out + 128.0) / 255.0, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# degradation specs and training-set assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DegradationSpec:
    """One corruption setting: the task kind plus its single parameter."""

    kind: str
    sigma: float = 0.0
    scale: int = 0
    quality: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.kind == "denoise" and self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.kind == "super_resolve" and self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3, or 4, got {self.scale}")
        if self.kind == "jpeg" and not 1 <= self.quality <= 100:
            raise ValueError(f"quality must be 1..100, got {self.quality}")

    def label(self) -> str:
        if self.kind == "denoise":
            sigma = self.sigma
            return f"denoise_sigma{int(sigma) if sigma == int(sigma) else sigma}"
        if self.kind == "super_resolve":
            return f"sr_x{self.scale}"
        return f"jpeg_q{self.quality}"


def apply_degradation(img: np.ndarray, spec: DegradationSpec,
                      rng: np.random.Generator | None = None
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Degrade one image; returns (degraded, aligned_clean).

    The clean side differs from the input only for super-resolution, where
    both sides are cropped to a multiple of the scale.
    """
    img = np.asarray(img, dtype=np.float32)
    if spec.kind == "denoise":
        if rng is None:
            raise ValueError("denoise degradation needs a random generator")
        return add_gaussian_noise(img, spec.sigma, rng), img
    if spec.kind == "super_resolve":
        return degrade_sr(img, spec.scale), crop_to_multiple(img, spec.scale)
    return jpeg_degrade(img, spec.quality), img


@dataclass
class PatchSet:
    """Aligned degraded/clean patch pairs as (P, 1, s, s) float32 arrays."""

    degraded: np.ndarray
    clean: np.ndarray
    provenance: list[tuple]  # (img_idx, spec_idx, row, col, aug_id)

    def __len__(self):
        return self.degraded.shape[0]


def build_training_set(images: list[np.ndarray], specs: list[DegradationSpec],
                       make_rng, size: int = PATCH_SIZE, stride: int = PATCH_STRIDE,
                       n_augs: int = 8) -> PatchSet:
    """Degrade every image under every spec and cut augmented patch pairs.

    ``make_rng(img_idx, spec_idx)`` supplies the noise generator so the set
    is reproducible pair by pair.
    """
    if not images:
        raise ValueError("no source images")
    if not specs:
        raise ValueError("no degradation specs")
    degraded_patches = []
    clean_patches = []
    provenance = []
    for img_idx, img in enumerate(images):
        for spec_idx, spec in enumerate(specs):
            degraded, clean = apply_degradation(img, spec, make_rng(img_idx, spec_idx))
            for row, col in extract_patches(clean, size, stride):
                dpatch = degraded[row:row + size, col:col + size]
                cpatch = clean[row:row + size, col:col + size]
                for aug_id in range(n_augs):
                    degraded_patches.append(augment(dpatch, aug_id))
                    clean_patches.append(augment(cpatch, aug_id))
                    provenance.append((img_idx, spec_idx, row, col, aug_id))
    deg = np.stack(degraded_patches).astype(np.float32)[:, None, :, :]
    cln = np.stack(clean_patches).astype(np.float32)[:, None, :, :]
    return PatchSet(degraded=deg, clean=cln, provenance=provenance)


# ---------------------------------------------------------------------------
# patch cache
# ---------------------------------------------------------------------------

def save_patchset(ps: PatchSet, path) -> None:
    """Write the documented flat cache: MPST header then raw f32 LE pairs."""
    count = len(ps)
    size = ps.degraded.shape[-1]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", CACHE_VERSION, count, size))
        for k in range(count):
            fh.write(ps.degraded[k, 0].astype("<f4").tobytes())
            fh.write(ps.clean[k, 0].astype("<f4").tobytes())


def load_patchset(path) -> PatchSet:
    """Read the MPST cache; provenance is not stored in the file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ValueError(f"not a patch cache (magic {raw[:4]!r})")
    version, count, size = struct.unpack("<III", raw[4:16])
    if version != CACHE_VERSION:
        raise ValueError(f"unsupported cache version {version}")
    per = size * size * 4
    need = 16 + count * 2 * per
    if len(raw) < need:
        raise ValueError("truncated patch cache")
    flat = np.frombuffer(raw, dtype="<f4", count=count * 2 * size * size, offset=16)
    pairs = flat.reshape(count, 2, size, size).astype(np.float32)
    return PatchSet(degraded=np.ascontiguousarray(pairs[:, 0:1]),
                    clean=np.ascontiguousarray(pairs[:, 1:2]),
                    provenance=[])
