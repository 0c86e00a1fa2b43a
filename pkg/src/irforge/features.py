"""Deterministic patch features and the binary feature-file format.

The built-in extractor is a seeded bank of zero-mean random filters applied to
non-overlapping patches of a grayscale pyramid. Features computed by a real
network elsewhere can be imported through :func:`load_features`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionMismatch, ImageTooSmall, MalformedFeatureFile
from .raster import Raster
from .translate import to_grayscale

FEATURE_MAGIC = b"IFF1"
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class ExtractorSpec:
    patch_size: int = 8
    scales: int = 3
    seed: int = 0
    filters_per_scale: int = 16

    def __post_init__(self):
        p = self.patch_size
        if p < 1 or p & (p - 1):
            raise ValueError(f"patch_size must be a power of two, got {p}")
        if self.scales < 1 or self.filters_per_scale < 1:
            raise ValueError("scales and filters_per_scale must be >= 1")
        if not 0 <= self.seed <= _U64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def tag(self) -> str:
        return (f"irforge-fb1:p={self.patch_size}:s={self.scales}"
                f":f={self.filters_per_scale}:seed={self.seed}")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """One feature vector per (scale, patch) of an image, plus the extractor tag."""

    vectors: np.ndarray
    source_tag: str

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionMismatch(f"feature matrix must be non-empty 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vectors must be finite")
        tag = self.source_tag.encode("utf-8")
        if not 0 < len(tag) < 256:
            raise ValueError("source_tag must be 1..255 bytes of UTF-8")
        v = np.ascontiguousarray(v.copy())
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def patch_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (self.source_tag == other.source_tag
                and self.vectors.shape == other.vectors.shape
                and bool(np.array_equal(self.vectors, other.vectors)))

    __hash__ = None


@lru_cache(maxsize=16)
def filter_bank(spec: ExtractorSpec) -> np.ndarray:
    """Frozen ``(filters, patch_size**2)`` bank of zero-mean, unit-norm filters.

    The same bank is applied at every pyramid level.
    """
    rng = np.random.default_rng(spec.seed)
    bank = rng.standard_normal((spec.filters_per_scale, spec.patch_size ** 2))
    bank -= bank.mean(axis=1, keepdims=True)
    bank /= np.linalg.norm(bank, axis=1, keepdims=True)
    bank.setflags(write=False)
    return bank


def patch_count(width: int, height: int, spec: ExtractorSpec) -> int:
    p = spec.patch_size
    return sum((width >> s) // p * ((height >> s) // p) for s in range(spec.scales))


def _downsample(level: np.ndarray) -> np.ndarray:
    h, w = level.shape[0] // 2 * 2, level.shape[1] // 2 * 2
    x = level[:h, :w]
    # paired sums keep a constant level exactly constant
    return ((x[0::2, 0::2] + x[0::2, 1::2]) + (x[1::2, 0::2] + x[1::2, 1::2])) / 4.0


def _patches(level: np.ndarray, p: int) -> np.ndarray:
    h, w = level.shape
    ch, cw = h // p * p, w // p * p
    top, left = (h - ch) // 2, (w - cw) // 2
    x = level[top:top + ch, left:left + cw]
    x = x.reshape(ch // p, p, cw // p, p).transpose(0, 2, 1, 3)
    return x.reshape(-1, p * p)


def extract_features(img: Raster, spec: ExtractorSpec = ExtractorSpec()) -> FeatureSet:
    p = spec.patch_size
    coarsest = spec.scales - 1
    if (img.width >> coarsest) < p or (img.height >> coarsest) < p:
        raise ImageTooSmall(
            f"{img.width}x{img.height} image has no {p}x{p} patch at scale {coarsest}")
    if img.channels == 3:
        level = to_grayscale(img).values / 255.0
    else:
        level = img.pixels[:, :, 0].astype(np.float64) / 255.0
    bank = filter_bank(spec)
    out = []
    for s in range(spec.scales):
        if s:
            level = _downsample(level)
        # einsum without optimize avoids BLAS, so the reduction order is fixed
        out.append(np.einsum("nk,fk->nf", _patches(level, p), bank))
    return FeatureSet(np.concatenate(out, axis=0), spec.tag)


def save_features(fs: FeatureSet) -> bytes:
    tag = fs.source_tag.encode("utf-8")
    header = FEATURE_MAGIC + bytes([len(tag)]) + tag + struct.pack("<QQ", fs.patch_count, fs.dim)
    return header + fs.vectors.astype("<f8").tobytes()


def load_features(data: bytes) -> FeatureSet:
    data = bytes(data)
    if data[:4] != FEATURE_MAGIC:
        raise MalformedFeatureFile("bad feature-file magic")
    if len(data) < 5:
        raise MalformedFeatureFile("truncated feature-file header")
    tag_len = data[4]
    pos = 5 + tag_len
    if tag_len == 0 or len(data) < pos + 16:
        raise MalformedFeatureFile("truncated feature-file header")
    try:
        tag = data[5:pos].decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedFeatureFile("feature-file tag is not UTF-8") from None
    n, d = struct.unpack_from("<QQ", data, pos)
    if n == 0 or d == 0:
        raise DimensionMismatch(f"feature file declares an empty {n}x{d} matrix")
    payload = data[pos + 16:]
    if len(payload) != n * d * 8:
        raise MalformedFeatureFile(
            f"payload is {len(payload)} bytes but header declares {n}x{d} float64 values")
    vectors = np.frombuffer(payload, dtype="<f8").reshape(n, d)
    if not np.all(np.isfinite(vectors)):
        raise MalformedFeatureFile("feature file contains non-finite values")
    return FeatureSet(vectors.astype(np.float64), tag)
