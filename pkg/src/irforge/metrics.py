"""Evaluation metrics: pixel L2, patch-feature LPIPS, Frechet distance and the final score."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySet,
    InsufficientSamples,
    NonFiniteInput,
    NumericalFailure,
    ShapeMismatch,
    SourceMismatch,
)
from .features import ExtractorSpec, FeatureSet, extract_features
from .raster import Raster

# eigenvalues down to -EIG_TOL * trace are treated as roundoff and clamped to zero
EIG_TOL = 1e-8


def _check_shapes(a: Raster, b: Raster) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatch(f"{a!r} and {b!r} differ in shape")


def _sum_sq(a: Raster, b: Raster) -> int:
    diff = a.pixels.astype(np.int64) - b.pixels.astype(np.int64)
    return int(np.sum(diff * diff))


def l2_raw(a: Raster, b: Raster) -> float:
    """Euclidean distance over all samples, on the 0..255 scale."""
    _check_shapes(a, b)
    return math.sqrt(_sum_sq(a, b))


def l2_normalized(a: Raster, b: Raster) -> float:
    """Root-mean-square sample difference on a [0, 1] intensity scale."""
    _check_shapes(a, b)
    # integer numerator and denominator, so black vs white is exactly 1.0
    return math.sqrt(_sum_sq(a, b) / (65025 * a.samples.size))


def _check_comparable(fa: FeatureSet, fb: FeatureSet) -> None:
    if fa.source_tag != fb.source_tag:
        raise SourceMismatch(f"feature sources differ: {fa.source_tag!r} vs {fb.source_tag!r}")
    if fa.vectors.shape != fb.vectors.shape:
        raise ShapeMismatch(f"feature shapes differ: {fa.vectors.shape} vs {fb.vectors.shape}")


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.sum(v * v, axis=1, keepdims=True))
    return np.divide(v, norms, out=np.zeros_like(v), where=norms > 0)


def lpips_distance(fa: FeatureSet, fb: FeatureSet) -> float:
    """Mean over patches of the distance between unit-normalized feature vectors."""
    _check_comparable(fa, fb)
    d = _unit_rows(fa.vectors) - _unit_rows(fb.vectors)
    per_patch = np.sqrt(np.sum(d * d, axis=1))
    return math.fsum(per_patch) / len(per_patch)


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    sample_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.cov, dtype=np.float64)
        d = mean.size
        if cov.shape != (d, d):
            raise DimensionMismatch(f"covariance shape {cov.shape} does not match mean dim {d}")
        if self.sample_count < 2:
            raise InsufficientSamples("a Gaussian fit needs at least two samples")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise NonFiniteInput("Gaussian statistics must be finite")
        cov = (cov + cov.T) / 2.0
        floor = -EIG_TOL * max(float(np.trace(cov)), 0.0)
        if d and np.linalg.eigvalsh(cov).min() < floor:
            raise NumericalFailure("covariance is not positive semi-definite")
        for arr in (mean, cov):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def fit_gaussian(sets: Iterable[FeatureSet]) -> GaussianStats:
    """Pooled mean and unbiased covariance of every vector in ``sets``."""
    sets = list(sets)
    if not sets:
        raise InsufficientSamples("no feature sets to fit")
    tag, dim = sets[0].source_tag, sets[0].dim
    for fs in sets[1:]:
        if fs.source_tag != tag:
            raise SourceMismatch(f"feature sources differ: {tag!r} vs {fs.source_tag!r}")
        if fs.dim != dim:
            raise DimensionMismatch(f"feature dims differ: {dim} vs {fs.dim}")
    x = np.concatenate([fs.vectors for fs in sets], axis=0)
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamples(f"need at least 2 feature vectors, got {n}")
    # canonical row order: the reduction no longer depends on input order
    x = x[np.lexsort(x.T[::-1])]
    mean = np.sum(x, axis=0) / n
    centered = x - mean
    cov = np.einsum("ni,nj->ij", centered, centered) / (n - 1)
    return GaussianStats(mean, cov, n)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    if w.min() < -EIG_TOL * max(float(np.trace(m)), 0.0):
        raise NumericalFailure(f"matrix square root of a non-PSD matrix (min eigenvalue {w.min():g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(p: GaussianStats, q: GaussianStats) -> float:
    """Frechet distance between two Gaussians.

    ``|mu_p - mu_q|^2 + tr(S_p + S_q - 2 (S_p S_q)^(1/2))`` with the trace of the
    square root taken from the eigenvalues of ``S_p^(1/2) S_q S_p^(1/2)``.
    """
    if p.dim != q.dim:
        raise DimensionMismatch(f"Gaussian dims differ: {p.dim} vs {q.dim}")
    # identical inputs give exactly zero instead of eigen-solver roundoff
    if np.array_equal(p.mean, q.mean) and np.array_equal(p.cov, q.cov):
        return 0.0
    return frechet_eig(p, q)


def frechet_eig(p: GaussianStats, q: GaussianStats) -> float:
    """The eigendecomposition route of :func:`frechet_distance`, with no shortcuts."""
    diff = p.mean - q.mean
    root_p = _sqrt_psd(p.cov)
    m = root_p @ q.cov @ root_p
    m = (m + m.T) / 2.0
    w = np.linalg.eigvalsh(m)
    floor = -EIG_TOL * max(float(np.trace(m)), 0.0)
    if w.min() < floor:
        raise NumericalFailure(f"product covariance has eigenvalue {w.min():g} below {floor:g}")
    tr_covmean = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    value = float(diff @ diff) + float(np.trace(p.cov)) + float(np.trace(q.cov)) - 2.0 * tr_covmean
    return max(value, 0.0)


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise NonFiniteInput(f"non-finite metric input {v!r}")


def final_score(fid: float, lpips: float, l2: float) -> float:
    """Competition score: ``(2/pi * arctan(fid) + lpips + l2) / 3``; lower is better."""
    _finite(fid, lpips, l2)
    if fid < 0 or lpips < 0 or l2 < 0:
        raise ValueError("metric components must be non-negative")
    return (2.0 / math.pi * math.atan(fid) + lpips + l2) / 3.0


def combined_loss(loss_ori: float, lpips: float, l2: float) -> float:
    """Generator loss with the metric terms added (weights, if any, are pre-applied)."""
    _finite(loss_ori, lpips, l2)
    return loss_ori + lpips + l2


@dataclass(frozen=True)
class ScoreReport:
    l2: float
    lpips: float
    fid: float
    final: float
    per_image: tuple = field(default_factory=tuple)  # (image id, l2, lpips)

    def recompute_final(self) -> float:
        return final_score(self.fid, self.lpips, self.l2)

    def to_text(self) -> str:
        lines = [
            "# irforge score report v1",
            f"pairs={len(self.per_image)}",
            f"l2={self.l2:.12g}",
            f"lpips={self.lpips:.12g}",
            f"fid={self.fid:.12g}",
            f"final={self.final:.12g}",
            "[per_image]",
        ]
        lines += [f"{name}\tl2={l2:.12g}\tlpips={lp:.12g}" for name, l2, lp in self.per_image]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "l2": self.l2,
            "lpips": self.lpips,
            "fid": self.fid,
            "final": self.final,
            "per_image": [{"id": n, "l2": a, "lpips": b} for n, a, b in self.per_image],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _mean(values: Sequence[float]) -> float:
    # fsum is exactly rounded, hence independent of order and of worker split
    return math.fsum(values) / len(values)


def evaluate_set(
    pairs: Sequence[tuple[Raster, Raster]],
    spec: ExtractorSpec = ExtractorSpec(),
    *,
    ids: Optional[Sequence[str]] = None,
    features: Optional[Sequence[tuple[FeatureSet, FeatureSet]]] = None,
    workers: int = 1,
) -> ScoreReport:
    """Score generated/target pairs.

    L2 and LPIPS are per-pair means; the Frechet term compares Gaussians pooled
    over all generated and all target features. ``features`` replaces the
    built-in extractor with precomputed (generated, target) feature sets.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptySet("no pairs to evaluate")
    ids = [str(i) for i in range(len(pairs))] if ids is None else list(ids)
    if len(ids) != len(pairs):
        raise ValueError("ids and pairs differ in length")
    if features is not None and len(features) != len(pairs):
        raise ValueError("features and pairs differ in length")
    for gen, tgt in pairs:
        _check_shapes(gen, tgt)

    def one(i):
        gen, tgt = pairs[i]
        fg, ft = features[i] if features is not None else (
            extract_features(gen, spec), extract_features(tgt, spec))
        return l2_normalized(gen, tgt), lpips_distance(fg, ft), fg, ft

    idx = range(len(pairs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, idx))
    else:
        results = [one(i) for i in idx]

    l2 = _mean([r[0] for r in results])
    lp = _mean([r[1] for r in results])
    fid = frechet_distance(fit_gaussian(r[2] for r in results),
                           fit_gaussian(r[3] for r in results))
    per_image = tuple((name, r[0], r[1]) for name, r in zip(ids, results))
    return ScoreReport(l2=l2, lpips=lp, fid=fid, final=final_score(fid, lp, l2),
                       per_image=per_image)
