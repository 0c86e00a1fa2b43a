"""Pixel-level RGB/SAR to IR translation and translation-quality metrics."""

from .features import ExtractorSpec, FeatureSet, extract_features, load_features, save_features
from .metrics import (
    GaussianStats,
    ScoreReport,
    combined_loss,
    evaluate_set,
    final_score,
    fit_gaussian,
    frechet_distance,
    l2_normalized,
    l2_raw,
    lpips_distance,
)
from .pairing import LocationPool, PairManifest, PairRecord, sample_pairs, scan_locations
from .pipeline import TaskPlan, plan_for, run_pipeline
from .raster import GrayMap, Raster, decode_image, encode_image, quantize, read_image, write_image
from .translate import RGB2IR_FACTOR, SAR2IR_FACTOR, reconstruct_density, rgb_to_ir, to_grayscale

__version__ = "0.1.0"
