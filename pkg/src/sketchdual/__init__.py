"""Sketch recognition with dual texture/shape GRUs over stroke-group sequences."""

from .fusion import FeatureSequence, FusionConfig, FusionParams, build_feature_sequence, predict
from .harness import ExperimentConfig, load_config, parse_config, run_experiment, split_dataset
from .nn import GruParams, gru_forward, gru_step
from .shape import Codebook, build_codebook, llc_encode, shape_feature
from .sketch import Sketch, Stroke, load_sketch, parse_sketch, rasterize, split_stroke_groups
from .synth import synth_generate

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "ExperimentConfig",
    "FeatureSequence",
    "FusionConfig",
    "FusionParams",
    "GruParams",
    "Sketch",
    "Stroke",
    "build_codebook",
    "build_feature_sequence",
    "gru_forward",
    "gru_step",
    "llc_encode",
    "load_config",
    "load_sketch",
    "parse_config",
    "parse_sketch",
    "predict",
    "rasterize",
    "run_experiment",
    "shape_feature",
    "split_dataset",
    "split_stroke_groups",
    "synth_generate",
]
