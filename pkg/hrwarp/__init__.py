"""Sparse attention warping for semantic layout editing."""

from .attention import (
    AttentionConfig,
    SizeCapError,
    WarpResult,
    cycle_loss,
    dense_argmax_field,
    dense_warp,
    downsample_area,
    similarity,
)
from .dataset_synth import SynthConfig, floodfill_component, solidity, synth_manipulation_pair, write_pair
from .env import load_env
from .features import (
    ProviderConfig,
    handcrafted_image_features,
    label_onehot_features,
    load_feature_file,
    pipeline_features,
    upsample_features,
)
from .key_sampler import (
    KeyIndexSet,
    SamplerConfig,
    SamplingResult,
    ScoreConstraints,
    constrained_score,
    sample_key_indices,
    window_schedule,
)
from .local_edit import (
    EditResult,
    PairTransform,
    PipelineConfig,
    augment_pair,
    composite_local,
    eval_metrics,
    warp_full,
)
from .sparse_warp import (
    dedupe_keys,
    exhaustive_keys,
    keys_to_tensor,
    sparse_attention_weights,
    sparse_attentive_warp,
    sparse_warp,
)
from .tensor_io import (
    ArgumentError,
    Coord,
    FeatureMap,
    Image,
    IngestionError,
    LabelMap,
    Mask,
    TensorFormatError,
    bilinear_sample,
    load_image,
    load_label_map,
    load_mask,
    load_tensor,
    normalize_location_wise,
    save_image,
    save_tensor,
)

__all__ = [
    "ArgumentError",
    "AttentionConfig",
    "Coord",
    "EditResult",
    "FeatureMap",
    "Image",
    "IngestionError",
    "KeyIndexSet",
    "LabelMap",
    "Mask",
    "PairTransform",
    "PipelineConfig",
    "ProviderConfig",
    "SamplerConfig",
    "SamplingResult",
    "ScoreConstraints",
    "SizeCapError",
    "SynthConfig",
    "TensorFormatError",
    "WarpResult",
    "augment_pair",
    "bilinear_sample",
    "composite_local",
    "constrained_score",
    "cycle_loss",
    "dedupe_keys",
    "dense_argmax_field",
    "dense_warp",
    "downsample_area",
    "eval_metrics",
    "exhaustive_keys",
    "floodfill_component",
    "handcrafted_image_features",
    "keys_to_tensor",
    "label_onehot_features",
    "load_env",
    "load_feature_file",
    "load_image",
    "load_label_map",
    "load_mask",
    "load_tensor",
    "normalize_location_wise",
    "pipeline_features",
    "sample_key_indices",
    "save_image",
    "save_tensor",
    "similarity",
    "solidity",
    "sparse_attention_weights",
    "sparse_attentive_warp",
    "sparse_warp",
    "synth_manipulation_pair",
    "upsample_features",
    "warp_full",
    "window_schedule",
    "write_pair",
]
