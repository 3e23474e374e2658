"""Unsupervised visual object tracking driven by diffusion attention maps.

The pipeline in one pass: a frozen conditioning backbone turns each frame
into cross/self-attention maps, learned prompt embeddings make those maps
target-specific, harmonization and fusion collapse them to one localization
map, and an online updater blends motion features (spatial and frequency
domain) back into the prompt as the sequence evolves.  Training data comes
from optical-flow pseudo-labels; evaluation follows the standard one-pass
and reset protocols.

Import layering, low to high: core -> frequency/harmonize/fuse -> backbone
(synthetic, diffusion_adapter) -> prompt_learner -> localize -> motion ->
updater -> tracker -> pseudolabel/evaluation -> formats/config -> cli.
"""

from .backbone import AttentionBackbone, AttentionBundle, LatentCode, create_backbone
from .config import RunConfig, load_config
from .core import (
    EMBEDDING_DIM,
    AttentionMap,
    BinaryMask,
    BoundingBox,
    EmbeddingVector,
    FrameRGB,
    Prompt,
    SelfAttentionTensor,
    TrackerState,
    diou,
    iou,
)
from .evaluation import MetricReport, SequenceResult, evaluate, run_benchmark
from .formats import load_checkpoint, pack_artifacts, save_checkpoint, unpack_artifacts
from .frequency import dct_block, idct_block, rgb_to_frequency
from .fuse import FusionHead, fuse_maps
from .harmonize import HarmonizeParams, enhance_cross_attention, harmonize
from .localize import map_to_box
from .motion import MotionModule, make_views
from .prompt_learner import (
    SharedArtifacts,
    TrainConfig,
    adapt_specific,
    attention_forward,
    attention_loss,
    build_prompt,
    train_shared,
)
from .pseudolabel import FlowField, QualityReport, label_video
from .synthetic import SyntheticBackbone, make_scene, render_scene, scene_masks
from .tracker import DiffTracker
from .updater import (
    BlendHead,
    TrackerModules,
    UpdateSchedule,
    UpdaterTrainConfig,
    step,
    train_updater,
    update_prompt,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionBackbone",
    "AttentionBundle",
    "AttentionMap",
    "BinaryMask",
    "BlendHead",
    "BoundingBox",
    "DiffTracker",
    "EMBEDDING_DIM",
    "EmbeddingVector",
    "FlowField",
    "FrameRGB",
    "FusionHead",
    "HarmonizeParams",
    "LatentCode",
    "MetricReport",
    "MotionModule",
    "Prompt",
    "QualityReport",
    "RunConfig",
    "SelfAttentionTensor",
    "SequenceResult",
    "SharedArtifacts",
    "SyntheticBackbone",
    "TrackerModules",
    "TrackerState",
    "TrainConfig",
    "UpdateSchedule",
    "UpdaterTrainConfig",
    "adapt_specific",
    "attention_forward",
    "attention_loss",
    "build_prompt",
    "create_backbone",
    "dct_block",
    "diou",
    "enhance_cross_attention",
    "evaluate",
    "fuse_maps",
    "harmonize",
    "idct_block",
    "iou",
    "label_video",
    "load_checkpoint",
    "load_config",
    "make_scene",
    "make_views",
    "map_to_box",
    "pack_artifacts",
    "render_scene",
    "rgb_to_frequency",
    "run_benchmark",
    "save_checkpoint",
    "scene_masks",
    "step",
    "train_shared",
    "train_updater",
    "unpack_artifacts",
    "update_prompt",
]
