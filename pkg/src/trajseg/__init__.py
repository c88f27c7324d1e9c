"""Moving-object segmentation from long-range point tracks, at desk scale."""
from .evaluation import EvalReport, boundary_f, eval_fine_grained, eval_mos, region_j
from .kernels import BACKEND
from .masks import MaskVideo
from .model import VARIANTS, ModelConfig, MotionSegModel
from .prompting import ObjectMemory, PromptParams, segment_tracks
from .synth import OracleSegmenter, SceneConfig, generate_scene, render_scene
from .trackdata import TrackLabels, TrackSet, read_labels, read_tracks, write_labels, write_tracks
from .training import TrainConfig, TrainExample, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "EvalReport", "MaskVideo", "ModelConfig", "MotionSegModel", "ObjectMemory",
    "OracleSegmenter", "PromptParams", "SceneConfig", "TrackLabels", "TrackSet", "TrainConfig",
    "TrainExample", "VARIANTS", "boundary_f", "eval_fine_grained", "eval_mos", "generate_scene",
    "read_labels", "read_tracks", "region_j", "render_scene", "segment_tracks", "train",
    "write_labels", "write_tracks",
]
