"""Relation-driven composition of captioned point-cloud scenes.

The package builds multi-object 3D scenes from single-object datasets by
chaining spatial relations (over / under / next to), derives matching natural
language captions, and trains a small contrastive model on the mixed
single/composed batches it can stream.  Evaluation utilities cover composed
retrieval benchmarks and relation-repositioning probes.
"""

from .augment import AugmentPolicy, Mode, PolicyBundle, apply, rotation_matrix
from .baselines import MixMethod, MixSpec, baseline_caption, mix
from .batcher import Batch, BatchConfig, BatchSample, PipelineError, PipelineStats, \
    assemble_batch, count_configurations, run_pipeline, sample_rng
from .captions import CaptionRefiner, RawCaption, RefineError, RefinerConfig, \
    compose_raw, rule_refine, validate_refined
from .compose import ComposedScene, CompositionSpec, SceneComposer, compose_scene, \
    read_scene_dir, sample_spec, scene_record, write_scene_dir
from .config import AppConfig, ConfigError, EvalSettings
from .encoders import FrozenImageSurrogate, FrozenTextEncoder, ToyPointEncoder, \
    load_checkpoint, restore_point_encoder, save_checkpoint
from .evaluate import EvalItem, NComposedDataset, RepositionResult, RepositionTask, \
    RetrievalReport, alignment_scorer, alignment_scorer_with_grad, build_ncomposed, \
    coordinate_search, eval_retrieval, gradient_search, grid_refine_search, \
    oracle_scorer, relation_predicate, reposition, reposition_satisfies, \
    retarget_caption, scene_satisfies, split_components, sweep_n
from .losses import LossConfig, TotalLossResult, info_nce, total_loss
from .pointcloud import CaptionedObject, DatasetError, DatasetIndex, DuplicateIdError, \
    EmptyDatasetError, PlyError, PointCloud, concat, load_dataset, \
    normalize_unit_sphere, read_cloud, subsample, translate, write_cloud
from .primitives import SHAPES, gen_primitives
from .relations import PlacementParams, Relation, displacement, place, placement_offset, \
    sample_relation
from .train import TrainConfig, TrainResult, TrainingDivergedError, train_toy, \
    write_history_csv

__version__ = "0.1.0"

__all__ = [
    "AppConfig", "AugmentPolicy", "Batch", "BatchConfig", "BatchSample",
    "CaptionRefiner", "CaptionedObject", "ComposedScene", "CompositionSpec",
    "ConfigError", "DatasetError", "DatasetIndex", "DuplicateIdError",
    "EmptyDatasetError", "EvalItem", "EvalSettings", "FrozenImageSurrogate",
    "FrozenTextEncoder", "LossConfig", "MixMethod", "MixSpec", "Mode",
    "NComposedDataset", "PipelineError", "PipelineStats", "PlacementParams",
    "PlyError", "PointCloud", "PolicyBundle", "RawCaption", "RefineError",
    "RefinerConfig", "RepositionResult", "RepositionTask", "RetrievalReport",
    "SHAPES", "SceneComposer", "ToyPointEncoder", "TotalLossResult",
    "TrainConfig", "TrainResult", "TrainingDivergedError", "alignment_scorer",
    "alignment_scorer_with_grad", "apply", "assemble_batch", "baseline_caption",
    "build_ncomposed", "compose_raw", "compose_scene", "concat",
    "coordinate_search", "count_configurations", "displacement",
    "eval_retrieval", "gen_primitives", "gradient_search", "grid_refine_search",
    "info_nce",
    "load_checkpoint", "load_dataset", "mix", "normalize_unit_sphere",
    "oracle_scorer", "place", "placement_offset", "read_cloud",
    "read_scene_dir", "relation_predicate", "reposition",
    "reposition_satisfies", "restore_point_encoder", "retarget_caption",
    "rotation_matrix", "rule_refine", "run_pipeline", "sample_relation",
    "sample_rng", "sample_spec", "save_checkpoint", "scene_record",
    "scene_satisfies", "split_components", "subsample", "sweep_n",
    "total_loss", "train_toy", "translate", "validate_refined",
    "write_cloud", "write_history_csv", "write_scene_dir",
]
