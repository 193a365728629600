"""Toolkit for detecting intact virus particles in TEM-style images.

Submodules:
    raster      core image types, patching, bit-exact I/O
    synthgen    deterministic synthetic scenes with exact ground truth
    classical   contrast/median/Hough/halo candidate-proposal pipeline
    nnet        from-scratch U-Net, Adam, gradient check, checkpoints
    training    patch datasets, augmentation, training loop, k-fold CV
    postdetect  mask cleanup, instance extraction, report overlays
    evalmetrics detection matching and precision/recall/F/Dice/IoU
    service     HTTP annotation-session service
    cli         command-line entry points
"""

__version__ = "0.1.0"

from .classical import CandidateCircle, ClassicalParams, propose_candidates
from .evalmetrics import MetricsReport, dice, evaluate_image, iou, match_detections
from .nnet import TrainHyper, UNetConfig, build_unet, load_checkpoint, save_checkpoint
from .postdetect import DetectedInstance, clean_mask, extract_instances
from .raster import read_image, write_image
from .synthgen import SceneSpec, SceneTruth, generate_corpus, generate_scene
from .training import AugmentConfig, infer_full_image, kfold_split, run_crossval, train

__all__ = [
    "AugmentConfig",
    "CandidateCircle",
    "ClassicalParams",
    "DetectedInstance",
    "MetricsReport",
    "SceneSpec",
    "SceneTruth",
    "TrainHyper",
    "UNetConfig",
    "build_unet",
    "clean_mask",
    "dice",
    "evaluate_image",
    "extract_instances",
    "generate_corpus",
    "generate_scene",
    "infer_full_image",
    "iou",
    "kfold_split",
    "load_checkpoint",
    "match_detections",
    "propose_candidates",
    "read_image",
    "run_crossval",
    "save_checkpoint",
    "train",
    "write_image",
]
