"""Unsupervised skeleton action recognition by weak-decoder sequence regeneration."""
from .features import (
    bottleneck,
    cosine_similarity,
    evaluate,
    extract_features,
    knn_classify,
    pca_project,
    train_autoencoder,
)
from .kernels import BACKEND
from .model import FW_RECURRENT_GAIN, ModelDims, Seq2Seq, decode, encode, init_params, reconstruct
from .skeleton import ActionSequence, Dataset, load_dataset, preprocess
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, hyperparam_search, train

__version__ = "0.1.0"

__all__ = [
    "ActionSequence", "BACKEND", "Dataset", "FW_RECURRENT_GAIN", "ModelDims", "Seq2Seq", "SyntheticSpec", "TrainConfig",
    "bottleneck", "cosine_similarity", "decode", "encode", "evaluate", "extract_features",
    "generate_synthetic", "hyperparam_search", "init_params", "knn_classify", "load_dataset",
    "pca_project", "preprocess", "reconstruct", "train", "train_autoencoder",
]
