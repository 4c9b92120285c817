"""Batch-aligned learning of graph Laplacian eigenspaces.

Per-batch analytic spectral embeddings are registered onto a fixed
reference frame through shared anchor nodes, and a network learns to map
raw features to the registered coordinates.
"""
from .align import AffineMap, AnchorFrame, RansacConfig, align_batch, fit_affine, fit_affine_ransac
from .dataset import Dataset, generate_toy, load_csv, save_csv
from .errors import SpecAlignError
from .graph import GraphConfig, build_graph, laplacian
from .metrics import MetricsReport, acc, grassmann_distance, kmeans, nmi, orthogonality_defect
from .net import Mlp, MlpSpec
from .spectral import Embedding, embed
from .trainer import JointConfig, TrainConfig, infer, train, train_joint

__version__ = "0.1.0"

__all__ = [
    "AffineMap", "AnchorFrame", "Dataset", "Embedding", "GraphConfig", "JointConfig",
    "MetricsReport", "Mlp", "MlpSpec", "RansacConfig", "SpecAlignError", "TrainConfig",
    "acc", "align_batch", "build_graph", "embed", "fit_affine", "fit_affine_ransac",
    "generate_toy", "grassmann_distance", "infer", "kmeans", "laplacian", "load_csv", "nmi",
    "orthogonality_defect", "save_csv", "train", "train_joint",
]
