"""4D whole-heart mesh reconstruction from multi-view 2D cine sequences.

Synthetic-cohort pipeline: domain-specific sequence autoencoders, a
cycle-consistent adversarial mapping between their latent spaces with an
ejection-fraction regularizer, and a geometric evaluation suite.
"""

from .config import RunConfig, default_config, load_config
from .dataset import CineSequence, make_unpaired_pools, render_cine, zscore_normalize
from .evaluate import EvalConfig, EvalReport, evaluate_samples, pearson
from .imageae import ImageSequenceAutoencoder
from .mapping import EjectionFractionRegressor, LatentCycleMapper, infer_mesh_video
from .meshae import MeshSequenceAutoencoder
from .shapemodel import MeshShapeModel, MotionModel, generate_cohort, synth_base_heart
from .trajectory import TrajectoryCode, latent_point

__version__ = "0.1.0"

__all__ = [
    "CineSequence",
    "EjectionFractionRegressor",
    "EvalConfig",
    "EvalReport",
    "ImageSequenceAutoencoder",
    "LatentCycleMapper",
    "MeshSequenceAutoencoder",
    "MeshShapeModel",
    "MotionModel",
    "RunConfig",
    "TrajectoryCode",
    "default_config",
    "evaluate_samples",
    "generate_cohort",
    "infer_mesh_video",
    "latent_point",
    "load_config",
    "make_unpaired_pools",
    "pearson",
    "render_cine",
    "synth_base_heart",
    "zscore_normalize",
]
