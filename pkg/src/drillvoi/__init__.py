"""drillvoi: value-of-information analysis for drill-hole sampling.

A library (plus batch CLI) that resamples a known 3D grade model under
competing drilling strategies, fits Gaussian Process regression and scores
the predictions, producing performance curves, gain tables and incremental
cost/reward estimates.
"""

from .grid_model import (
    Bench,
    FieldSpec,
    GradeModel,
    Rect,
    TrainingSet,
    boundary_distance,
    collar_distance_field,
    extract_columns,
    load_block_model,
    save_block_model,
    synthesize_field,
)
from .gp import (
    FitError,
    Hyperparameters,
    IllConditionedError,
    PosteriorField,
    fit,
    kernel,
    nlml,
    posterior,
)
from .lattice import (
    DensityState,
    LatticeHierarchy,
    average_spacing,
    build_hierarchy,
    training_collars,
)
from . import metrics
from . import strategies
from . import analysis
from . import experiment

__version__ = "0.1.0"
