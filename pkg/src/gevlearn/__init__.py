"""Discriminative multiclass features from generalized eigenvectors of
class-conditional second moments, with the downstream pieces needed to use
them: nonlinear expansion, an optional randomized cosine front end, a
multinomial logit classifier, ensembling, and a CLI."""

from .classifier import Metrics, MultiLogitModel, TrainOptions, ensemble_geomean
from .featmap import FeatureLayout, Standardizer, psi
from .geneig import Detector, EigenPairSet, select_detectors, solve_pair, solve_quotient
from .ingest import LabeledDataset, load, split
from .moments import MomentStats, accumulate, finalize, merge, regularize
from .pairsel import PairPlan, all_pairs, hypercube_pairs, random_pairs
from .pipeline import (
    FitConfig,
    GemModel,
    RffSpec,
    fit_deep_gem,
    fit_ensemble,
    fit_gem,
    fit_gem_rff,
    fit_rff,
    fit_stacked_gem,
    grid_search,
    load_model,
    save_model,
)
from .rff import RffMap, apply as rff_apply, sample_map

__version__ = "0.1.0"
