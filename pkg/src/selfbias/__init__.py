"""Estimate self- and family-bias of LLM judges against reference scores."""
from .dataset import (DataError, ModelConfig, RatingRow, RatingsTable, ScaleDef, aggregate_reference,
                      filter_table, load_config, load_ratings, normalize_score, write_ratings)
from .design import DesignMatrix, NoOverlapError, add_length_control, build_design, gam_design
from .estimators import FitResult, OrdinalFit, WaldInterval, ols_fit, ordinal_fit, robust_covariance, wald
from .analyses import BiasReport, estimate_bias
from .synth import SimConfig, simulate

__version__ = "0.1.0"
