"""End-to-end analyses built on the design and estimator layers."""
from .agreement import (AgreementReport, DimensionAgreement, GoldResult, agreement_report, gold_accuracy,
                        judge_reference_correlation, krippendorff_alpha, observed_agreement, spearman_rho)
from .bias import (debias_scores, debiased_table, estimate_bias, lofo_reference, robustness_drop_models,
                   robustness_gam, robustness_length, robustness_lofo, robustness_ordinal, slice_bias)
from .heatmap import Heatmap, heatmap_means
from .report import BiasReport, read_reports_json, reports_frame, write_reports_csv, write_reports_json

__all__ = [
    "AgreementReport", "BiasReport", "DimensionAgreement", "GoldResult", "Heatmap", "agreement_report",
    "debias_scores", "debiased_table", "estimate_bias", "gold_accuracy", "heatmap_means",
    "judge_reference_correlation", "krippendorff_alpha", "lofo_reference", "observed_agreement",
    "read_reports_json", "reports_frame", "robustness_drop_models", "robustness_gam", "robustness_length",
    "robustness_lofo", "robustness_ordinal", "slice_bias", "spearman_rho", "write_reports_csv",
    "write_reports_json",
]
