"""
Agreement among human annotators
================================

Krippendorff's alpha, the share of unanimous items and rank correlations
between each judge and the reference.
"""

from selfbias.analyses.agreement import agreement_report, judge_reference_correlation, krippendorff_alpha
from selfbias.synth import discretize, nine_model_config, simulate

# A small reliability example with missing ratings: four coders, twelve units.
units = [[1, 1, None, 1], [2, 2, 3, 2], [3, 3, 3, 3], [3, 3, 3, 3], [2, 2, 2, 2], [1, 2, 3, 4],
         [4, 4, 4, 4], [1, 1, 2, 1], [2, 2, 2, 2], [None, 5, 5, 5], [None, None, 1, 1], [None, 3, None, None]]
print("interval alpha", round(krippendorff_alpha(units, "interval"), 3))
print("ordinal alpha ", round(krippendorff_alpha(units, "ordinal"), 3))

table = discretize(simulate(nine_model_config(num_prompts=100, seed=4, annotators=3, lengths=False)))
print()
print(agreement_report(table, both_metrics=True).to_frame().round(3).to_string(index=False))

corr = judge_reference_correlation(table)
print()
print(corr.pivot(index="judge", columns="dimension", values="rho").round(2).to_string())
