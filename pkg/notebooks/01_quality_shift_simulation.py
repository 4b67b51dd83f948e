"""
Why a reference score is needed
===============================

One judge rates its own completions and those of one other model.  The judge
adds 0.25 to its own scores and scales quality by 0.8.  We shift the judge's
own quality down, leave it equal, and shift it up, then compare the raw score
gap with the regression estimate.
"""

from selfbias.analyses.bias import estimate_bias
from selfbias.analyses.heatmap import heatmap_means
from selfbias.synth import two_model_config, naive_self_gap, simulate, simulate_quality_shift_suite

suite = simulate_quality_shift_suite(n=2000, seed=7)

print(f"{'panel':8s} {'raw gap':>8s} {'estimate':>9s} {'90% interval':>20s}")
for name, table in suite.items():
    iv = estimate_bias(table).self_bias["judge"]
    print(f"{name:8s} {naive_self_gap(table, 'judge'):8.3f} {iv.estimate:9.3f}   [{iv.lower:.3f}, {iv.upper:.3f}]")

# The raw gap moves by 0.8 times the quality shift while the estimate stays
# near 0.25.  With a shift of -0.3125 the two effects cancel exactly and a
# mean-score table shows nothing at all.
table = simulate(two_model_config(-0.3125, 2000, seed=7))
hm = heatmap_means(table)
print()
print(hm.raw.round(3))
print("estimate with reference:", round(estimate_bias(table).self_bias["judge"].estimate, 3))
