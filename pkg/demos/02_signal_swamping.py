"""Signal swamping: when an EMA state stops responding to its signals.

Under nearest rounding, an update lands back on the same code whenever it
stays inside the level's radius.  With momentum beta the update shrinks by
(1 - beta), so above a scheme-dependent threshold *every* in-range signal
is absorbed and the quantized state freezes.  This script prints those
thresholds and then reproduces the failure mode on synthetic data: a
1000-element state fed i.i.d. uniform signals should converge to the mean
0.5, and the frozen schemes visibly do not.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from lowbit_optim import (
    BlockQuantization,
    RoundingMode,
    build_de_levels,
    build_linear_levels,
    build_log_levels,
    radius_stats,
    swamping_beta_threshold,
)
from lowbit_optim.harness import uniform_signal_experiment

print("=== momentum thresholds for guaranteed swamping (fixed scale) ===")
print(f"{'bits':>4} {'linear unsigned (all levels)':>30} {'DE unsigned (half of levels)':>30}")
for bits in (8, 4, 3, 2):
    lin = swamping_beta_threshold(radius_stats(build_linear_levels(bits)), False, "min")
    de = swamping_beta_threshold(radius_stats(build_de_levels(bits)), False, "median")
    print(f"{bits:>4} {lin:>30.3f} {de:>30.3f}")
print()
print("The second-moment EMA usually runs at beta = 0.999: above every")
print("threshold in the table, down to 2 bits.")
print()

# One quantization block on purpose: a per-block scale would shrink the
# effective tensor and partially hide the effect.
n, beta, seed = 1000, 0.999, 2024
configs = {
    "fp32": None,
    "linear 2-bit, nearest": BlockQuantization(
        build_linear_levels(2), RoundingMode.NEAREST, n),
    "DE 2-bit, nearest": BlockQuantization(
        build_de_levels(2), RoundingMode.NEAREST, n),
    "log 2-bit, dithered": BlockQuantization(
        build_log_levels(2, 0.5), RoundingMode.LOG_DITHER, n, p_quantile=0.1),
}

print(f"=== uniform-signal EMA, n={n}, beta={beta} ===")
print("(initial states are uniform too, so a frozen scheme keeps a mean near")
print("0.5 by construction; watch the spread and the share of moved codes)")
fig, axes = plt.subplots(1, len(configs), figsize=(4 * len(configs), 3), sharey=True)
for iters in (100, 1000, 2000):
    print(f"--- {iters} iterations ---")
    for ax, (label, cfg) in zip(axes, configs.items()):
        report = uniform_signal_experiment(n, beta, cfg, iters, seed)
        final = report.final
        stuck = final["fraction_codes_never_changed"]
        stuck_text = "-" if stuck is None else f"{stuck:.0%}"
        print(f"{label:<24} mean {final['final_mean']:.3f}   "
              f"std {final['final_std']:.3f}   codes never changed: {stuck_text}")
        if iters == 100:  # the histogram figure shows the 100-iteration horizon
            edges = np.asarray(final["histogram_edges"])
            ax.stairs(final["histogram_counts"], edges, fill=True)
            ax.axvline(0.5, color="k", linestyle="--", linewidth=1)
            ax.set_title(f"{label}\nmean={final['final_mean']:.3f}", fontsize=9)
            ax.set_xlabel("state value")

fig.suptitle("Distribution of EMA states after 100 uniform [0,1] signals (target mean 0.5)")
fig.tight_layout()
out = Path(__file__).parent / "output" / "signal_swamping.png"
out.parent.mkdir(exist_ok=True)
fig.savefig(out, dpi=120)
print(f"\nhistograms written to {out}")
print("The nearest-rounded 2-bit states never move a single code at any")
print("horizon: their spread stays at the initial 0.32 while the exact EMA")
print("contracts toward 0.5.  The dithered logarithmic states keep escaping")
print("and contracting; dithering is unbiased in code space, so a modest")
print("upward value-space bias (Jensen gap across level ratios) remains,")
print("the price paid for never freezing and for exact expected decay.")
