"""Depth tails: the umbrella forest against the independent baseline.

The umbrella construction keeps progeny trees as short as stationarity
allows: the depth tail decays like n^-(d-1), against n^-1/2 for the
independent-direction baseline.  A few dozen medium windows are enough to
separate the two exponents cleanly.
"""

from umbrellaforest.pipeline import TailJob, tail_experiment
from umbrellaforest.stats import exponent_fit

GRID = (8, 16, 32, 64)

umbrella = tail_experiment(
    TailJob(dim=2, side=512, margin=64, seed=7, grid=GRID), replicas=24, threads=2)
baseline = tail_experiment(
    TailJob(dim=2, side=512, margin=0, seed=7, grid=GRID, kind="baseline"),
    replicas=24, threads=2)

print(f"{'n':>4} {'umbrella p':>12} {'n*p':>8} {'baseline p':>12} {'sqrt(n)*p':>10}")
for ru, rb in zip(umbrella.rows(), baseline.rows()):
    n = ru["n"]
    print(f"{n:>4} {ru['p_hi']:>12.5f} {ru['n_pow_dm1_p_hi']:>8.3f} "
          f"{rb['p_hi']:>12.5f} {n ** 0.5 * rb['p_hi']:>10.3f}")

fit_u = exponent_fit(umbrella)["hi"]
fit_b = exponent_fit(baseline)["hi"]
print(f"\numbrella tail exponent: {fit_u[0]:+.3f} +- {fit_u[1]:.3f}  (short trees)")
print(f"baseline tail exponent: {fit_b[0]:+.3f} +- {fit_b[1]:.3f}  (diffusive trees)")
