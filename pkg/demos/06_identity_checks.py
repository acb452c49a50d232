"""Run the Monte Carlo identity battery at demonstration scale.

Each check compares a sampled quantity against either an exact value or a
second, independently sampled estimator, and reports a z-score.  At 4000
replicates the error bars are honest but loose; the test suite runs the
same checks at 100000.
"""

from deposim import build_asep, build_marginal
from deposim.checks import (
    check_coupling_soundness,
    check_flux_variance_second_class,
    check_flux_variance_two_point,
    check_second_class_speed,
    check_sum_rule,
    check_two_point_drift,
    check_two_point_nonnegative,
    check_two_point_second_class,
    run_coupled_ensemble,
    run_plain_ensemble,
)

spec = build_asep(1.0)
m = build_marginal(spec, 0.0)
L, t, reps = 256, 2.0, 4000

plain = run_plain_ensemble(spec, m, L, t, reps, seed=11, v_list=(0.0, 0.5))
coupled = run_coupled_ensemble(spec, m, L, t, reps, seed=23,
                               offsets=plain.offsets, v_list=(0.0, 0.5))

for rep in [
    check_flux_variance_two_point(plain, 0.0),
    check_flux_variance_two_point(plain, 0.5),
    check_two_point_drift(plain),
    check_sum_rule(plain),
    check_two_point_nonnegative(plain),
    check_two_point_second_class(plain, coupled),
    check_flux_variance_second_class(plain, coupled, 0.0),
    check_second_class_speed(coupled),
    check_coupling_soundness(coupled),
]:
    print(rep.summary_line())
