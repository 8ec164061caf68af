import numpy as np
import pytest

import rdslab as rl
from rdslab.base import sample_base
from rdslab.fiber import CoboundaryObservable, ScaledObservable, SystemObservable
from rdslab.limits import (
    SIGMA2_FLOOR,
    BlockConfig,
    LimitsError,
    OrbitEnsemble,
    clt_test,
    coboundary_check,
    condition_h_check,
    covariance_sequence,
    encoding_check,
    lil_probe,
    orbit_birkhoff_sums,
    sigma2_estimate,
)
from rdslab.thermo import gap_estimate, random_smooth_functions

TWO_PI = 2 * np.pi


def constant_observable(spec, c):
    return SystemObservable(rl.make_system(
        branch_count=spec.branch_count, nonlinearity=spec.nonlinearity,
        potential_t=spec.potential_t, potential_amp=spec.potential_amp,
        obs_offset=(c,) * spec.base.alphabet_size, obs_amplitude=0.0,
        obs_phase=spec.obs_phase))


# -- encoding ----------------------------------------------------------------


def test_encoding_zero_frequencies(stats_lab):
    res = encoding_check(stats_lab, (0.0, 0.0), 100, seed=1)
    assert res.lhs == pytest.approx(1.0, abs=1e-12)
    assert abs(res.rhs - 1.0) <= 1e-8
    assert res.within_tolerance


def test_encoding_modulus_bounds(stats_lab):
    res = encoding_check(stats_lab, (0.9, -0.7, 0.5, 0.2), 300, seed=2)
    assert abs(res.lhs) <= 1.0 + 1e-12
    assert abs(res.rhs) <= 1.0 + 1e-6


def test_encoding_single_step(stats_lab):
    res = encoding_check(stats_lab, (0.6,), 500, seed=3)
    assert res.within_tolerance


@pytest.mark.parametrize("draw", range(10))
def test_encoding_identity_random_draws(stats_lab, draw):
    gen = np.random.default_rng(100 + draw)
    n = int(gen.integers(2, 7))
    rs = tuple(gen.uniform(-1, 1, size=n))
    res = encoding_check(stats_lab, rs, 400, seed=200 + draw)
    assert res.within_tolerance, res


# -- condition (H) -----------------------------------------------------------


def test_block_config_validation():
    with pytest.raises(LimitsError):
        BlockConfig(1, 1, 0, (0, 1), (0.4, 0.4))  # boundary count
    with pytest.raises(LimitsError):
        BlockConfig(1, 1, 0, (0, 2, 1), (0.4, 0.4))  # not increasing
    with pytest.raises(LimitsError):
        BlockConfig(1, 1, 0, (0, 1, 2), (1.4, 0.4))  # beyond epsilon0
    with pytest.raises(LimitsError):
        BlockConfig(1, 1, -1, (0, 1, 2), (0.4, 0.4))


def test_condition_h_zero_frequencies(stats_lab):
    cfg = BlockConfig(1, 1, 0, (0, 1, 2), (0.0, 0.0))
    res = condition_h_check(stats_lab, cfg, [0, 2], 120, seed=4)
    for row in res.rows:
        assert row.difference <= 1e-8  # both sides are exactly 1


def test_condition_h_bounded_at_k0(stats_lab):
    cfg = BlockConfig(1, 1, 0, (0, 1, 2), (0.4, 0.4))
    res = condition_h_check(stats_lab, cfg, [0], 120, seed=5)
    assert res.rows[0].difference <= 2.0  # triangle inequality on unit-modulus means


def test_condition_h_decay_matches_gap_rate(stats_lab):
    cfg = BlockConfig(1, 1, 0, (0, 1, 2), (0.4, 0.4))
    res = condition_h_check(stats_lab, cfg, list(range(0, 7)), 300, seed=6)
    assert not res.noise_dominated
    assert res.c_fit > 0
    # the chain integrands are smooth-class, so the matching gap modulus is the
    # smooth-battery one
    xs = [sample_base(stats_lab.spec.base, 42, i) for i in range(4)]
    us = random_smooth_functions(stats_lab.n_points, 3, seed=7)
    fit = gap_estimate(stats_lab, xs, us, range(1, 13))
    rate = -np.log(fit.kappa)
    assert 0.5 * rate <= res.c_fit <= 1.5 * rate


# -- covariance and sigma^2 --------------------------------------------------


def test_covariance_constant_observable(stats_lab):
    g = constant_observable(stats_lab.spec, 0.8)
    cov = covariance_sequence(stats_lab, g, 4, 150, seed=8, orbit_trials=300)
    for row in cov.rows:
        assert abs(row.operator_route) <= 1e-10
        assert abs(row.orbit_route) <= 1e-10


def test_covariance_routes_agree(stats_lab):
    cov = covariance_sequence(stats_lab, None, 8, 400, seed=9, orbit_trials=2000)
    assert cov.rows[0].operator_route > 0  # s_0 = Var(g) >= 0
    for row in cov.rows:
        assert row.agree, vars(row)


def test_covariance_stationarity(stats_lab):
    # empirical Cov(g o T^n, g o T^{n+m}) independent of n within MC error
    g = stats_lab.observable
    _, sums = orbit_birkhoff_sums(stats_lab, g, range(1, 25), 4000, seed=10, stream=71)
    inc = np.vstack([sums[0], np.diff(sums, axis=0)])
    for m in (0, 1, 3):
        vals = {}
        for n in (0, 5, 20):
            a = inc[n] - inc[n].mean()
            b = inc[n + m] - inc[n + m].mean()
            prod = a * b
            vals[n] = (prod.mean(), prod.std(ddof=1) / np.sqrt(len(prod)))
        for n in (5, 20):
            diff = abs(vals[n][0] - vals[0][0])
            assert diff <= 4 * np.hypot(vals[n][1], vals[0][1])


def test_sigma2_constant_observable(stats_lab):
    g = constant_observable(stats_lab.spec, -0.3)
    rep = sigma2_estimate(stats_lab, g, M=4, n_base_samples=100, n_var=500, trials=200, seed=11)
    assert abs(rep.sigma2_series) <= 1e-10
    assert rep.sigma2_mc <= 1e-10


def test_sigma2_coboundary_telescopes(stats_lab):
    g = CoboundaryObservable(stats_lab.spec, const=0.4)
    rep = sigma2_estimate(stats_lab, g, M=8, n_base_samples=300, n_var=2000, trials=400, seed=12)
    assert abs(rep.sigma2_series) <= 0.01
    assert rep.sigma2_mc <= 0.01
    assert rep.mu_estimate == pytest.approx(0.4, abs=0.01)


def test_sigma2_default_positive_and_agrees(stats_lab):
    rep = sigma2_estimate(stats_lab, None, M=10, n_base_samples=400, n_var=4000,
                          trials=800, seed=13)
    assert rep.sigma2_series > SIGMA2_FLOOR
    assert rep.agreement
    assert rep.tail_ok


def test_sigma2_scale_equivariance(stats_lab):
    g = stats_lab.observable
    a = sigma2_estimate(stats_lab, g, M=8, n_base_samples=400, n_var=4000, trials=800, seed=14)
    b = sigma2_estimate(stats_lab, ScaledObservable(g, 2.0), M=8, n_base_samples=400,
                        n_var=4000, trials=800, seed=15)
    assert b.sigma2_series == pytest.approx(4.0 * a.sigma2_series, rel=0.10)


# -- CLT, LIL, coboundary ----------------------------------------------------


def test_clt_zero_observable(stats_lab):
    g = constant_observable(stats_lab.spec, 0.0)
    res = clt_test(stats_lab, g, sigma2=0.0, n=200, trials=100, seed=16)
    assert res.status.startswith("degenerate")
    assert res.sample_var == pytest.approx(0.0, abs=1e-20)


def test_clt_requires_sigma2(stats_lab):
    with pytest.raises(LimitsError):
        clt_test(stats_lab, None, sigma2=None, n=100, trials=50, seed=17)


def test_clt_small_run_consistency(stats_lab):
    rep = sigma2_estimate(stats_lab, None, M=8, n_base_samples=300, n_var=2000,
                          trials=500, seed=18)
    res = clt_test(stats_lab, None, sigma2=rep.sigma2_series, n=2000, trials=500, seed=18)
    assert res.status == "ok"
    assert res.p_value > 0.01
    assert res.centering_consistent  # Birkhoff consistency of the sampler


def test_lil_probe_shapes_and_monotonicity(stats_lab):
    res = lil_probe(stats_lab, None, n_max=3000, trials=60, seed=19)
    assert res.monotone
    assert res.trajectories.shape == (len(res.checkpoints), 60)
    assert len(res.median_trajectory) == len(res.checkpoints)


def test_lil_default_median_smoke(stats_lab):
    # the iterated-logarithm normalization converges only logarithmically:
    # qualitative window, not a tolerance claim
    res = lil_probe(stats_lab, None, n_max=100_000, trials=200, seed=42)
    assert res.monotone
    assert 0.5 <= res.median_terminal <= 1.5


def test_lil_coboundary_statistic_tends_to_zero(stats_lab):
    g = CoboundaryObservable(stats_lab.spec, const=0.0)
    res = lil_probe(stats_lab, g, n_max=3000, trials=60, seed=20, sigma2=1.0)
    # the running max is attained early and never grows afterwards
    third = len(res.median_trajectory) // 3
    assert res.median_trajectory[-1] <= res.median_trajectory[third] + 1e-12
    # the per-n statistic itself tends to zero: |S_n - n mu| <= 2 ||k||
    n = 3000
    _, sums = orbit_birkhoff_sums(stats_lab, g, [n], 60, seed=20, stream=31)
    stat = np.abs(sums[0] - n * 0.0) / np.sqrt(2 * n * np.log(np.log(n)))
    assert np.median(stat) < 0.05


def test_coboundary_check_verdicts(stats_lab):
    g = CoboundaryObservable(stats_lab.spec, const=0.25)
    res = coboundary_check(stats_lab, g, n_list=(100, 400, 1600), trials=400, seed=21)
    assert res.verdict == "coboundary-consistent"
    assert all(v <= 2.0 + 1e-6 for v in res.l2_norms)  # telescoping bound, ||k||_inf <= 1
    assert res.quarter_decreasing
    default = coboundary_check(stats_lab, None, n_list=(100, 400, 1600), trials=400, seed=22)
    assert default.verdict == "not coboundary"


def test_coboundary_zero_observable(stats_lab):
    g = constant_observable(stats_lab.spec, 0.0)
    res = coboundary_check(stats_lab, g, n_list=(50, 200), trials=100, seed=23)
    assert all(v == 0.0 for v in res.l2_norms)


# -- orbit machinery ---------------------------------------------------------


def test_orbit_ensemble_levels(stats_lab):
    ens = OrbitEnsemble(stats_lab, 50, 3, 5, fwd=4, depth=12, nu_levels=(0, 4), rho_levels=(0,))
    assert ens.nu_snap[0].shape == (50, stats_lab.n_points)
    assert np.allclose(ens.nu_snap[0].sum(axis=1), 1.0)
    assert np.allclose(ens.lam_at(0), 1.0, atol=1e-10)  # geometric potential
    z = ens.sample_z(0)
    assert np.all((0 <= z) & (z < 1))


def test_orbit_sums_threads_identical(stats_lab):
    t1 = orbit_birkhoff_sums(stats_lab, stats_lab.observable, [400], 1100, seed=24, stream=9,
                             threads=1)[1]
    t8 = orbit_birkhoff_sums(stats_lab, stats_lab.observable, [400], 1100, seed=24, stream=9,
                             threads=8)[1]
    assert np.array_equal(t1, t8)


def test_orbit_bias_warning_flag(gibbs_lab):
    res = encoding_check(gibbs_lab, (0.3,), 50, seed=25)
    assert res.orbit_bias_warning  # non-geometric potential


def test_perturbed_integral_normalization_at_zero_frequency(stats_lab):
    # the assumption-6 functional at r = 0 is exactly the normalized mass: F = 1
    lab = stats_lab
    for i in range(4):
        x = sample_base(lab.spec.base, 30, i)
        y = x.shift_by(-5)
        u = rl.GridFunction(lab.rho(y).values.astype(complex), fiber=y)
        chain = lab.iterate(y, u, 5, kind="perturbed", r_sequence=(0.0,) * 5)
        val = lab.nu(x).integrate(chain.values)
        assert abs(val - 1.0) <= 1e-9


def test_assumption6_modulus_bound(stats_lab):
    from rdslab.thermo import regularity_pairs

    pairs = regularity_pairs(stats_lab.spec.base, 7, [2, 4], 1)
    res = rl.assumption6_check(stats_lab, [2, 4], 2, pairs, 7)
    for rec in res.table:
        assert rec["sup"] <= 1.0 + 1e-6  # characteristic functionals have modulus <= 1


def test_covariance_decay_dominance(stats_lab):
    # |s_m| decays at least geometrically down to the Monte Carlo floor
    cov = covariance_sequence(stats_lab, None, 10, 400, seed=26, orbit_trials=1200)
    s = [abs(r.operator_route) for r in cov.rows]
    se = [r.operator_se for r in cov.rows]
    for m in range(1, len(s)):
        assert s[m] <= max(0.55 * s[m - 1], 4.0 * se[m])


def test_condition_h_multi_block(stats_lab):
    cfg = BlockConfig(2, 1, 0, (0, 2, 3, 5), (0.3, -0.4, 0.25))
    res = condition_h_check(stats_lab, cfg, [0, 1, 2, 3], 150, seed=27)
    assert len(res.rows) == 4
    ops = [r.operator_term for r in res.rows]
    assert ops[0] > 0 and ops[-1] < ops[0]  # the gap summand decays
    zero = BlockConfig(2, 1, 0, (0, 2, 3, 5), (0.0, 0.0, 0.0))
    rz = condition_h_check(stats_lab, zero, [0, 2], 60, seed=27)
    assert all(r.difference <= 1e-8 for r in rz.rows)
