import numpy as np
import pytest
import yaml

from conftest import random_hurwitz
from errors import ExcitationError, InputError, NonConvergenceError, RankDeficiencyError
from estimator import (
    RECTANGLE, GramMatrices, cost, cost_from_grams, cost_split, discrete_minimizer, fit_linear,
    gram_matrices, minimizer, minimizer_gradient_flow, pe_check, sample_matrices,
    save_report, symmetry_defect,
)
from integrator import integrate
from systems import linear_field, spectral_abscissa, system_registry


def _gram(gamma2, gamma1=None):
    gamma2 = np.asarray(gamma2, dtype=float)
    n = gamma2.shape[0]
    return GramMatrices(
        gamma1=np.zeros((n, n)) if gamma1 is None else np.asarray(gamma1, dtype=float),
        gamma2=gamma2, gamma0=None, horizon=1.0, rule='trapezoid', dt=0.1,
        x_start=np.ones(n), x_end=np.zeros(n),
    )


def test_pe_check_closed_form():
    g = _gram([[1 / 2, 1 / 3], [1 / 3, 1 / 4]])
    expected = (3 / 4 - np.sqrt(9 / 16 - 4 / 72)) / 2
    pe = pe_check(g, pe_tol=1e-10)
    assert pe.lambda_min == pytest.approx(expected, rel=1e-12)
    assert pe.excited


def test_pe_check_singular():
    pe = pe_check(_gram([[1.0, 1.0], [1.0, 1.0]]), pe_tol=1e-10)
    assert not pe.excited


def test_minimizer_recovers_linear_system(diag_trajectory):
    g = gram_matrices(diag_trajectory)
    est = minimizer(g, diag_trajectory)
    np.testing.assert_allclose(est.a_hat, [[-1.0, 0.0], [0.0, -2.0]], atol=1e-10)
    assert est.residual_cost < 1e-16
    assert est.hurwitz
    assert est.spectral_abscissa == pytest.approx(-1.0, abs=1e-10)


@pytest.mark.parametrize('n', [2, 3])
def test_exact_recovery_random_hurwitz(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        a = random_hurwitz(rng, n)
        x0 = rng.standard_normal(n)
        traj = integrate(linear_field(a, 'linear:random'), x0, 1.0, dt=1e-3)
        est = minimizer(gram_matrices(traj), traj)
        assert np.linalg.norm(est.a_hat - a, 'fro') < 1e-6
        assert est.residual_cost < 1e-8


def test_eigenvector_trajectory_not_excited(diag_field):
    traj = integrate(diag_field, [1.0, 0.0], 4.0)
    with pytest.raises(ExcitationError) as err:
        minimizer(gram_matrices(traj), traj)
    assert err.value.lambda_min == pytest.approx(0.0, abs=1e-15)


def test_zero_trajectory_diagnostic_pseudo_solve(vdp):
    traj = integrate(vdp, [0.0, 0.0], 4.0)
    g = gram_matrices(traj)
    with pytest.raises(ExcitationError):
        fit_linear(g)
    a_hat, pe = fit_linear(g, diagnostic=True)
    assert not pe.excited
    np.testing.assert_array_equal(a_hat, np.zeros((2, 2)))


def test_cost_forms_agree(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = rng.standard_normal((2, 2))
        assert cost_from_grams(a, g) == pytest.approx(cost(a, vdp_trajectory), rel=1e-10)


def test_strict_midpoint_convexity(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b = rng.standard_normal((2, 2, 2))
        mid = cost_from_grams((a + b) / 2.0, g)
        assert mid < (cost_from_grams(a, g) + cost_from_grams(b, g)) / 2.0


def test_minimizer_is_optimal(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    est = minimizer(g, vdp_trajectory)
    j_min = cost_from_grams(est.a_hat, g)
    rng = np.random.default_rng(3)
    for _ in range(100):
        v = rng.standard_normal((2, 2))
        v /= np.linalg.norm(v)
        for eps in (0.01, 0.1):
            assert cost_from_grams(est.a_hat + eps * v, g) > j_min


def test_cost_split_identity(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    est = minimizer(g, vdp_trajectory)
    rng = np.random.default_rng(4)
    for _ in range(20):
        a = est.a_hat + rng.standard_normal((2, 2))
        excess = cost_from_grams(a, g) - cost_from_grams(est.a_hat, g)
        assert cost_split(a, est.a_hat, g) == pytest.approx(excess, abs=1e-8)


@pytest.mark.parametrize('system_id', ['vdp_reverse', 'unbounded', 'rational'])
def test_symmetry_identity(system_id):
    field = system_registry.get(system_id)
    traj = integrate(field, [0.5, 0.5], 4.0, dt=1e-3)
    assert symmetry_defect(gram_matrices(traj)) < 1e-6


def test_lyapunov_margin_matches_boundary_terms(vdp):
    traj = integrate(vdp, [0.5, 0.5], 4.0, dt=1e-3)
    g = gram_matrices(traj)
    est = minimizer(g, traj)
    boundary = np.outer(g.x_end, g.x_end) - np.outer(g.x_start, g.x_start)
    assert est.lyapunov_margin == pytest.approx(np.linalg.eigvalsh(boundary)[-1], abs=1e-5)


def test_vdp_fit_is_hurwitz_and_observable(vdp_trajectory):
    est = minimizer(gram_matrices(vdp_trajectory), vdp_trajectory)
    assert spectral_abscissa(est.a_hat) < 0
    assert est.observable


def test_fit_approaches_jacobian_near_origin(vdp):
    a = vdp.analytic_jacobian_at_origin
    direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
    errors = []
    for r in (0.4, 0.2, 0.1, 0.05):
        traj = integrate(vdp, r * direction, 4.0)
        errors.append(np.linalg.norm(minimizer(gram_matrices(traj), traj).a_hat - a, 'fro'))
    assert all(later <= earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] < 0.05


@pytest.mark.parametrize('system_id', ['vdp_reverse', 'unbounded', 'rational'])
def test_gradient_flow_matches_direct_solve(system_id):
    field = system_registry.get(system_id)
    traj = integrate(field, [0.5, 0.5], 4.0)
    g = gram_matrices(traj)
    direct = minimizer(g, traj)
    flow = minimizer_gradient_flow(g, tol=1e-13)
    assert np.linalg.norm(flow.a_hat - direct.a_hat, 'fro') < 1e-8
    assert flow.iterations < 100_000
    assert flow.method == 'gradient'


def test_gradient_flow_first_step(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    step = 0.5 / np.linalg.eigvalsh(g.gamma2)[-1]
    with pytest.raises(NonConvergenceError) as err:
        minimizer_gradient_flow(g, step=step, max_iters=1)
    np.testing.assert_allclose(err.value.final, step * g.gamma1, rtol=1e-14)
    assert err.value.iterations == 1


def test_gradient_flow_unstable_step(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    with pytest.raises(InputError):
        minimizer_gradient_flow(g, step=2.5 / np.linalg.eigvalsh(g.gamma2)[-1])


def test_discrete_estimator_matches_rectangle_rule(vdp):
    traj = integrate(vdp, [1.0, 0.0], 4.0, dt=0.1)
    x, x_dot = sample_matrices(traj, 40)
    g = gram_matrices(traj, rule=RECTANGLE, horizon=4.0)
    direct = minimizer(g, traj)
    np.testing.assert_allclose(discrete_minimizer(x, x_dot), direct.a_hat, atol=1e-10)


def test_discrete_estimator_rank_deficient():
    x = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(RankDeficiencyError):
        discrete_minimizer(x, x)


def test_rectangle_rule_uses_n_samples(vdp):
    traj = integrate(vdp, [1.0, 0.0], 4.0, dt=0.1)
    g = gram_matrices(traj, rule=RECTANGLE, horizon=4.0)
    x, _ = sample_matrices(traj, 40)
    np.testing.assert_allclose(g.gamma2, 0.1 * x @ x.T, atol=1e-14)
    np.testing.assert_array_equal(g.x_end, traj.states[40])


def test_unknown_rule(vdp_trajectory):
    with pytest.raises(InputError):
        gram_matrices(vdp_trajectory, rule='simpson')


def test_report_round_trip(tmp_path, vdp_trajectory):
    est = minimizer(gram_matrices(vdp_trajectory), vdp_trajectory)
    record = yaml.safe_load(save_report(est, tmp_path / 'estimate.yml').read_text())
    np.testing.assert_array_equal(np.reshape(record['a_hat'], record['shape']), est.a_hat)
    assert record['lambda_min_gamma2'] == est.lambda_min_gamma2
    assert record['method'] == 'direct'


def test_gram_matrices_of_decoupled_exponentials(diag_field):
    # s(t) = (e^-t, e^-2t); the tail after convergence is negligible
    traj = integrate(diag_field, [1.0, 1.0], 20.0, dt=1e-3)
    g = gram_matrices(traj)
    np.testing.assert_allclose(g.gamma2, [[1 / 2, 1 / 3], [1 / 3, 1 / 4]], atol=1e-6)
    np.testing.assert_allclose(g.gamma1, [[-1 / 2, -1 / 3], [-2 / 3, -1 / 2]], atol=1e-6)


def test_trapezoid_fit_is_second_order(vdp):
    fits = []
    for dt in (0.1, 0.05, 0.025):
        traj = integrate(vdp, [0.5, 0.5], 4.0, dt=dt)
        fits.append(minimizer(gram_matrices(traj), traj).a_hat)
    coarse = np.linalg.norm(fits[0] - fits[1], 'fro')
    fine = np.linalg.norm(fits[1] - fits[2], 'fro')
    assert np.log2(coarse / fine) >= 1.9


def test_gradient_flow_from_minimizer_takes_no_steps(vdp_trajectory):
    g = gram_matrices(vdp_trajectory)
    direct = minimizer(g, vdp_trajectory)
    flow = minimizer_gradient_flow(g, b0=direct.a_hat, tol=1e-10)
    assert flow.iterations == 0
    np.testing.assert_array_equal(flow.a_hat, direct.a_hat)


@pytest.mark.parametrize('k', [2, 5, 12])
def test_gradient_flow_iterates_with_identity_gram(k):
    gamma1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    step = 0.3
    with pytest.raises(NonConvergenceError) as err:
        minimizer_gradient_flow(_gram(np.eye(2), gamma1), step=step, max_iters=k)
    np.testing.assert_allclose(err.value.final, (1.0 - (1.0 - step) ** k) * gamma1, rtol=1e-12)
    assert err.value.iterations == k
