import logging

import numpy as np
import pytest

from tumbledock import transcription as tr
from tumbledock.errors import DimensionMismatch, EvaluatorFailure
from tumbledock.nlp import (
    LOG_COLUMNS, Multipliers, NLPProblem, SQPSettings, gradient, kkt_residuals, solve, solve_qp,
)

CENTRAL = SQPSettings(gradient="central-fd", kkt_tol=1e-10)


# -- QP subproblem ------------------------------------------------------------

def random_qp(seed, n=8, me=2, mi=10):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    G = M @ M.T + n * np.eye(n)
    a = rng.normal(size=n)
    Ae, be = rng.normal(size=(me, n)), rng.normal(size=me)
    Ai = rng.normal(size=(mi, n))
    x_feas = np.linalg.lstsq(Ae, be, rcond=None)[0]
    bi = Ai @ x_feas - rng.uniform(0, 1, mi)  # x_feas is strictly feasible
    return G, a, Ae, be, Ai, bi


@pytest.mark.parametrize("seed", range(6))
def test_qp_kkt_certificate(seed):
    G, a, Ae, be, Ai, bi = random_qp(seed)
    r = solve_qp(G, a, Ae, be, Ai, bi)
    assert r.ok
    x = r.x
    assert np.max(np.abs(Ae @ x - be)) <= 1e-10
    assert np.min(Ai @ x - bi) >= -1e-10
    assert np.min(r.lam_in) >= -1e-12
    assert np.max(np.abs(r.lam_in * (Ai @ x - bi))) <= 1e-10
    stat = G @ x + a - Ae.T @ r.lam_eq - Ai.T @ r.lam_in
    assert np.max(np.abs(stat)) <= 1e-10


def test_qp_equality_only_matches_linear_kkt():
    G, a, Ae, be, _, _ = random_qp(11, n=5, me=2, mi=0)
    K = np.block([[G, -Ae.T], [Ae, np.zeros((2, 2))]])
    sol = np.linalg.solve(K, np.concatenate([-a, be]))
    r = solve_qp(G, a, Ae, be)
    np.testing.assert_allclose(r.x, sol[:5], atol=1e-12)
    np.testing.assert_allclose(r.lam_eq, sol[5:], atol=1e-12)


def test_qp_unconstrained_and_infeasible():
    G = np.diag([2.0, 4.0])
    r = solve_qp(G, np.array([-2.0, -8.0]))
    np.testing.assert_allclose(r.x, [1.0, 2.0])
    # x1 >= 1 and -x1 >= 0 cannot both hold
    r = solve_qp(G, np.zeros(2), A_in=np.array([[1.0, 0.0], [-1.0, 0.0]]), b_in=np.array([1.0, 0.0]))
    assert r.status == "infeasible" and not r.ok


# -- SQP ----------------------------------------------------------------------

def quad_problem(scale=1.0):
    return NLPProblem.from_functions(2, lambda z: scale * ((z[0] - 1) ** 2 + (z[1] - 2) ** 2))


def circle_problem(scale=1.0):
    return NLPProblem.from_functions(
        2, lambda z: scale * (z[0] + z[1]), eq=lambda z: [z[0] ** 2 + z[1] ** 2 - 2.0], m_eq=1)


def hs071():
    return NLPProblem.from_functions(
        4, lambda x: x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
        eq=lambda x: [np.sum(x ** 2) - 40.0], ineq=lambda x: [np.prod(x) - 25.0],
        m_eq=1, m_ineq=1, lower=np.ones(4), upper=np.full(4, 5.0))


def test_unconstrained_quadratic():
    z, rep = solve(quad_problem(), np.zeros(2), CENTRAL)
    assert rep.converged
    np.testing.assert_allclose(z, [1.0, 2.0], atol=1e-8)
    assert rep.kkt_stationarity <= 1e-10


def test_equality_on_circle():
    # Lagrange: 1 = 2 lam z_i, so z1 = z2 = -1 at the minimum, lam = -1/2
    z, rep = solve(circle_problem(), np.array([-1.5, -0.5]), CENTRAL)
    assert rep.converged
    np.testing.assert_allclose(z, [-1.0, -1.0], atol=1e-8)
    assert rep.multipliers.eq[0] == pytest.approx(-0.5, abs=1e-8)


def test_inequality_multiplier():
    prob = NLPProblem.from_functions(1, lambda z: z[0] ** 2, ineq=lambda z: [z[0] - 1.0], m_ineq=1)
    z, rep = solve(prob, np.array([3.0]), CENTRAL)
    assert rep.converged
    assert z[0] == pytest.approx(1.0, abs=1e-8)
    assert rep.multipliers.ineq[0] == pytest.approx(2.0, abs=1e-7)


def test_bound_multiplier():
    prob = NLPProblem.from_functions(1, lambda z: z[0] ** 2, lower=np.array([1.0]))
    z, rep = solve(prob, np.array([3.0]), CENTRAL)
    assert rep.converged
    assert z[0] == pytest.approx(1.0, abs=1e-8)
    assert rep.multipliers.bounds[0] == pytest.approx(2.0, abs=1e-7)


def test_hs071():
    # published optimum of Hock-Schittkowski problem 71
    z, rep = solve(hs071(), np.array([1.0, 5.0, 5.0, 1.0]), SQPSettings(gradient="central-fd"))
    assert rep.converged
    np.testing.assert_allclose(z, [1.0, 4.74299963, 3.82114998, 1.37940829], atol=1e-6)
    assert rep.objective == pytest.approx(17.0140173, abs=1e-6)


def test_convex_qp_in_few_iterations():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(4, 4))
    Q = M @ M.T + np.eye(4)
    c = rng.normal(size=4)
    A = rng.normal(size=(3, 4))
    prob = NLPProblem.from_functions(
        4, lambda z: 0.5 * z @ Q @ z + c @ z, ineq=lambda z: A @ z + 1.0, m_ineq=3,
        eq=lambda z: [z.sum() - 0.5], m_eq=1, hessian0=Q)
    z, rep = solve(prob, np.zeros(4), CENTRAL)
    assert rep.converged and rep.iterations <= 5
    assert rep.kkt_stationarity <= 1e-10


@pytest.mark.parametrize("make,z0", [(circle_problem, [-1.5, -0.5]), (quad_problem, [0.0, 0.0])])
def test_objective_scaling_invariance(make, z0):
    za, ra = solve(make(), np.array(z0), CENTRAL)
    zb, rb = solve(make(10.0), np.array(z0), CENTRAL)
    assert ra.converged and rb.converged
    assert np.max(np.abs(za - zb)) <= 10 * CENTRAL.kkt_tol


def test_merit_monotone_and_hessian_pd():
    settings = SQPSettings(gradient="central-fd", track_hessian_eigs=True)
    _, rep = solve(hs071(), np.array([1.0, 5.0, 5.0, 1.0]), settings)
    hist = rep.history
    assert len(hist) >= 3
    for prev, cur in zip(hist, hist[1:]):
        if cur.penalty == prev.penalty:
            assert cur.merit <= prev.merit + 1e-12 * abs(prev.merit)
    assert all(r.hessian_min_eig >= 1e-12 for r in hist)


def test_iteration_log_format(caplog):
    with caplog.at_level(logging.INFO, logger="tumbledock.nlp"):
        _, rep = solve(circle_problem(), np.array([-1.5, -0.5]), CENTRAL)
    lines = [r.getMessage() for r in caplog.records if r.levelno == logging.INFO]
    assert len(lines) == rep.iterations
    assert len(LOG_COLUMNS) == 6
    for k, line in enumerate(lines, start=1):
        cols = line.split()
        assert len(cols) == 6
        assert int(cols[0]) == k
        [float(c) for c in cols[1:]]


def test_status_max_iter():
    z, rep = solve(hs071(), np.array([1.0, 5.0, 5.0, 1.0]), SQPSettings(max_iterations=1))
    assert rep.status == "max_iter" and rep.iterations == 1


def test_second_order_correction_cancels_curvature():
    # c(z) = |z|^2 - 2 on the circle point (1, 1); a tangent step d leaves c(z + d) = |d|^2
    from tumbledock.nlp.sqp import _soc_step
    prob = circle_problem()
    z = np.array([1.0, 1.0])
    Ae = np.array([[2.0, 2.0]])
    for t in (1e-1, 1e-2):
        d = t * np.array([1.0, -1.0])
        ce = np.array([0.0])
        ce_trial = prob.evaluate(z + d)[1]
        corr = _soc_step(prob, d, Ae, np.zeros((0, 2)), ce, np.zeros(0), ce_trial, np.zeros(0), np.zeros(0))
        after = abs(prob.evaluate(z + corr)[1][0])
        assert abs(ce_trial[0]) == pytest.approx(2 * t * t)
        assert after <= t ** 4  # second order before, fourth order after


def test_noisy_objective_terminates():
    # merit decrease below the noise level: the line search must give up instead of shrinking forever
    rng = np.random.default_rng(0)
    prob = NLPProblem.from_functions(2, lambda z: (z[0] - 1) ** 2 + z[1] ** 2 + 1e-9 * rng.standard_normal())
    z, rep = solve(prob, np.array([3.0, -2.0]), SQPSettings(max_iterations=200))
    assert rep.status in ("converged", "linesearch_failure")
    np.testing.assert_allclose(z, [1.0, 0.0], atol=1e-2)


def test_nonfinite_initial_point_raises():
    prob = NLPProblem.from_functions(1, lambda z: np.nan)
    with pytest.raises(EvaluatorFailure):
        solve(prob, np.array([-1.0]))


def test_settings_validation():
    with pytest.raises(ValueError):
        SQPSettings(kkt_tol=0.0)
    with pytest.raises(ValueError):
        SQPSettings(gradient="adjoint")
    assert SQPSettings().step == 1e-7
    with pytest.raises(ValueError):
        SQPSettings(trust_radius=1e-9)
    assert SQPSettings().trust_radius == np.inf
    assert SQPSettings(gradient="central-fd").step == 1e-5


# -- gradients ----------------------------------------------------------------

def test_gradient_of_square():
    f = lambda z: z[0] ** 2
    assert abs(gradient(f, np.array([3.0])) - 6.0) <= 1e-6
    assert abs(gradient(f, np.array([3.0]), SQPSettings(gradient="central-fd")) - 6.0) <= 1e-9


def test_gradient_nonfinite_raises():
    with pytest.raises(EvaluatorFailure):
        gradient(lambda z: 1.0 / z[0] if z[0] > 0 else np.nan, np.array([0.0]))


@pytest.fixture
def small_ocp(table1_params, x0_ref):
    return tr.OCPDefinition(x0_ref, table1_params, tr.Weights(0.0, 1.0, 1.0), N=10)


def test_tf_gradient_is_one(table1_params, x0_ref):
    ocp = tr.OCPDefinition(x0_ref, table1_params, tr.Weights(1.0, 0.0, 0.0), N=10)
    z = tr.initial_guess(ocp).to_array()
    z[-1] = 300.0
    g = gradient(lambda v: tr.evaluate_objective(v, ocp), z)
    assert abs(g[-1] - 1.0) <= 1e-8
    assert np.all(g[:-1] == 0.0)


def test_directional_derivative_on_docking_problem(small_ocp):
    rng = np.random.default_rng(0)
    z = tr.initial_guess(small_ocp).to_array()
    z[:-1] = rng.uniform(-1, 1, z.size - 1) * np.tile([0.05] * 3 + [0.2] * 3, 10)
    z[-1] = 350.0
    d = rng.normal(size=z.size)
    d /= np.linalg.norm(d)
    J = lambda v: tr.evaluate_objective(v, small_ocp)
    g = gradient(J, z)
    eps = 1e-4
    ref = (J(z + eps * d) - J(z - eps * d)) / (2 * eps)
    assert abs(g @ d - ref) <= 1e-5 * abs(ref)


def test_batched_jacobian_matches_rowwise(small_ocp):
    prob = tr.to_nlp(small_ocp)
    rng = np.random.default_rng(1)
    z = tr.initial_guess(small_ocp).to_array()
    z[:-1] = rng.uniform(-0.05, 0.05, z.size - 1)
    a = gradient(prob.stacked, z, batch=prob.stacked_batch)
    b = gradient(prob.stacked, z)
    np.testing.assert_array_equal(a, b)


# -- KKT residuals --------------------------------------------------------------

def exact_bound_problem():
    return NLPProblem(
        n=1, m_ineq=1, evaluate=lambda z: (z[0] ** 2, np.zeros(0), np.array([z[0] - 1.0])),
        derivatives=lambda z: (np.array([2 * z[0]]), np.zeros((0, 1)), np.array([[1.0]])))


def test_kkt_at_exact_point():
    stat, feas, comp = kkt_residuals(exact_bound_problem(), np.array([1.0]), np.array([2.0]))
    assert (stat, feas, comp) == (0.0, 0.0, 0.0)


def test_kkt_at_perturbed_point():
    stat, feas, comp = kkt_residuals(exact_bound_problem(), np.array([1.1]), np.array([2.0]))
    assert feas == 0.0
    assert stat == pytest.approx(0.2, abs=1e-14)
    assert comp == pytest.approx(0.2, abs=1e-14)


def test_kkt_unconstrained_minimum():
    prob = NLPProblem(n=2, evaluate=lambda z: (float((z[0] - 1) ** 2 + (z[1] - 2) ** 2), [], []),
                      derivatives=lambda z: (2 * (z - [1.0, 2.0]), np.zeros((0, 2)), np.zeros((0, 2))))
    res = kkt_residuals(prob, np.array([1.0, 2.0]), Multipliers(np.zeros(0), np.zeros(0), np.zeros(2)))
    assert max(res) <= 1e-12


def test_kkt_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kkt_residuals(exact_bound_problem(), np.array([1.0]), np.array([2.0, 1.0, 0.0]))
    with pytest.raises(DimensionMismatch):
        kkt_residuals(exact_bound_problem(), np.array([1.0, 2.0]), np.array([2.0]))
