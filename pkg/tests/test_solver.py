import numpy as np
import pytest

from paraopt import (InterfaceVector, InvalidParameterError,
                     NoConvergenceError, ParaoptOptions,
                     apply_approx_jacobian, coarse_linearize,
                     default_initial_guess, make_dahlquist, make_grid,
                     make_heat_1d, make_lotka_volterra, paraopt_solve,
                     reference_solve, residual, solve_jacobian_system)
from paraopt import linear_analysis as la
from paraopt.solver import gmres, verify_residual


def dahlquist_setup(sigma=-1.0, alpha=1.0, T=2.0, L=2, fine=4, coarse=2,
                    y_init=1.0, y_target=0.0):
    p = make_dahlquist(sigma, alpha, y_init, y_target)
    g = make_grid(T, L, fine, coarse)
    return p, g


def interface_from_dense(setup, grid):
    A, rhs = la.assemble_system(setup, "fine")
    x = np.linalg.solve(A, rhs)
    return InterfaceVector.from_stacked(x, grid.num_subintervals, 1)


# -- residual ----------------------------------------------------------------

def test_residual_at_exact_solution_is_small():
    p, g = dahlquist_setup(sigma=-0.8, T=3.0, L=3, fine=12, coarse=4)
    setup = la.DahlquistSetup(-0.8, 1.0, g)
    X = interface_from_dense(setup, g)
    F, trajs = residual(p, g, X)
    assert np.abs(F).max() <= 1e-11
    assert len(trajs) == 3


def test_residual_single_interval_structure():
    p, g = dahlquist_setup(L=1, T=1.0, fine=1, coarse=1)
    from paraopt import fine_propagate

    X = InterfaceVector(np.array([[0.7], [0.2]]), np.array([[0.4]]))
    F, _ = residual(p, g, X)
    P, Q, _ = fine_propagate(p, g, 1, [0.7], [0.4])
    assert np.allclose(F, [0.7 - 1.0, 0.2 - P[0], 0.4 - 0.2 + 0.0])


def test_residual_zero_guess_example():
    # two windows, single unit steps: F = (-1, 0, 0, 0, 0) at X = 0
    p, g = dahlquist_setup()
    X = InterfaceVector(np.zeros((3, 1)), np.zeros((2, 1)))
    F, _ = residual(p, g, X)
    assert np.allclose(F, [-1.0, 0.0, 0.0, 0.0, 0.0])


def test_residual_rejects_mismatched_vector():
    p, g = dahlquist_setup()
    with pytest.raises(InvalidParameterError):
        residual(p, g, InterfaceVector(np.zeros((4, 1)), np.zeros((3, 1))))


# -- approximate Jacobian application ----------------------------------------

def make_linearizations(p, g, X):
    return [coarse_linearize(p, g, ell, X.states[ell - 1],
                             X.adjoints[ell - 1])
            for ell in range(1, g.num_subintervals + 1)]


def test_apply_jacobian_zero_vector():
    p, g = dahlquist_setup()
    lins = make_linearizations(p, g, default_initial_guess(p, g))
    out = apply_approx_jacobian(lins, np.zeros(5))
    assert np.all(out == 0.0)


def test_apply_jacobian_exact_for_matching_grids():
    # finite-difference cross-check of the residual map, linear problem
    p, g = dahlquist_setup(sigma=-0.6, T=2.0, L=2, fine=6, coarse=6)
    X = default_initial_guess(p, g)
    lins = make_linearizations(p, g, X)
    rng = np.random.default_rng(2)
    dX = rng.standard_normal(5)
    eps = 1e-6
    F0, _ = residual(p, g, X)
    X1 = InterfaceVector.from_stacked(X.to_stacked() + eps * dX, 2, 1)
    F1, _ = residual(p, g, X1)
    fd = (F1 - F0) / eps
    assert np.allclose(apply_approx_jacobian(lins, dX), fd, atol=1e-6)


def test_apply_jacobian_assembles_to_coarse_interface_matrix():
    p, g = dahlquist_setup(sigma=-1.0, alpha=1.0, T=2.0, L=2, fine=4, coarse=2)
    setup = la.DahlquistSetup(-1.0, 1.0, g)
    A_coarse, _ = la.assemble_system(setup, "coarse")
    lins = make_linearizations(
        p, g, InterfaceVector(np.zeros((3, 1)), np.zeros((2, 1))))
    J = np.column_stack([apply_approx_jacobian(lins, col)
                         for col in np.eye(5).T])
    assert np.abs(J - A_coarse).max() <= 1e-12


# -- inner solves ------------------------------------------------------------

def test_gmres_solves_small_system():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 12)) + 6 * np.eye(12)
    b = rng.standard_normal(12)
    x, iters, relres, ok = gmres(lambda v: A @ v, b, 1e-12, 12)
    assert ok and relres <= 1e-12
    assert np.allclose(A @ x, b, atol=1e-10)
    x0, it0, _, ok0 = gmres(lambda v: A @ v, np.zeros(12), 1e-12, 12)
    assert ok0 and it0 == 0 and np.all(x0 == 0.0)


def test_solve_jacobian_system_zero_rhs():
    p, g = dahlquist_setup()
    lins = make_linearizations(p, g, default_initial_guess(p, g))
    dX, stats = solve_jacobian_system(lins, np.zeros(5), ParaoptOptions())
    assert np.all(dX == 0.0) and stats.converged


@pytest.mark.parametrize("L,fine,coarse", [(1, 4, 2), (3, 8, 2), (5, 6, 3)])
def test_krylov_and_direct_agree(L, fine, coarse):
    p, g = dahlquist_setup(sigma=-1.2, T=float(L), L=L, fine=fine,
                           coarse=coarse)
    X = default_initial_guess(p, g)
    lins = make_linearizations(p, g, X)
    rhs = np.cos(np.arange(2 * L + 1) * 0.7)
    direct, _ = solve_jacobian_system(
        lins, rhs, ParaoptOptions(inner_solver="assembled_direct"))
    krylov, stats = solve_jacobian_system(
        lins, rhs, ParaoptOptions(inner_solver="krylov", inner_tol=1e-12))
    assert stats.converged
    scale = np.abs(direct).max()
    assert np.abs(direct - krylov).max() <= 1e-8 * scale


def test_krylov_stagnation_flagged_not_raised():
    p, g = dahlquist_setup(sigma=-1.2, T=3.0, L=3, fine=8, coarse=2)
    lins = make_linearizations(p, g, default_initial_guess(p, g))
    rhs = np.ones(7)
    dX, stats = solve_jacobian_system(
        lins, rhs, ParaoptOptions(inner_solver="krylov", inner_tol=1e-14,
                                  inner_max_iters=1))
    assert not stats.converged
    assert stats.iterations == 1
    assert np.all(np.isfinite(dX))   # best iterate still returned


def test_krylov_and_direct_agree_nonlinear_blocks():
    p = make_lotka_volterra()
    g = make_grid(1.0 / 3.0, 4, 60, 6)
    X = default_initial_guess(p, g)
    lins = make_linearizations(p, g, X)
    rhs = np.sin(np.arange(2 * (2 * 4 + 1)) * 0.3)
    direct, _ = solve_jacobian_system(
        lins, rhs, ParaoptOptions(inner_solver="assembled_direct"))
    krylov, stats = solve_jacobian_system(
        lins, rhs, ParaoptOptions(inner_solver="krylov", inner_tol=1e-12))
    assert stats.converged
    assert np.abs(direct - krylov).max() <= 1e-8 * np.abs(direct).max()


# -- initial guess -----------------------------------------------------------

def test_default_initial_guess_interpolates():
    p = make_lotka_volterra()
    g = make_grid(1.0, 10, 10, 1)
    X = default_initial_guess(p, g)
    assert np.allclose(X.states[0], p.y_init)
    assert np.allclose(X.states[10], p.y_target)
    assert np.allclose(X.states[5], [60.0, 15.0])
    assert np.all(X.adjoints == 1.0)
    Z = default_initial_guess(p, g, zero_adjoints=True)
    assert np.all(Z.adjoints == 0.0)
    assert np.allclose(Z.states, X.states)


# -- outer solver ------------------------------------------------------------

def test_linear_one_step_convergence():
    # matching grids on a linear problem: exact Newton, one outer iteration
    for inner in ("assembled_direct", "krylov"):
        p, g = dahlquist_setup(sigma=-2.0, T=2.0, L=4, fine=5, coarse=5)
        opts = ParaoptOptions(outer_tol=1e-10, inner_solver=inner,
                              inner_tol=1e-13)
        rep = paraopt_solve(p, g, opts)
        assert rep.converged and rep.iterations == 1
        assert rep.final_residual <= 1e-10


def test_linear_error_contracts_at_spectral_radius():
    sigma, alpha = -0.25, 0.05
    g = make_grid(10.0, 5, 400, 4)
    setup = la.DahlquistSetup(sigma, alpha, g)
    rho = la.spectral_radius(setup)
    assert 0.05 < rho < 0.9
    p = make_dahlquist(sigma, alpha)
    ref = interface_from_dense(setup, g)
    rep = paraopt_solve(p, g, ParaoptOptions(outer_tol=1e-12,
                                             inner_solver="assembled_direct"),
                        reference=ref)
    errors = rep.errors
    good = errors > 1e3 * errors.min()
    ratios = [errors[k + 1] / errors[k]
              for k in range(2, len(errors) - 1) if good[k] and good[k + 1]]
    contraction = np.exp(np.mean(np.log(ratios[-5:])))
    assert abs(contraction - rho) <= 0.1 * rho


def test_gauss_newton_equals_newton_on_linear():
    p, g = dahlquist_setup(sigma=-1.0, T=3.0, L=3, fine=9, coarse=3)
    rep_n = paraopt_solve(p, g, ParaoptOptions(variant="newton"))
    rep_gn = paraopt_solve(p, g, ParaoptOptions(variant="gauss_newton"))
    assert np.array_equal(rep_n.final.to_stacked(), rep_gn.final.to_stacked())
    assert np.array_equal(rep_n.residuals, rep_gn.residuals)


def test_report_invariants():
    p, g = dahlquist_setup(sigma=-1.0, T=2.0, L=2, fine=8, coarse=2)
    rep = paraopt_solve(p, g)
    assert rep.converged
    assert rep.final_residual <= ParaoptOptions().outer_tol
    assert len(rep.residuals) == rep.iterations + 1
    assert len(rep.inner_iterations) == rep.iterations
    rows = rep.history_rows()
    assert rows[0][0] == 0 and rows[-1][0] == rep.iterations


def test_divergence_guard_reports_not_converged():
    # rho > 1 regime: the stationary analysis predicts divergence and the
    # outer loop must stop on the guard instead of looping forever
    g = make_grid(20.0, 10, 100, 1)
    setup = la.DahlquistSetup(-3.0, 1e-7, g)
    assert la.spectral_radius(setup) > 1.0
    p = make_dahlquist(-3.0, 1e-7)
    rep = paraopt_solve(p, g, ParaoptOptions(max_outer=200,
                                             inner_solver="assembled_direct"))
    assert not rep.converged
    assert rep.message in ("divergence guard triggered",
                           "iteration limit reached")


def test_verify_residual_matches_solver():
    p, g = dahlquist_setup(sigma=-0.7, T=2.0, L=4, fine=16, coarse=4)
    opts = ParaoptOptions(verify_final=True)
    rep = paraopt_solve(p, g, opts)
    assert rep.converged
    assert rep.verified_residual is not None
    assert rep.verified_residual <= 10 * opts.outer_tol
    p2 = make_lotka_volterra()
    g2 = make_grid(1.0 / 3.0, 5, 120, 12)
    opts2 = ParaoptOptions(outer_tol=1e-11, verify_final=True,
                           inner_solver="assembled_direct")
    rep2 = paraopt_solve(p2, g2, opts2)
    assert rep2.converged
    assert rep2.verified_residual <= 10 * opts2.outer_tol


def test_zero_adjoint_guess_option_linear():
    p, g = dahlquist_setup(sigma=-1.0, T=2.0, L=2, fine=6, coarse=6)
    rep = paraopt_solve(p, g, ParaoptOptions(initial_guess="zeros",
                                             outer_tol=1e-10))
    assert rep.converged and rep.iterations == 1


def test_user_supplied_guess_paths():
    p, g = dahlquist_setup()
    X = default_initial_guess(p, g)
    rep = paraopt_solve(p, g, ParaoptOptions(initial_guess="user_supplied"),
                        x0=X)
    assert rep.converged
    with pytest.raises(InvalidParameterError):
        paraopt_solve(p, g, ParaoptOptions(initial_guess="user_supplied"))
    with pytest.raises(InvalidParameterError):
        paraopt_solve(p, g, x0=X)


# -- reference solve ----------------------------------------------------------

def test_reference_solve_matches_dense_elimination():
    sigma = -1.4
    g = make_grid(3.0, 3, 40, 8)
    p = make_dahlquist(sigma, 1.0, 2.0, -0.5)
    setup = la.DahlquistSetup(sigma, 1.0, g, y_init=2.0, y_target=-0.5)
    ref = reference_solve(p, g)
    expected = interface_from_dense(setup, g)
    assert ref.diff_inf(expected) <= 1e-10


def test_reference_solve_heat_single_newton():
    p = make_heat_1d(n=8)
    g = make_grid(1e-2, 5, 40, 8)
    ref = reference_solve(p, g)
    F, _ = residual(p, g, ref)
    assert np.abs(F).max() <= 1e-10


def test_reference_solve_lotka_volterra_long_horizon_diverges():
    # a single long window does not admit a plain Newton solve from the
    # default guess; the reference must report that honestly
    p = make_lotka_volterra()
    g = make_grid(1.0, 1, 30_000, 30_000)
    with pytest.raises(NoConvergenceError):
        reference_solve(p, g)


# -- determinism across worker counts ----------------------------------------

@pytest.mark.parametrize("preset", ["lv", "heat"])
def test_worker_count_invariance(preset):
    if preset == "lv":
        p = make_lotka_volterra()
        g = make_grid(1.0 / 3.0, 6, 50, 5)
        opts = dict(inner_solver="assembled_direct", outer_tol=1e-11)
    else:
        p = make_heat_1d(n=10)
        g = make_grid(1e-2, 6, 30, 6)
        opts = dict(inner_solver="krylov", outer_tol=1e-11)
    runs = [paraopt_solve(p, g, ParaoptOptions(workers=w, **opts))
            for w in (1, 4, 6)]
    base = runs[0]
    for other in runs[1:]:
        assert np.array_equal(base.final.to_stacked(),
                              other.final.to_stacked())
        assert np.array_equal(base.residuals, other.residuals)
        assert base.inner_iterations == other.inner_iterations
