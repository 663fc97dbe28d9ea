"""The outer interface iteration: inexact Newton with a coarse Jacobian.

The unknowns are the stacked interface values X = (Y_0..Y_L, Lam_1..Lam_L).
The nonlinear residual enforces the matching conditions

    Y_0 - y_init,
    Y_l - P(Y_{l-1}, Lam_l)            l = 1..L,
    Lam_l - Q(Y_l, Lam_{l+1})          l = 1..L-1,
    Lam_L - Y_L + y_target,

with P, Q the fine window propagators.  Each outer step solves
J^G(X) dX = -F(X) where J^G carries the *coarse* derivative blocks of P and
Q, then updates X += dX.  The L window solves of a residual evaluation and
the L coarse linearizations are independent tasks run on a worker pool;
assembly and norms happen in a fixed order, so results are identical for
any worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._parallel import parallel_map, resolve_workers
from .errors import (InvalidParameterError, NewtonDivergenceError,
                     NoConvergenceError)
from .model import ControlProblem, InterfaceVector, TimeGrid
from .propagators import (coarse_linearize, fine_propagate,
                          window_recurrence_residual)

Array = np.ndarray

INNER_KRYLOV = "krylov"
INNER_DIRECT = "assembled_direct"
VARIANT_NEWTON = "newton"
VARIANT_GAUSS_NEWTON = "gauss_newton"
GUESS_PAPER = "paper_default"
GUESS_ZEROS = "zeros"
GUESS_USER = "user_supplied"


@dataclass(frozen=True)
class ParaoptOptions:
    """Tolerances and strategy switches of the outer iteration."""

    outer_tol: float = 1e-13
    max_outer: int = 50
    inner_solver: str = INNER_KRYLOV
    inner_tol: float = 1e-10
    inner_max_iters: Optional[int] = None   # None: the stacked dimension
    variant: str = VARIANT_NEWTON
    initial_guess: str = GUESS_PAPER
    local_tol: float = 1e-12
    local_max_newton: int = 50
    workers: Optional[int] = None           # None: min(L, cores)
    divergence_factor: float = 1e8
    verify_final: bool = False

    def __post_init__(self):
        if self.outer_tol <= 0 or self.inner_tol <= 0 or self.local_tol <= 0:
            raise InvalidParameterError("tolerances must be positive")
        if self.max_outer < 1 or self.local_max_newton < 1:
            raise InvalidParameterError("iteration limits must be >= 1")
        if self.inner_solver not in (INNER_KRYLOV, INNER_DIRECT):
            raise InvalidParameterError(f"unknown inner solver {self.inner_solver!r}")
        if self.variant not in (VARIANT_NEWTON, VARIANT_GAUSS_NEWTON):
            raise InvalidParameterError(f"unknown variant {self.variant!r}")
        if self.initial_guess not in (GUESS_PAPER, GUESS_ZEROS, GUESS_USER):
            raise InvalidParameterError(f"unknown initial guess {self.initial_guess!r}")


@dataclass
class InnerStats:
    mode: str
    iterations: int
    relative_residual: float
    converged: bool


@dataclass
class ConvergenceReport:
    """Per-iteration history of one outer solve."""

    converged: bool
    iterations: int
    residuals: Array                 # len iterations+1, starts at X^0
    errors: Optional[Array]          # vs reference, same length; None if absent
    inner_iterations: list           # per outer step
    wall_times: Array                # seconds per history row
    final: InterfaceVector
    message: str = ""
    verified_residual: Optional[float] = None

    @property
    def final_residual(self) -> float:
        return float(self.residuals[-1])

    def history_rows(self):
        """Rows (iter, residual_inf, err_inf, inner_iters, wall_seconds)."""
        rows = []
        for k in range(len(self.residuals)):
            rows.append((
                k,
                float(self.residuals[k]),
                float(self.errors[k]) if self.errors is not None else float("nan"),
                int(self.inner_iterations[k - 1]) if k >= 1 else 0,
                float(self.wall_times[k]),
            ))
        return rows


def default_initial_guess(problem: ControlProblem, grid: TimeGrid,
                          zero_adjoints: bool = False) -> InterfaceVector:
    """Linear interpolation between endpoints; unit (or zero) adjoints."""
    theta = grid.interface_times() / grid.horizon
    states = np.outer(1.0 - theta, problem.y_init) + np.outer(theta, problem.y_target)
    L = grid.num_subintervals
    adjoints = (np.zeros((L, problem.dim)) if zero_adjoints
                else np.ones((L, problem.dim)))
    return InterfaceVector(states, adjoints)


def residual(problem: ControlProblem, grid: TimeGrid, X: InterfaceVector,
             tol: float = 1e-12, max_newton: int = 50,
             workers: int = 1):
    """Matching-condition residual F(X) and the window trajectories."""
    L = grid.num_subintervals
    n = problem.dim
    if X.num_subintervals != L or X.dim != n:
        raise InvalidParameterError("interface vector does not fit the grid")

    def solve_window(ell):
        try:
            return fine_propagate(problem, grid, ell, X.states[ell - 1],
                                  X.adjoints[ell - 1], tol, max_newton)
        except NewtonDivergenceError as exc:
            exc.subinterval = ell
            raise

    results = parallel_map(solve_window, range(1, L + 1), workers)
    F = np.empty((2 * L + 1, n))
    F[0] = X.states[0] - problem.y_init
    for ell in range(1, L + 1):
        F[ell] = X.states[ell] - results[ell - 1][0]
    for ell in range(1, L):
        F[L + ell] = X.adjoints[ell - 1] - results[ell][1]
    F[2 * L] = X.adjoints[L - 1] - X.states[L] + problem.y_target
    return F.ravel(), [r[2] for r in results]


def apply_approx_jacobian(linearizations: list, dX: Array,
                          variant: str = VARIANT_NEWTON,
                          workers: int = 1) -> Array:
    """Matrix-free application of the coarse interface Jacobian."""
    from .propagators import derivative_action

    L = len(linearizations)
    problem = linearizations[0].problem
    n = problem.dim
    dX = np.asarray(dX, dtype=float)
    if dX.size != n * (2 * L + 1):
        raise InvalidParameterError("vector length does not match L windows")
    blocks = dX.reshape(2 * L + 1, n)
    dY, dLam = blocks[:L + 1], blocks[L + 1:]
    gn = variant == VARIANT_GAUSS_NEWTON

    def action(ell):
        return derivative_action(problem, linearizations[ell - 1],
                                 dY[ell - 1], dLam[ell - 1], gauss_newton=gn)

    acts = parallel_map(action, range(1, L + 1), workers)
    out = np.empty_like(blocks)
    out[0] = dY[0]
    for ell in range(1, L + 1):
        out[ell] = dY[ell] - acts[ell - 1][0]
    for ell in range(1, L):
        out[L + ell] = dLam[ell - 1] - acts[ell][1]
    out[2 * L] = dLam[L - 1] - dY[L]
    return out.ravel()


def _jacobian_matvec(linearizations, variant, workers):
    """Fast operator built from the cached window derivative blocks."""
    L = len(linearizations)
    problem = linearizations[0].problem
    n = problem.dim
    gn = variant == VARIANT_GAUSS_NEWTON
    blocks = parallel_map(lambda lin: lin.blocks(gn), linearizations, workers)

    def matvec(v):
        w = v.reshape(2 * L + 1, n)
        dY, dLam = w[:L + 1], w[L + 1:]
        out = np.empty_like(w)
        out[0] = dY[0]
        for ell in range(1, L + 1):
            Py, Pl, _, _ = blocks[ell - 1]
            out[ell] = dY[ell] - Py @ dY[ell - 1] - Pl @ dLam[ell - 1]
        for ell in range(1, L):
            _, _, Qy, Ql = blocks[ell]
            out[L + ell] = dLam[ell - 1] - Qy @ dY[ell] - Ql @ dLam[ell]
        out[2 * L] = dLam[L - 1] - dY[L]
        return out.ravel()

    return matvec, blocks


def _assemble_jacobian(blocks, n) -> Array:
    L = len(blocks)
    D = n * (2 * L + 1)
    J = np.zeros((D, D))

    def put(i, j, B):
        J[n * i:n * (i + 1), n * j:n * (j + 1)] = B

    eye = np.eye(n)
    put(0, 0, eye)
    for ell in range(1, L + 1):
        Py, Pl, _, _ = blocks[ell - 1]
        put(ell, ell, eye)
        put(ell, ell - 1, -Py)
        put(ell, L + ell, -Pl)
    for ell in range(1, L):
        _, _, Qy, Ql = blocks[ell]
        put(L + ell, L + ell, eye)
        put(L + ell, ell, -Qy)
        put(L + ell, L + ell + 1, -Ql)
    put(2 * L, 2 * L, eye)
    put(2 * L, L, -eye)
    return J


def gmres(matvec: Callable[[Array], Array], b: Array, tol: float,
          max_iters: int):
    """Full (unrestarted, unpreconditioned) GMRES from the zero iterate.

    Arnoldi with modified Gram-Schmidt and Givens rotations; stops when the
    relative residual drops below ``tol``.  Returns (x, iterations, relative
    residual, converged).
    """
    b = np.asarray(b, dtype=float)
    beta = np.linalg.norm(b)
    if beta == 0.0:
        return np.zeros_like(b), 0, 0.0, True
    D = b.size
    max_iters = min(max_iters, D)
    V = np.empty((max_iters + 1, D))
    H = np.zeros((max_iters + 1, max_iters))
    cs = np.empty(max_iters)
    sn = np.empty(max_iters)
    g = np.zeros(max_iters + 1)
    V[0] = b / beta
    g[0] = beta
    k = 0
    relres = 1.0
    for j in range(max_iters):
        w = matvec(V[j])
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w = w - H[i, j] * V[i]
        h_next = np.linalg.norm(w)
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        r = np.hypot(H[j, j], h_next)
        if r == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j], sn[j] = H[j, j] / r, h_next / r
        H[j, j] = r
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        relres = abs(g[j + 1]) / beta
        if relres <= tol or h_next == 0.0:  # happy breakdown: exact in span
            break
        if j + 1 < max_iters:
            V[j + 1] = w / h_next
    y = np.linalg.solve(H[:k, :k], g[:k]) if k else np.zeros(0)
    x = V[:k].T @ y if k else np.zeros_like(b)
    return x, k, relres, relres <= tol


def solve_jacobian_system(linearizations: list, rhs: Array,
                          options: ParaoptOptions, workers: int = 1):
    """Solve J^G dX = rhs by full GMRES or by assembled dense LU."""
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise InvalidParameterError("right-hand side must be finite")
    n = linearizations[0].problem.dim
    matvec, blocks = _jacobian_matvec(linearizations, options.variant, workers)
    if options.inner_solver == INNER_DIRECT:
        J = _assemble_jacobian(blocks, n)
        dX = np.linalg.solve(J, rhs)
        res = np.linalg.norm(J @ dX - rhs) / max(np.linalg.norm(rhs), 1e-300)
        return dX, InnerStats(INNER_DIRECT, 0, float(res), True)
    max_iters = options.inner_max_iters or rhs.size
    dX, iters, relres, ok = gmres(matvec, rhs, options.inner_tol, max_iters)
    return dX, InnerStats(INNER_KRYLOV, iters, float(relres), ok)


def _initial_vector(problem, grid, options, x0) -> InterfaceVector:
    if options.initial_guess == GUESS_USER:
        if x0 is None:
            raise InvalidParameterError("user_supplied guess requires x0")
        return x0.copy()
    if x0 is not None:
        raise InvalidParameterError(
            "x0 given but initial_guess is not 'user_supplied'")
    return default_initial_guess(problem, grid,
                                 zero_adjoints=options.initial_guess == GUESS_ZEROS)


def verify_residual(problem: ControlProblem, grid: TimeGrid,
                    X: InterfaceVector, options: ParaoptOptions) -> float:
    """Independent re-check of ||F(X)||_inf with fresh, tighter window solves."""
    F, trajs = residual(problem, grid, X, tol=options.local_tol / 10.0,
                        max_newton=options.local_max_newton + 10, workers=1)
    worst = max(window_recurrence_residual(problem, t) for t in trajs)
    if worst > options.local_tol:
        raise NewtonDivergenceError(
            f"verification windows missed their tolerance ({worst:.3e})",
            residual=worst)
    return float(np.abs(F).max())


def paraopt_solve(problem: ControlProblem, grid: TimeGrid,
                  options: Optional[ParaoptOptions] = None,
                  reference: Optional[InterfaceVector] = None,
                  x0: Optional[InterfaceVector] = None) -> ConvergenceReport:
    """Run the outer iteration until ||F||_inf <= outer_tol.

    When ``reference`` is given, the max-norm interface error against it is
    recorded per iteration (the convergence-history metric of the
    experiments).  Returns a report; ``converged`` is False when the
    iteration limit or the divergence guard hits.
    """
    options = options or ParaoptOptions()
    L = grid.num_subintervals
    workers = resolve_workers(options.workers, L)
    X = _initial_vector(problem, grid, options, x0)

    residuals = []
    errors = [] if reference is not None else None
    inner_iterations = []
    wall_times = []
    message = ""

    def record(F, seconds):
        residuals.append(float(np.abs(F).max()))
        if errors is not None:
            errors.append(X.diff_inf(reference))
        wall_times.append(seconds)

    t0 = time.perf_counter()
    F, _ = residual(problem, grid, X, options.local_tol,
                    options.local_max_newton, workers)
    record(F, time.perf_counter() - t0)

    converged = residuals[0] <= options.outer_tol
    guard = options.divergence_factor * max(residuals[0], 1e-300)
    while not converged and len(residuals) <= options.max_outer:
        t0 = time.perf_counter()
        lins = parallel_map(
            lambda ell: coarse_linearize(problem, grid, ell,
                                         X.states[ell - 1], X.adjoints[ell - 1],
                                         options.local_tol,
                                         options.local_max_newton),
            range(1, L + 1), workers)
        dX, stats = solve_jacobian_system(lins, -F, options, workers)
        X = InterfaceVector.from_stacked(X.to_stacked() + dX, L, problem.dim)
        F, _ = residual(problem, grid, X, options.local_tol,
                        options.local_max_newton, workers)
        inner_iterations.append(stats.iterations)
        record(F, time.perf_counter() - t0)
        converged = residuals[-1] <= options.outer_tol
        if not converged and residuals[-1] > guard:
            message = "divergence guard triggered"
            break
    if not converged and not message:
        message = "iteration limit reached"

    report = ConvergenceReport(
        converged=converged,
        iterations=len(residuals) - 1,
        residuals=np.array(residuals),
        errors=None if errors is None else np.array(errors),
        inner_iterations=inner_iterations,
        wall_times=np.array(wall_times),
        final=X,
        message=message,
    )
    if options.verify_final and converged:
        report.verified_residual = verify_residual(problem, grid, X, options)
    return report


def _restrict_to_grid(problem: ControlProblem, single: TimeGrid,
                      target: TimeGrid, X: InterfaceVector) -> InterfaceVector:
    """Interface values of a one-window solution on a refining grid."""
    from .propagators import _linear_ops

    L = target.num_subintervals
    n = problem.dim
    N = target.fine_steps
    if problem.is_linear:
        ops = _linear_ops(problem, target.fine_step, N)
        adj = np.empty((L, n))
        adj[L - 1] = X.adjoints[0]
        for ell in range(L - 1, 0, -1):
            adj[ell - 1] = ops.SNT @ adj[ell]
        states = np.empty((L + 1, n))
        states[0] = X.states[0]
        for ell in range(L):
            states[ell + 1] = ops.SN @ states[ell] - (ops.G @ adj[ell]) / problem.alpha
        return InterfaceVector(states, adj)
    _, _, traj = fine_propagate(problem, single, 1, X.states[0], X.adjoints[0])
    idx = np.arange(L + 1) * N
    return InterfaceVector(traj.states[idx], traj.adjoints[idx][1:])


def reference_solve(problem: ControlProblem, grid: TimeGrid,
                    options: Optional[ParaoptOptions] = None
                    ) -> InterfaceVector:
    """Converged fine-grid interface values on ``grid``.

    Solves the whole horizon as a single window whose coarse grid equals the
    fine one (exact derivative blocks), then samples the solution at the
    interface times of ``grid``.  Raises :class:`NoConvergenceError` when
    that solve fails; hard problems genuinely do (long horizons may not
    admit a plain Newton solve from the default guess).
    """
    options = options or ParaoptOptions()
    single = grid.with_single_subinterval()
    try:
        report = paraopt_solve(problem, single, options)
    except NewtonDivergenceError as exc:
        raise NoConvergenceError(
            f"reference window solve diverged: {exc}") from exc
    if not report.converged:
        raise NoConvergenceError("reference solve did not converge",
                                 report=report)
    return _restrict_to_grid(problem, single, grid, report.final)
