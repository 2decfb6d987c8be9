"""
Reference Solvers
Independent solvers used as oracles: splitting-variable ADMM, Gauss-Seidel ADMM
and accelerated proximal gradient for the overlapping group lasso
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from block_linalg import BlockVector
from constants import DENOMINATOR_FLOOR, DIVERGENCE_THRESHOLD, RESIDUAL_REFRESH_INTERVAL
from diagnostics import Trace, TraceRecord
from exceptions import ConfigurationError, DivergenceError
from group_lasso import GroupLassoInstance, group_lasso_objective
from pdmm_solver import PDMMSolver, Problem, SolveResult, SolverConfig

logger = logging.getLogger(__name__)


# === SPLITTING-VARIABLE ADMM ===

@dataclass
class SplittingTrajectory:
    """x^t and the (common) dual y^t for t = 1..T"""
    xs: List[np.ndarray] = field(default_factory=list)
    ys: List[np.ndarray] = field(default_factory=list)


class SplittingADMM:
    """
    Two-block ADMM over (x_1..x_J) and (z_1..z_J) for

        min sum_j f_j(x_j)  s.t.  A_j x_j - z_j = 0,  sum_j z_j = a

    with one dual y_j per block. Started from y_j = 0 and
    z_j = A_j x_j - (A x - a)/J it produces the same x sequence as the
    full-update iteration with tau = 1/J, nu = 1 - 1/J.
    """

    def __init__(self, problem: Problem, rho: float = 1.0):
        self.problem = problem
        self.rho = float(rho)
        dense = problem.A.to_dense()
        offsets = np.concatenate([[0], np.cumsum(problem.A.partition.col_sizes)])
        self.columns = [dense[:, offsets[j]:offsets[j + 1]] for j in range(problem.J)]
        self.a = problem.a.data.copy()
        self._factors = {}

    def _x_update(self, j: int, z_j: np.ndarray, y_j: np.ndarray) -> np.ndarray:
        """argmin f_j(x) + <y_j, C x> + (rho/2)||C x - z_j||^2"""
        fj = self.problem.f[j]
        C = self.columns[j]
        if fj.is_quadratic:
            H, q = fj.quadratic_data()
            if j not in self._factors:
                self._factors[j] = scipy.linalg.cho_factor(H + self.rho * C.T @ C)
            return scipy.linalg.cho_solve(self._factors[j], -q - C.T @ y_j + self.rho * C.T @ z_j)
        gram = C.T @ C
        c = gram[0, 0]
        if fj.has_prox and np.allclose(gram, c * np.eye(gram.shape[0])) and c > 0:
            return fj.prox(C.T @ (z_j - y_j / self.rho) / c, 1.0 / (self.rho * c))
        raise ConfigurationError(f"block {j}: splitting ADMM handles quadratic or orthogonal-column blocks only")

    def run(self, iterations: int, x0: Optional[BlockVector] = None) -> SplittingTrajectory:
        J = self.problem.J
        x = [np.zeros(C.shape[1]) for C in self.columns] if x0 is None else [b.copy() for b in x0.blocks()]
        r = sum(C @ xj for C, xj in zip(self.columns, x)) - self.a
        z = [C @ xj - r / J for C, xj in zip(self.columns, x)]
        y = [np.zeros_like(self.a) for _ in range(J)]
        out = SplittingTrajectory()
        for _ in range(iterations):
            x = [self._x_update(j, z[j], y[j]) for j in range(J)]
            u = [C @ xj + yj / self.rho for C, xj, yj in zip(self.columns, x, y)]
            excess = sum(u) - self.a
            z = [uj - excess / J for uj in u]
            y = [yj + self.rho * (C @ xj - zj) for C, xj, yj, zj in zip(self.columns, x, y, z)]
            out.xs.append(np.concatenate(x))
            out.ys.append(y[0].copy())
        return out


# === GAUSS-SEIDEL ADMM ===

class GaussSeidelADMM:
    """
    Classical multi-block ADMM: blocks updated in order 0..J-1, each seeing the
    fresh residual, then y += rho r. No convergence guarantee for J >= 3;
    kept as a comparison baseline.
    """

    def __init__(self, problem: Problem, rho: float = 1.0, tol: float = 1e-4, max_iter: int = 1000,
                 update_mode: str = "exact", inner_max_iter: int = 0):
        self.logger = logging.getLogger(__name__)
        self.problem = problem
        self.rho = float(rho)
        self.tol = tol
        self.max_iter = max_iter
        # the kernel supplies the block subproblem solvers; its step sizes are unused
        self.kernel = PDMMSolver(problem, SolverConfig(variant="sadmm", rho=rho, update_mode=update_mode,
                                                       inner_max_iter=inner_max_iter, track_R=False))

    def solve(self, x0: Optional[BlockVector] = None, y0: Optional[BlockVector] = None) -> SolveResult:
        A = self.problem.A
        state = self.kernel.initial_state(x0, y0)
        trace = Trace(metadata={"variant": "gsadmm-ref", "K": self.problem.J, "rho": self.rho})
        start = time.perf_counter()
        trace.append(TraceRecord(0, self.problem.objective(state.x), state.r.norm()))
        self.logger.info(f"Solving {self.problem.name}: gsadmm-ref J={self.problem.J} rho={self.rho}")

        while True:
            x_old = state.x.copy()
            y_old = state.y.copy()
            for j in range(self.problem.J):
                w = BlockVector(state.r.sizes, state.y.data + self.rho * state.r.data)
                x_new = self.kernel.primal_update(state, j, w)
                for i, delta in A.column_apply(j, x_new - state.x.block(j)).items():
                    state.r.data[state.r.offsets[i]:state.r.offsets[i + 1]] += delta
                state.x.set_block(j, x_new)
            state.t += 1
            if state.t % RESIDUAL_REFRESH_INTERVAL == 0:
                state.r = self.problem.residual(state.x)
            state.y.data += self.rho * state.r.data
            state.y_hat = state.y.copy()

            record = TraceRecord(state.t, self.problem.objective(state.x), state.r.norm(),
                                 wall_time=time.perf_counter() - start,
                                 selected_blocks=tuple(range(self.problem.J)))
            trace.append(record)
            if not (abs(record.objective) <= DIVERGENCE_THRESHOLD and record.primal_residual <= DIVERGENCE_THRESHOLD):
                trace.stop_reason = "diverged"
                raise DivergenceError(f"{self.problem.name}: gsadmm-ref diverged at t={state.t}", trace)
            change = (np.linalg.norm(state.x.data - x_old.data) / max(x_old.norm(), DENOMINATOR_FLOOR)
                      + np.linalg.norm(state.y.data - y_old.data) / max(y_old.norm(), DENOMINATOR_FLOOR))
            if change <= self.tol:
                trace.stop_reason = "tolerance"
                break
            if state.t >= self.max_iter:
                trace.stop_reason = "max_iter"
                break

        self.logger.info(f"{self.problem.name}: gsadmm-ref stopped by {trace.stop_reason} after {state.t} iterations")
        return SolveResult(state.x, state.y, trace, state)


def high_precision_reference(problem: Problem, tol: float = 1e-11, max_iter: int = 50000,
                             rho: float = 1.0) -> SolveResult:
    """Full-update sADMM run to a tight tolerance"""
    return PDMMSolver(problem, SolverConfig(variant="sadmm", rho=rho, tol=tol, max_iter=max_iter,
                                            track_R=False, log_every=0)).solve()


# === OVERLAPPING GROUP LASSO ORACLE ===

@dataclass
class OracleResult:
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool


def overlapping_group_prox(v: np.ndarray, groups: Sequence[np.ndarray], thresholds: Sequence[float],
                           duals: Optional[List[np.ndarray]] = None, tol: float = 1e-14,
                           max_sweeps: int = 10000) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    prox of sum_g t_g ||w_g|| at v, by block-coordinate descent on the dual

        min_u (1/2)||v - sum_g U_g u_g||^2  s.t.  ||u_g|| <= t_g,   w = v - sum_g U_g u_g
    """
    duals = [np.zeros(len(g)) for g in groups] if duals is None else [u.copy() for u in duals]
    w = np.array(v, dtype=float)
    for g, u in zip(groups, duals):
        w[g] -= u
    for _ in range(max_sweeps):
        biggest = 0.0
        scale = 0.0
        for k, (g, t) in enumerate(zip(groups, thresholds)):
            p = w[g] + duals[k]
            norm = np.linalg.norm(p)
            u_new = p if norm <= t else p * (t / norm)
            biggest = max(biggest, float(np.max(np.abs(u_new - duals[k]))))
            scale = max(scale, float(np.max(np.abs(u_new))))
            w[g] = p - u_new
            duals[k] = u_new
        if biggest <= tol * (1.0 + scale):
            break
    return w, duals


def group_lasso_oracle(instance: GroupLassoInstance, tol: float = 1e-12,
                       max_iter: int = 200000) -> OracleResult:
    """FISTA with function-value restart on the unsplit objective"""
    A, b = instance.A_data, instance.b
    scale = instance.loss_scale
    lipschitz = scale * float(scipy.linalg.norm(A, 2)) ** 2
    thresholds = instance.weights / lipschitz

    w = np.zeros(instance.n_features)
    v = w.copy()
    theta = 1.0
    F = group_lasso_objective(instance, w)
    duals = None
    restarted = False
    converged = False
    k = 0
    for k in range(1, max_iter + 1):
        grad = scale * (A.T @ (A @ v - b))
        w_new, duals = overlapping_group_prox(v - grad / lipschitz, instance.groups, thresholds, duals)
        F_new = group_lasso_objective(instance, w_new)
        if F_new > F and not restarted:
            theta = 1.0
            v = w.copy()
            restarted = True
            continue
        restarted = False
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        v = w_new + ((theta - 1.0) / theta_new) * (w_new - w)
        step = np.linalg.norm(w_new - w)
        w, F, theta = w_new, F_new, theta_new
        if step <= tol * (1.0 + np.linalg.norm(w)):
            converged = True
            break
    if not converged:
        logger.warning(f"group lasso oracle hit {max_iter} iterations without reaching tol={tol}")
    return OracleResult(w, group_lasso_objective(instance, w), k, converged)
