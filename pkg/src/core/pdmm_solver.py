"""
PDMM Solver
Randomized block-coordinate primal-dual iteration with dual backward step,
its sADMM / PJADMM special cases and the randomized dual-block extension
"""

import itertools
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from block_linalg import BlockMatrix, BlockVector, ZVector
from constants import (
    DEFAULT_INNER_TOL,
    DEFAULT_MAX_ITER,
    DEFAULT_RHO,
    DEFAULT_TOL,
    DENOMINATOR_FLOOR,
    DIVERGENCE_THRESHOLD,
    PDMM_THREADS_ENV,
    RESIDUAL_REFRESH_INTERVAL,
)
from diagnostics import (
    ErgodicAverager,
    KKTPoint,
    TheoryConstants,
    Trace,
    TraceRecord,
    lyapunov_h,
    residual_R,
)
from exceptions import ConfigurationError, DimensionError, DivergenceError, NumericalError
from prox_library import BlockFunction
from stepsize import (
    StepSizes,
    ValidityReport,
    pjadmm_step_sizes,
    preset_step_sizes,
    rdbcd_step_sizes,
    sadmm_step_sizes,
    validity_check,
)


class Variant(Enum):
    PDMM = "pdmm"
    SADMM = "sadmm"
    PJADMM = "pjadmm"
    RDBCD = "rdbcd"


class UpdateMode(Enum):
    EXACT = "exact"
    LINEARIZED_F = "linearized-f"
    LINEARIZED_PENALTY = "linearized-penalty"
    LINEARIZED_BOTH = "linearized-both"


class SamplingScheme(Enum):
    UNIFORM = "uniform"
    CYCLIC = "cyclic"


@dataclass
class Problem:
    """min sum_j f_j(x_j)  s.t.  sum_j A_j^c x_j = a"""
    A: BlockMatrix
    a: BlockVector
    f: List[BlockFunction]
    x_star: Optional[BlockVector] = None
    y_star: Optional[BlockVector] = None
    name: str = "problem"
    metadata: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.A.validate_structure()
        p = self.A.partition
        if self.a.sizes != p.row_sizes:
            raise DimensionError(f"right-hand side blocks {self.a.sizes} != row sizes {p.row_sizes}")
        if len(self.f) != p.J:
            raise DimensionError(f"{len(self.f)} block functions for J={p.J} column blocks")
        for j, (fj, n_j) in enumerate(zip(self.f, p.col_sizes)):
            if fj.size != n_j:
                raise DimensionError(f"block function {j} acts on {fj.size} entries, column block has {n_j}")
        if self.x_star is not None:
            if self.x_star.sizes != p.col_sizes:
                raise DimensionError("x_star does not match the column partition")
            KKTPoint(self.x_star, self.y_star if self.y_star is not None else BlockVector.zeros(p.row_sizes),
                     0.0).check_feasible(self.A, self.a)

    @property
    def I(self) -> int:
        return self.A.I

    @property
    def J(self) -> int:
        return self.A.J

    def objective(self, x: BlockVector) -> float:
        return float(sum(fj.evaluate(x.block(j)) for j, fj in enumerate(self.f)))

    def residual(self, x: BlockVector) -> BlockVector:
        return self.A.apply(x) - self.a

    @property
    def kkt(self) -> Optional[KKTPoint]:
        if self.x_star is None or self.y_star is None:
            return None
        return KKTPoint(self.x_star, self.y_star, self.objective(self.x_star))


@dataclass
class SolverState:
    """Iterates, residual r = Ax - a, iteration count and the sampling generator"""
    x: BlockVector
    y: BlockVector
    y_hat: BlockVector
    r: BlockVector
    t: int = 0
    rng: Optional[np.random.Generator] = None
    y_prev: Optional[BlockVector] = None

    def copy(self) -> "SolverState":
        return SolverState(self.x.copy(), self.y.copy(), self.y_hat.copy(), self.r.copy(), self.t,
                           self.rng, None if self.y_prev is None else self.y_prev.copy())


@dataclass
class SolverConfig:
    """Solver parameters; None for K / K_I / eta means "derive from the variant" """
    variant: str = "pdmm"
    rho: float = DEFAULT_RHO
    K: Optional[int] = None
    K_I: Optional[int] = None
    eta: Optional[Union[float, Sequence[float]]] = None
    update_mode: str = "exact"
    sampler: str = "uniform"
    preset: str = "table1"
    step_sizes: Optional[StepSizes] = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    base_seed: int = 0
    threads: int = 1
    residual_refresh: int = RESIDUAL_REFRESH_INTERVAL
    track_R: bool = True
    track_h: bool = False
    track_ergodic: bool = False
    check_identity: bool = False
    divergence_threshold: float = DIVERGENCE_THRESHOLD
    inner_max_iter: int = 0
    inner_tol: float = DEFAULT_INNER_TOL
    allow_invalid_steps: bool = False
    log_every: int = 100

    def validate(self) -> None:
        try:
            Variant(self.variant)
            UpdateMode(self.update_mode)
            SamplingScheme(self.sampler)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        if self.rho <= 0:
            raise ConfigurationError(f"rho must be positive, got {self.rho}")
        if self.tol <= 0:
            raise ConfigurationError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")
        if self.residual_refresh < 1:
            raise ConfigurationError(f"residual_refresh must be >= 1, got {self.residual_refresh}")
        if self.inner_max_iter < 0:
            raise ConfigurationError(f"inner_max_iter must be >= 0, got {self.inner_max_iter}")


class Sampler:
    """
    Primal (or dual) block selection.

    uniform: K distinct indices, every K-subset equally likely.
    cyclic: a random permutation split into consecutive groups of K, visited in order.
      When K does not divide J the last group is short; step sizes are still those of K.
    """

    def __init__(self, scheme: SamplingScheme, K: int, J: int, rng: Optional[np.random.Generator] = None):
        if not 1 <= K <= J:
            raise ConfigurationError(f"sampler needs 1 <= K <= {J}, got K={K}")
        self.scheme = scheme
        self.K = K
        self.J = J
        self.groups: List[Tuple[int, ...]] = []
        if scheme is SamplingScheme.CYCLIC:
            perm = rng.permutation(J) if rng is not None else np.arange(J)
            self.groups = [tuple(sorted(int(j) for j in perm[k:k + K])) for k in range(0, J, K)]

    def draw(self, rng: np.random.Generator, t: int) -> Tuple[int, ...]:
        if self.K == self.J:
            return tuple(range(self.J))
        if self.scheme is SamplingScheme.CYCLIC:
            return self.groups[t % len(self.groups)]
        return tuple(sorted(int(j) for j in rng.choice(self.J, size=self.K, replace=False)))

    def all_subsets(self) -> List[Tuple[int, ...]]:
        """Every selection the sampler can return at the next draw, equally weighted"""
        if self.K == self.J:
            return [tuple(range(self.J))]
        if self.scheme is SamplingScheme.CYCLIC:
            raise ConfigurationError("cyclic sampling is deterministic given t; enumerate uniform subsets only")
        return list(itertools.combinations(range(self.J), self.K))


@dataclass
class SolveResult:
    x: BlockVector
    y: BlockVector
    trace: Trace
    state: SolverState
    ergodic_x: Optional[BlockVector] = None

    @property
    def stop_reason(self) -> str:
        return self.trace.stop_reason


def _thread_cap(requested: int) -> int:
    cap = os.environ.get(PDMM_THREADS_ENV)
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise ConfigurationError(f"{PDMM_THREADS_ENV}={cap!r} is not an integer")
    return requested


class PDMMSolver:
    """
    Runs the iteration

      x_j   <- argmin f_j(x) + <A_j'(y_hat + rho r), x> + (rho/2)||A_j(x - x_j)||^2 + eta_j B(x, x_j),  j in I_t
      r     <- r + sum_j A_j dx_j
      y_i   <- y_i + tau_i rho r_i           (i in the dual selection)
      y_hat <- y - nu rho r

    from x = y = y_hat = 0 unless an initial point is supplied.
    """

    def __init__(self, problem: Problem, config: Optional[SolverConfig] = None):
        self.logger = logging.getLogger(__name__)
        self.problem = problem
        self.config = config or SolverConfig()
        self.config.validate()

        cfg = self.config
        self.variant = Variant(cfg.variant)
        self.mode = UpdateMode(cfg.update_mode)
        self.scheme = SamplingScheme(cfg.sampler)
        self.A = problem.A
        self.J = problem.J
        self.I = problem.I
        self.rho = float(cfg.rho)
        self.threads = _thread_cap(cfg.threads)

        self.K, self.K_I = self._resolve_sampling_sizes()
        self.steps, self.eta = self._resolve_steps()
        self.report = self._check_steps()
        self._validate_update_rule()

        self._tau_full = problem.a.expand(self.steps.tau_array())
        self._nu_full = problem.a.expand(self.steps.nu_array())
        self._factors: Dict[Tuple[str, int], object] = {}
        self._factor_lock = threading.Lock()
        self._executor: Optional[ThreadPoolExecutor] = None

        self.constants = TheoryConstants(
            rho=self.rho, K=self.K, J=self.J,
            tau=self.steps.tau_array(),
            beta=np.array([float(b) for b in self.report.beta]),
            gamma=np.array([float(g) for g in self.report.gamma]),
            zeta=np.array([float(z) for z in self.report.zeta]),
            eta=np.asarray(self.eta, dtype=float),
            dual_scale=self.I / self.K_I,
        )

    # --- configuration ---

    def _resolve_sampling_sizes(self) -> Tuple[int, int]:
        cfg = self.config
        K = self.J if cfg.K is None else int(cfg.K)
        K_I = self.I if cfg.K_I is None else int(cfg.K_I)
        if self.variant in (Variant.SADMM, Variant.PJADMM):
            if K != self.J:
                raise ConfigurationError(f"{self.variant.value} updates every block; K={K} given for J={self.J}")
            if K_I != self.I:
                raise ConfigurationError(f"{self.variant.value} updates every dual block; K_I={K_I} given")
        if not 1 <= K <= self.J:
            raise ConfigurationError(f"K={K} outside [1, J={self.J}]")
        if not 1 <= K_I <= self.I:
            raise ConfigurationError(f"K_I={K_I} outside [1, I={self.I}]")
        return K, K_I

    def _eta_vector(self, value) -> List[float]:
        if value is None:
            return [0.0] * self.J
        if np.isscalar(value):
            eta = [float(value)] * self.J
        else:
            eta = [float(v) for v in value]
        if len(eta) != self.J:
            raise ConfigurationError(f"{len(eta)} eta values for J={self.J} blocks")
        if any(e < 0 for e in eta):
            raise ConfigurationError(f"eta must be nonnegative: {eta}")
        return eta

    def _default_eta(self) -> List[float]:
        eta = []
        for j, fj in enumerate(self.problem.f):
            penalty = self.rho * self.A.column_spectral_bound(j)
            smooth = fj.lipschitz
            if self.mode is UpdateMode.LINEARIZED_PENALTY:
                eta.append(penalty)
            elif smooth is None:
                raise ConfigurationError(f"block {j}: {type(fj).__name__} has no gradient for {self.mode.value}")
            elif self.mode is UpdateMode.LINEARIZED_F:
                eta.append(smooth if smooth > 0 else penalty)
            else:
                eta.append(penalty + smooth)
        return eta

    def _resolve_steps(self) -> Tuple[StepSizes, List[float]]:
        cfg = self.config
        degrees = self.A.degrees
        if self.variant in (Variant.SADMM, Variant.PJADMM) and (cfg.step_sizes is not None or cfg.preset != "table1"):
            raise ConfigurationError(f"{self.variant.value} fixes (tau, nu); step-size overrides are not accepted")

        if self.variant is Variant.PJADMM:
            if cfg.eta is not None:
                raise ConfigurationError("pjadmm derives eta from the block spectral bounds; drop the eta override")
            spectral = {(i, j): self.A.block_spectral_bound(i, j) for (i, j) in self.A.blocks}
            steps, eta = pjadmm_step_sizes(degrees, self.rho, self.I, spectral, [1.0] * self.J)
            return steps, eta

        if cfg.eta is not None:
            eta = self._eta_vector(cfg.eta)
        elif self.mode is UpdateMode.EXACT:
            eta = [0.0] * self.J
        else:
            eta = self._default_eta()

        if cfg.step_sizes is not None:
            steps = cfg.step_sizes
            if len(steps.tau) != self.I:
                raise ConfigurationError(f"step sizes cover {len(steps.tau)} rows, problem has {self.I}")
        elif self.variant is Variant.SADMM:
            steps = sadmm_step_sizes(self.J, degrees)
        elif self.variant is Variant.RDBCD or self.K_I < self.I:
            steps = rdbcd_step_sizes(self.J, self.I, self.K, self.K_I, degrees)
        else:
            steps = preset_step_sizes(cfg.preset, self.J, self.K, degrees)
        return steps, eta

    def _check_steps(self) -> ValidityReport:
        spectral = None
        if any(e > 0 for e in self.eta) and self.variant is Variant.PJADMM:
            spectral = {(i, j): self.A.block_spectral_bound(i, j) for (i, j) in self.A.blocks}
            report = validity_check(self.steps, self.J, self.A.degrees, eta=self.eta,
                                    spectral=spectral, alpha=[1.0] * self.J, rho=self.rho)
        else:
            report = validity_check(self.steps, self.J, self.A.degrees)
        if not report.ok:
            message = f"step sizes {self.steps.describe()} violate: " + "; ".join(report.violations)
            # sADMM and named presets are run as stated even outside the certified region
            chosen_explicitly = (self.variant is Variant.SADMM or self.config.allow_invalid_steps
                                 or self.config.preset != "table1")
            if chosen_explicitly:
                self.logger.warning(message)
            else:
                raise ConfigurationError(message)
        return report

    def _validate_update_rule(self) -> None:
        if self.mode is UpdateMode.EXACT:
            return
        for j, fj in enumerate(self.problem.f):
            eta_j = self.eta[j]
            if eta_j <= 0:
                raise ConfigurationError(f"block {j}: {self.mode.value} needs eta_j > 0")
            penalty = self.rho * self.A.column_spectral_bound(j)
            need = 0.0
            if self.mode in (UpdateMode.LINEARIZED_PENALTY, UpdateMode.LINEARIZED_BOTH):
                need += penalty
            if self.mode in (UpdateMode.LINEARIZED_F, UpdateMode.LINEARIZED_BOTH):
                if fj.lipschitz is None:
                    raise ConfigurationError(f"block {j}: {type(fj).__name__} has no gradient for {self.mode.value}")
                need += fj.lipschitz
            if eta_j < need * (1.0 - 1e-12):
                raise ConfigurationError(f"block {j}: eta={eta_j:.6g} below the required bound {need:.6g} "
                                         f"for {self.mode.value}")

    # --- state ---

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.config.base_seed, self.config.seed]))

    def initial_state(self, x0: Optional[BlockVector] = None, y0: Optional[BlockVector] = None,
                      y_hat0: Optional[BlockVector] = None) -> SolverState:
        p = self.A.partition
        x = BlockVector.zeros(p.col_sizes) if x0 is None else x0.copy()
        y = BlockVector.zeros(p.row_sizes) if y0 is None else y0.copy()
        if x.sizes != p.col_sizes or y.sizes != p.row_sizes:
            raise DimensionError("initial point does not match the problem partition")
        r = self.problem.residual(x)
        if y_hat0 is not None:
            y_hat = y_hat0.copy()
        elif y0 is not None:
            y_hat = BlockVector(p.row_sizes, y.data - self._nu_full * self.rho * r.data)
        else:
            y_hat = BlockVector.zeros(p.row_sizes)
        # predecessor with y^0 = y^{-1} + tau rho r^0
        y_prev = BlockVector(p.row_sizes, y.data - self._tau_full * self.rho * r.data)
        return SolverState(x, y, y_hat, r, 0, self.make_rng(), y_prev)

    # --- primal updates ---

    def _cached_factor(self, key: Tuple[str, int], build):
        with self._factor_lock:
            cached = self._factors.get(key)
        if cached is None:
            try:
                cached = scipy.linalg.cho_factor(build())
            except np.linalg.LinAlgError as e:
                raise DivergenceError(f"block {key[1]}: subproblem is not strongly convex ({e}); "
                                      f"the update is unbounded or not unique")
            with self._factor_lock:
                self._factors[key] = cached
        return cached

    def _dense_gram(self, j: int) -> np.ndarray:
        gram = self.A.column_gram(j)
        return gram.toarray() if sp.issparse(gram) else gram

    def _linear_term(self, state: SolverState, j: int, w: Optional[BlockVector]) -> np.ndarray:
        if w is None:
            w = BlockVector(state.r.sizes, state.y_hat.data + self.rho * state.r.data)
        return self.A.column_adjoint(j, w)

    def primal_update_exact(self, state: SolverState, j: int, w: Optional[BlockVector] = None) -> np.ndarray:
        """argmin f_j(x) + <g, x> + (rho/2)||A_j(x - x_j^t)||^2 + (eta_j/2)||x - x_j^t||^2"""
        fj = self.problem.f[j]
        g = self._linear_term(state, j, w)
        xt = state.x.block(j)
        eta_j = self.eta[j]
        c = self.A.column_gram_scalar(j)

        if c is not None and fj.has_prox:
            mu = self.rho * c + eta_j
            if mu <= 0:
                raise DivergenceError(f"block {j}: subproblem has no curvature (A_j = 0, eta_j = 0)")
            return fj.prox(xt - g / mu, 1.0 / mu)

        if fj.is_quadratic:
            H, q = fj.quadratic_data()

            def build():
                return H + self.rho * self._dense_gram(j) + eta_j * np.eye(fj.size)
            factor = self._cached_factor(("exact", j), build)
            rhs = self.rho * self.A.column_gram_apply(j, xt) + eta_j * xt - g - q
            return scipy.linalg.cho_solve(factor, rhs)

        if self.config.inner_max_iter > 0 and fj.has_prox:
            return self._inner_prox_gradient(fj, j, g, xt, eta_j)

        raise ConfigurationError(
            f"block {j}: no exact minimizer for {type(fj).__name__} with a non-orthogonal column block; "
            f"use update_mode linearized-penalty or set inner_max_iter > 0")

    def _inner_prox_gradient(self, fj: BlockFunction, j: int, g: np.ndarray, xt: np.ndarray,
                             eta_j: float) -> np.ndarray:
        """Accelerated proximal gradient on the exact subproblem"""
        lipschitz = self.rho * self.A.column_spectral_bound(j) + eta_j
        step = 1.0 / lipschitz
        x = xt.copy()
        v = xt.copy()
        theta = 1.0
        for _ in range(self.config.inner_max_iter):
            grad = g + self.rho * self.A.column_gram_apply(j, v - xt) + eta_j * (v - xt)
            x_next = fj.prox(v - step * grad, step)
            theta_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
            v = x_next + ((theta - 1.0) / theta_next) * (x_next - x)
            done = np.linalg.norm(x_next - x) <= self.config.inner_tol * (1.0 + np.linalg.norm(x))
            x, theta = x_next, theta_next
            if done:
                break
        return x

    def primal_update_bregman(self, state: SolverState, j: int, w: Optional[BlockVector] = None) -> np.ndarray:
        """Linearized updates; eta_j bounds are checked at construction"""
        fj = self.problem.f[j]
        g = self._linear_term(state, j, w)
        xt = state.x.block(j)
        eta_j = self.eta[j]

        if self.mode is UpdateMode.LINEARIZED_PENALTY:
            return fj.prox(xt - g / eta_j, 1.0 / eta_j)

        grad = fj.gradient(xt) + g
        if self.mode is UpdateMode.LINEARIZED_BOTH:
            return xt - grad / eta_j

        # linearized-f: (rho G + eta I) dx = -(grad f + g)
        c = self.A.column_gram_scalar(j)
        if c is not None:
            return xt - grad / (self.rho * c + eta_j)
        factor = self._cached_factor(("linearized-f", j),
                                     lambda: self.rho * self._dense_gram(j) + eta_j * np.eye(fj.size))
        return xt + scipy.linalg.cho_solve(factor, -grad)

    def primal_update(self, state: SolverState, j: int, w: BlockVector) -> np.ndarray:
        try:
            if self.mode is UpdateMode.EXACT:
                x_new = self.primal_update_exact(state, j, w)
            else:
                x_new = self.primal_update_bregman(state, j, w)
        except NumericalError as e:
            if e.block is None:
                raise NumericalError(str(e), block=j) from e
            raise
        return self.problem.f[j].constraint_project(np.asarray(x_new, dtype=float))

    def bregman(self, j: int, u: np.ndarray, v: np.ndarray) -> float:
        """B_phi_j(u, v) for the generator implied by the update mode"""
        d = u - v
        value = 0.5 * float(d @ d)
        eta_j = self.eta[j]
        if eta_j <= 0:
            return 0.0
        if self.mode in (UpdateMode.LINEARIZED_PENALTY, UpdateMode.LINEARIZED_BOTH):
            Ad = self.A.column_apply(j, d)
            value -= self.rho / (2.0 * eta_j) * sum(float(v_i @ v_i) for v_i in Ad.values())
        if self.mode in (UpdateMode.LINEARIZED_F, UpdateMode.LINEARIZED_BOTH):
            value -= self.problem.f[j].bregman(u, v) / eta_j
        return value

    # --- residual and dual ---

    def residual_update(self, state: SolverState, deltas: Dict[int, Dict[int, np.ndarray]]) -> None:
        """r += sum_j A_j dx_j folded in sorted block order; full refresh every residual_refresh steps"""
        if state.t % self.config.residual_refresh == 0:
            state.r = self.problem.residual(state.x)
            return
        for j in sorted(deltas):
            for i in sorted(deltas[j]):
                state.r.data[state.r.offsets[i]:state.r.offsets[i + 1]] += deltas[j][i]

    def dual_update(self, state: SolverState, dual_selected: Optional[Sequence[int]] = None) -> None:
        """y_i += tau_i rho r_i on the selected rows; y_hat = y - nu rho r on every row"""
        step = self._tau_full * self.rho * state.r.data
        if dual_selected is None or len(dual_selected) == self.I:
            state.y.data += step
        else:
            for i in dual_selected:
                lo, hi = state.y.offsets[i], state.y.offsets[i + 1]
                state.y.data[lo:hi] += step[lo:hi]
        state.y_hat.data[:] = state.y.data - self._nu_full * self.rho * state.r.data

    # --- iteration ---

    def iterate(self, state: SolverState, selected: Optional[Sequence[int]] = None,
                dual_selected: Optional[Sequence[int]] = None, record: bool = True,
                kkt: Optional[KKTPoint] = None, start_time: Optional[float] = None
                ) -> Tuple[SolverState, Optional[TraceRecord]]:
        """One iteration, in place; selections are drawn from the state's generator when not given"""
        if selected is None:
            selected = self._primal_sampler.draw(state.rng, state.t)
        selected = tuple(sorted(int(j) for j in selected))
        if dual_selected is None and self.K_I < self.I:
            dual_selected = self._dual_sampler.draw(state.rng, state.t)

        w = BlockVector(state.r.sizes, state.y_hat.data + self.rho * state.r.data)
        x_old = state.x.copy() if record else None

        def update(j: int):
            x_new = self.primal_update(state, j, w)
            return j, x_new, self.A.column_apply(j, x_new - state.x.block(j))

        if self._executor is not None and len(selected) > 1:
            results = list(self._executor.map(update, selected))
        else:
            results = [update(j) for j in selected]
        results.sort(key=lambda item: item[0])

        deltas = {}
        for j, x_new, delta in results:
            state.x.set_block(j, x_new)
            deltas[j] = delta

        state.t += 1
        self.residual_update(state, deltas)
        if self.config.track_h:
            state.y_prev = state.y.copy()
        self.dual_update(state, dual_selected)

        if not record:
            return state, None

        objective = self.problem.objective(state.x)
        primal_residual = state.r.norm()
        R_value = None
        if self.config.track_R:
            z_delta = ZVector({(i, j): v for j, delta in deltas.items() for i, v in delta.items()})
            R_value = residual_R(state.x, x_old, self.A, self.problem.a, self.constants.beta, selected,
                                 self.K, self.rho, self.eta, self.bregman, residual=state.r, z_delta=z_delta)
        h_value = self._h(state, kkt, objective) if kkt is not None else None
        elapsed = time.perf_counter() - start_time if start_time is not None else 0.0
        return state, TraceRecord(state.t, objective, primal_residual, R_value, h_value, elapsed, selected)

    def _h(self, state: SolverState, kkt: KKTPoint, objective: Optional[float] = None,
           strict: Optional[bool] = None) -> float:
        if objective is None:
            objective = self.problem.objective(state.x)
        if strict is None:
            strict = self.report.ok and self.variant is Variant.PDMM and self.K_I == self.I and state.t > 0
        y_prev = state.y_prev if state.y_prev is not None else state.y
        return lyapunov_h(state.x, state.y, y_prev, objective, self.A, self.problem.a, kkt, self.constants,
                          self.bregman, strict=strict, check_identity=self.config.check_identity)

    def lyapunov(self, state: SolverState, kkt: KKTPoint) -> float:
        return self._h(state, kkt)

    def expected_next_h(self, state: SolverState, kkt: KKTPoint) -> float:
        """E[h(v*, v^{t+1}) | v^t] by enumerating every primal (and dual) selection"""
        primal = self._primal_sampler.all_subsets()
        dual = [None] if self.K_I == self.I else list(itertools.combinations(range(self.I), self.K_I))
        saved = self.config.track_h
        self.config.track_h = True
        try:
            values = []
            for subset in primal:
                for dual_subset in dual:
                    trial = state.copy()
                    self.iterate(trial, subset, dual_subset, record=False)
                    values.append(self._h(trial, kkt))
        finally:
            self.config.track_h = saved
        return float(np.mean(values))

    @property
    def _primal_sampler(self) -> Sampler:
        sampler = getattr(self, "_sampler_cache", None)
        if sampler is None:
            sampler = Sampler(self.scheme, self.K, self.J, self.make_rng())
            self._sampler_cache = sampler
        return sampler

    @property
    def _dual_sampler(self) -> Sampler:
        sampler = getattr(self, "_dual_sampler_cache", None)
        if sampler is None:
            sampler = Sampler(SamplingScheme.UNIFORM, self.K_I, self.I)
            self._dual_sampler_cache = sampler
        return sampler

    def solve(self, x0: Optional[BlockVector] = None, y0: Optional[BlockVector] = None,
              y_hat0: Optional[BlockVector] = None, kkt: Optional[KKTPoint] = None) -> SolveResult:
        """Iterate until the relative change of (x, y) drops below tol or max_iter is reached"""
        cfg = self.config
        if kkt is None and cfg.track_h:
            kkt = self.problem.kkt
            if kkt is None:
                raise ConfigurationError("track_h needs a KKT reference (x_star and y_star)")
        if not cfg.track_h:
            kkt = None

        state = self.initial_state(x0, y0, y_hat0)
        trace = Trace(metadata={
            "variant": self.variant.value, "K": self.K, "K_I": self.K_I, "rho": self.rho,
            "sampler": self.scheme.value, "update_mode": self.mode.value, "seed": cfg.seed,
            "steps": self.steps.describe(),
        })
        averager = ErgodicAverager(state.x.sizes) if cfg.track_ergodic else None

        self.logger.info(f"Solving {self.problem.name}: {self.variant.value} J={self.J} I={self.I} "
                         f"K={self.K} K_I={self.K_I} rho={self.rho} sampler={self.scheme.value} "
                         f"mode={self.mode.value}; {self.steps.describe()}")

        start = time.perf_counter()
        objective = self.problem.objective(state.x)
        trace.append(TraceRecord(0, objective, state.r.norm(), None,
                                 self._h(state, kkt, objective) if kkt is not None else None, 0.0, ()))

        executor = ThreadPoolExecutor(max_workers=self.threads) if self.threads > 1 else None
        self._executor = executor
        try:
            while True:
                x_old = state.x.copy()
                y_old = state.y.copy()
                state, record = self.iterate(state, kkt=kkt, start_time=start)
                trace.append(record)
                if averager is not None:
                    averager.update(state.x)

                if not (abs(record.objective) <= cfg.divergence_threshold
                        and record.primal_residual <= cfg.divergence_threshold):
                    trace.stop_reason = "diverged"
                    raise DivergenceError(f"{self.problem.name}: diverged at t={state.t} "
                                          f"(objective={record.objective:.3e}, ||r||={record.primal_residual:.3e})",
                                          trace)

                change = (np.linalg.norm(state.x.data - x_old.data) / max(x_old.norm(), DENOMINATOR_FLOOR)
                          + np.linalg.norm(state.y.data - y_old.data) / max(y_old.norm(), DENOMINATOR_FLOOR))
                if cfg.log_every and state.t % cfg.log_every == 0:
                    self.logger.debug(f"t={state.t} objective={record.objective:.10g} "
                                      f"residual={record.primal_residual:.3e} change={change:.3e}")
                if change <= cfg.tol:
                    trace.stop_reason = "tolerance"
                    break
                if state.t >= cfg.max_iter:
                    trace.stop_reason = "max_iter"
                    break
        finally:
            self._executor = None
            if executor is not None:
                executor.shutdown()

        self.logger.info(f"{self.problem.name}: stopped by {trace.stop_reason} after {state.t} iterations, "
                         f"objective={trace.last.objective:.10g}, residual={trace.last.primal_residual:.3e}")
        return SolveResult(state.x, state.y, trace, state, averager.mean if averager is not None else None)


def solve(problem: Problem, config: Optional[SolverConfig] = None, **kwargs) -> SolveResult:
    return PDMMSolver(problem, config).solve(**kwargs)
