"""
Convergence Diagnostics
Optimality residual R, Lyapunov distance h, auxiliary Lagrangian and traces
"""

import logging
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from block_linalg import BlockMatrix, BlockVector, ZVector, build_Pt, build_Q
from constants import FEASIBILITY_TOL, H_LOWER_BOUND_TOL, Q_IDENTITY_TOL
from exceptions import NumericalError, ValidationError

logger = logging.getLogger(__name__)

# (j, u, v) -> B_phi_j(u, v)
BregmanFn = Callable[[int, np.ndarray, np.ndarray], float]


@dataclass
class TraceRecord:
    """One iteration of a solve"""
    t: int
    objective: float
    primal_residual: float
    R_value: Optional[float] = None
    h_value: Optional[float] = None
    wall_time: float = 0.0  # seconds since solve start
    selected_blocks: Tuple[int, ...] = ()


@dataclass
class Trace:
    """Ordered iteration records plus the reason the solve stopped"""
    records: List[TraceRecord] = field(default_factory=list)
    stop_reason: Optional[str] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def last(self) -> TraceRecord:
        return self.records[-1]

    @property
    def iterations(self) -> int:
        return self.records[-1].t if self.records else 0

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float)

    def at(self, t: int) -> TraceRecord:
        for record in self.records:
            if record.t == t:
                return record
        raise KeyError(f"no record for iteration {t}")

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row = asdict(r)
            row["selected_blocks"] = " ".join(str(j) for j in r.selected_blocks)
            rows.append(row)
        return pd.DataFrame(rows, columns=[f for f in TraceRecord.__dataclass_fields__])


@dataclass
class KKTPoint:
    """Reference primal-dual pair (x*, y*) and f(x*)"""
    x: BlockVector
    y: BlockVector
    objective: float

    def check_feasible(self, A: BlockMatrix, a: BlockVector) -> float:
        gap = (A.apply(self.x) - a).norm()
        if gap > FEASIBILITY_TOL * (1.0 + a.norm()):
            raise ValidationError(f"KKT reference is infeasible: ||A x* - a|| = {gap:.3e}")
        return gap


@dataclass(frozen=True)
class TheoryConstants:
    """Per-row step and certificate constants used by R and h"""
    rho: float
    K: int
    J: int
    tau: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    eta: np.ndarray
    dual_scale: float = 1.0  # I / K_I under dual sampling


def _row_residual_norms(r: BlockVector) -> np.ndarray:
    return np.array([float(r.block(i) @ r.block(i)) for i in range(r.n_blocks)])


def residual_R(x_new: BlockVector, x_old: BlockVector, A: BlockMatrix, a: BlockVector,
               beta: Sequence[float], selected: Sequence[int], K: int, rho: float,
               eta: Sequence[float], bregman: Optional[BregmanFn] = None,
               residual: Optional[BlockVector] = None, z_delta: Optional[ZVector] = None) -> float:
    """
    (rho/2) ||z^{t+1} - z^t||_{P_t}^2 + (rho/2) sum_i beta_i ||A_i x^{t+1} - a_i||^2
    + sum_j eta_j B_phi_j(x_j^{t+1}, x_j^t)
    """
    if z_delta is None:
        entries = {}
        for j in selected:
            for i, v in A.column_apply(j, x_new.block(j) - x_old.block(j)).items():
                entries[(i, j)] = v
        z_delta = ZVector(entries)
    pt_term = build_Pt(A, selected, K).evaluate(z_delta)
    if residual is None:
        residual = A.apply(x_new) - a
    dual_term = float(np.dot(np.asarray(beta, dtype=float), _row_residual_norms(residual)))
    bregman_term = 0.0
    if bregman is not None:
        for j in selected:
            if eta[j] > 0:
                bregman_term += eta[j] * bregman(j, x_new.block(j), x_old.block(j))
    return 0.5 * rho * (max(pt_term, 0.0) + dual_term) + bregman_term


def aux_lagrangian(x: BlockVector, y: BlockVector, objective: float, kkt: KKTPoint,
                   residual: BlockVector, gamma: Sequence[float], tau: Sequence[float],
                   rho: float) -> float:
    """f(x) - f(x*) + sum_i [<y_i, r_i> + ((gamma_i - tau_i) rho / 2) ||r_i||^2]"""
    total = objective - kkt.objective
    for i in range(residual.n_blocks):
        r_i = residual.block(i)
        total += float(y.block(i) @ r_i) + 0.5 * (gamma[i] - tau[i]) * rho * float(r_i @ r_i)
    return total


def q_identity_gap(A: BlockMatrix, a: BlockVector, x: BlockVector, kkt: KKTPoint) -> float:
    """|‖z - z*‖_Q^2 - sum_i [‖z_i - z_i*‖^2 - (1/d_i)‖A_i x - a_i‖^2]| for feasible x*"""
    dz = A.z_vector(x) - A.z_vector(kkt.x)
    lhs = build_Q(A).evaluate(dz)
    residual = A.apply(x) - a
    rhs = 0.0
    for i, d in enumerate(A.degrees):
        rhs += sum(float(v @ v) for v in dz.row(i, A.neighbors(i)))
        rhs -= float(residual.block(i) @ residual.block(i)) / d
    return abs(lhs - rhs)


def lyapunov_h(x: BlockVector, y: BlockVector, y_prev: BlockVector, objective: float,
               A: BlockMatrix, a: BlockVector, kkt: KKTPoint, constants: TheoryConstants,
               bregman: Optional[BregmanFn] = None, strict: bool = True,
               check_identity: bool = False) -> float:
    """
    h(v*, v^t) = (K/J) s sum_i ||y_i* - y_i^{t-1}||^2 / (2 tau_i rho) + L~(x^t, y^t)
                 + (rho/2) ||z* - z^t||_Q^2 + sum_j eta_j B_phi_j(x_j*, x_j^t)

    with s = I/K_I under dual sampling and 1 otherwise.
    """
    kkt.check_feasible(A, a)
    c = constants
    dual = 0.0
    for i in range(y.n_blocks):
        d = kkt.y.block(i) - y_prev.block(i)
        dual += float(d @ d) / (2.0 * c.tau[i] * c.rho)
    dual *= c.dual_scale * c.K / c.J

    residual = A.apply(x) - a
    lagrangian = aux_lagrangian(x, y, objective, kkt, residual, c.gamma, c.tau, c.rho)
    q_term = 0.5 * c.rho * build_Q(A).evaluate(A.z_vector(kkt.x) - A.z_vector(x))
    bregman_term = 0.0
    if bregman is not None:
        for j in range(c.J):
            if c.eta[j] > 0:
                bregman_term += c.eta[j] * bregman(j, kkt.x.block(j), x.block(j))
    h = dual + lagrangian + q_term + bregman_term

    if check_identity:
        gap = q_identity_gap(A, a, x, kkt)
        if gap > Q_IDENTITY_TOL * (1.0 + abs(q_term)):
            raise NumericalError(f"Q-norm identity violated by {gap:.3e}")

    if h < -H_LOWER_BOUND_TOL:
        if strict:
            raise NumericalError(f"Lyapunov distance is negative: h = {h:.3e}")
        logger.warning(f"Lyapunov distance is negative (h = {h:.3e}); step sizes outside the certified region")
    return h


def lyapunov_lower_bound(x: BlockVector, A: BlockMatrix, a: BlockVector, kkt: KKTPoint,
                         constants: TheoryConstants, bregman: Optional[BregmanFn] = None) -> float:
    """(rho/2) sum_i zeta_i ||r_i||^2 + (rho/2) ||z* - z||_Q^2 + sum_j eta_j B_phi_j(x_j*, x_j)"""
    c = constants
    residual = A.apply(x) - a
    value = 0.5 * c.rho * float(np.dot(c.zeta, _row_residual_norms(residual)))
    value += 0.5 * c.rho * build_Q(A).evaluate(A.z_vector(kkt.x) - A.z_vector(x))
    if bregman is not None:
        for j in range(c.J):
            if c.eta[j] > 0:
                value += c.eta[j] * bregman(j, kkt.x.block(j), x.block(j))
    return value


def ergodic_average(iterates: Sequence[BlockVector], T: Optional[int] = None) -> BlockVector:
    """(1/T) sum_{t=1}^T x^t"""
    T = len(iterates) if T is None else T
    if T < 1 or T > len(iterates):
        raise ValueError(f"T={T} outside [1, {len(iterates)}]")
    total = np.zeros_like(iterates[0].data)
    for x in iterates[:T]:
        total += x.data
    return BlockVector(iterates[0].sizes, total / T)


class ErgodicAverager:
    """Running mean of primal iterates"""

    def __init__(self, sizes: Sequence[int]):
        self.count = 0
        self._sum = np.zeros(int(np.sum(sizes)))
        self.sizes = tuple(sizes)

    def update(self, x: BlockVector) -> None:
        self._sum += x.data
        self.count += 1

    @property
    def mean(self) -> BlockVector:
        if self.count == 0:
            raise ValueError("no iterates averaged yet")
        return BlockVector(self.sizes, self._sum / self.count)


def ergodic_gap_bound(x1: BlockVector, y1: BlockVector, y0: BlockVector, objective_x1: float,
                      A: BlockMatrix, a: BlockVector, kkt: KKTPoint, constants: TheoryConstants,
                      T: int, bregman: Optional[BregmanFn] = None) -> float:
    """
    Upper bound on E f(x_bar^T) - f(x*):

      [ s sum_i ||y_i^0||^2 / (2 tau_i rho) + (J/K) { sum_i ||y_i*||^2 / (2 beta_i rho) + L~(x^1, y^1)
        + (rho/2) ||z* - z^1||_Q^2 + sum_j eta_j B_phi_j(x_j*, x_j^1) } ] / T
    """
    c = constants
    head = sum(float(y0.block(i) @ y0.block(i)) / (2.0 * c.tau[i] * c.rho) for i in range(y0.n_blocks))
    head *= c.dual_scale
    residual = A.apply(x1) - a
    body = sum(float(kkt.y.block(i) @ kkt.y.block(i)) / (2.0 * c.beta[i] * c.rho) for i in range(y1.n_blocks))
    body += aux_lagrangian(x1, y1, objective_x1, kkt, residual, c.gamma, c.tau, c.rho)
    body += 0.5 * c.rho * build_Q(A).evaluate(A.z_vector(kkt.x) - A.z_vector(x1))
    if bregman is not None:
        for j in range(c.J):
            if c.eta[j] > 0:
                body += c.eta[j] * bregman(j, kkt.x.block(j), x1.block(j))
    return (head + c.J / c.K * body) / T
