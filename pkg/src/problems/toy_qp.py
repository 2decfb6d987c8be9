"""
Toy Quadratic Programs
Separable quadratics under a random block constraint, with the KKT pair in closed form
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from block_linalg import BlockMatrix, BlockPartition, BlockVector
from exceptions import ValidationError
from pdmm_solver import Problem
from prox_library import SquaredDistance

logger = logging.getLogger(__name__)

KKT_CONDITION_LIMIT = 1e10


@dataclass
class ToyQPSpec:
    """
    f_j(x_j) = (1/2)||x_j - c_j||^2 with a random I x J block constraint.

    matrix / rhs / centers fix the data instead of drawing it.
    """
    J: int = 3
    I: int = 2
    block_size: int = 2
    row_size: int = 2
    density: float = 1.0
    seed: int = 0
    matrix: Optional[BlockMatrix] = None
    rhs: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    max_attempts: int = 20


def kkt_solution(A_dense: np.ndarray, a: np.ndarray, c: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """x* = c - A'y*,  (AA') y* = Ac - a"""
    gram = A_dense @ A_dense.T
    if np.linalg.cond(gram) > KKT_CONDITION_LIMIT:
        raise ValidationError(f"KKT system is singular (cond = {np.linalg.cond(gram):.3e})")
    y = np.linalg.solve(gram, A_dense @ c - a)
    return c - A_dense.T @ y, y


def _random_pattern(spec: ToyQPSpec, rng: np.random.Generator) -> np.ndarray:
    pattern = rng.random((spec.I, spec.J)) < spec.density
    for i in range(spec.I):
        if not pattern[i].any():
            pattern[i, rng.integers(spec.J)] = True
    for j in range(spec.J):
        if not pattern[:, j].any():
            pattern[rng.integers(spec.I), j] = True
    return pattern


def _draw(spec: ToyQPSpec, seed: int):
    rng = np.random.default_rng(seed)
    partition = BlockPartition((spec.row_size,) * spec.I, (spec.block_size,) * spec.J)
    pattern = _random_pattern(spec, rng)
    blocks = {}
    for i in range(spec.I):
        for j in range(spec.J):
            if pattern[i, j]:
                blocks[(i, j)] = rng.standard_normal((spec.row_size, spec.block_size)) / np.sqrt(spec.row_size)
    A = BlockMatrix(partition, blocks)
    a = rng.standard_normal(partition.m)
    c = rng.standard_normal(partition.n)
    return A, a, c


def build_toy_qp(spec: ToyQPSpec) -> Problem:
    """Problem with x_star / y_star filled in"""
    if spec.matrix is not None:
        A = spec.matrix
        a = np.zeros(A.partition.m) if spec.rhs is None else np.asarray(spec.rhs, dtype=float).ravel()
        c = np.zeros(A.partition.n) if spec.centers is None else np.asarray(spec.centers, dtype=float).ravel()
        x_star, y_star = kkt_solution(A.to_dense(), a, c)
        seed = spec.seed
    else:
        for attempt in range(spec.max_attempts):
            seed = spec.seed + attempt
            A, a, c = _draw(spec, seed)
            if spec.rhs is not None:
                a = np.asarray(spec.rhs, dtype=float).ravel()
            if spec.centers is not None:
                c = np.asarray(spec.centers, dtype=float).ravel()
            try:
                x_star, y_star = kkt_solution(A.to_dense(), a, c)
                break
            except ValidationError:
                logger.info(f"toy QP seed {seed} gave a singular KKT system; redrawing")
        else:
            raise ValidationError(f"no nonsingular toy QP in {spec.max_attempts} draws from seed {spec.seed}")

    p = A.partition
    centers = BlockVector(p.col_sizes, c)
    functions = [SquaredDistance(centers.block(j)) for j in range(p.J)]
    problem = Problem(A, BlockVector(p.row_sizes, a), functions,
                      x_star=BlockVector(p.col_sizes, x_star), y_star=BlockVector(p.row_sizes, y_star),
                      name=f"toy-qp(J={p.J},I={p.I},seed={seed})",
                      metadata={"kind": "toy-qp", "seed": seed, "density": spec.density})
    problem.metadata["optimal_objective"] = problem.objective(problem.x_star)
    return problem


def kkt_residual(problem: Problem) -> float:
    """max of ||x* - c + A'y*|| and ||Ax* - a||"""
    A_dense = problem.A.to_dense()
    centers = np.concatenate([f.center for f in problem.f])
    stationarity = problem.x_star.data - centers + A_dense.T @ problem.y_star.data
    feasibility = A_dense @ problem.x_star.data - problem.a.data
    return float(max(np.linalg.norm(stationarity), np.linalg.norm(feasibility)))
