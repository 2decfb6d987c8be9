"""
Overlapping Group Lasso
min (1/(2 L lam)) ||A w - b||^2 + sum_g d_g ||w_g||_2 through the splitting x_g = U_g' w
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from block_linalg import BlockVector
from constants import GROUP_LASSO_DECAY, GROUP_LASSO_NOISE_STD
from exceptions import ConfigurationError, ValidationError
from pdmm_solver import Problem
from prox_library import GroupL2Norm, LeastSquaresLoss
from splitting import build_overlap_splitting, lift
from stepsize import table1_step_sizes

logger = logging.getLogger(__name__)


@dataclass
class GroupLassoInstance:
    A_data: np.ndarray
    b: np.ndarray
    groups: List[np.ndarray]
    weights: np.ndarray
    lam: float
    x_true: Optional[np.ndarray] = None
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        self.A_data = np.asarray(self.A_data, dtype=float)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.groups = [np.asarray(g, dtype=int) for g in self.groups]
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        m, n = self.A_data.shape
        if self.b.shape[0] != m:
            raise ValidationError(f"response has {self.b.shape[0]} entries, design has {m} rows")
        if len(self.weights) != len(self.groups):
            raise ValidationError(f"{len(self.weights)} group weights for {len(self.groups)} groups")
        for g, idx in enumerate(self.groups):
            if idx.size == 0 or idx.min() < 0 or idx.max() >= n:
                raise ValidationError(f"group {g} indexes outside [0, {n})")
        if self.lam <= 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if np.any(self.weights <= 0):
            raise ConfigurationError("group weights must be positive")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_features(self) -> int:
        return self.A_data.shape[1]

    @property
    def loss_scale(self) -> float:
        return 1.0 / (self.n_groups * self.lam)


def make_groups(L: int, b: int, overlap: int) -> List[np.ndarray]:
    """L consecutive groups of size b, neighbours sharing `overlap` indices"""
    if not 0 <= overlap < b:
        raise ConfigurationError(f"overlap must be in [0, b={b}), got {overlap}")
    stride = b - overlap
    return [np.arange(g * stride, g * stride + b) for g in range(L)]


def true_coefficients(n: int) -> np.ndarray:
    """x_j = (-1)^j exp(-(j - 1)/100) for 1-based j"""
    j = np.arange(1, n + 1)
    return np.where(j % 2 == 0, 1.0, -1.0) * np.exp(-(j - 1) / GROUP_LASSO_DECAY)


def gen_group_lasso_synthetic(m: int, L: int, b: int, overlap: int, seed: int,
                              noise_std: float = GROUP_LASSO_NOISE_STD,
                              lam: Optional[float] = None) -> GroupLassoInstance:
    """Gaussian design, d_g = 1/L, lam = L/5 unless given"""
    groups = make_groups(L, b, overlap)
    n = L * (b - overlap) + overlap
    rng = np.random.default_rng(seed)
    A_data = rng.standard_normal((m, n))
    x_true = true_coefficients(n)
    response = A_data @ x_true + noise_std * rng.standard_normal(m)
    lam = L / 5.0 if lam is None else float(lam)
    params = {"m": m, "L": L, "b": b, "overlap": overlap, "seed": seed, "noise_std": noise_std, "lam": lam}
    return GroupLassoInstance(A_data, response, groups, np.full(L, 1.0 / L), lam, x_true, params)


def group_lasso_objective(instance: GroupLassoInstance, w: np.ndarray) -> float:
    res = instance.A_data @ w - instance.b
    penalty = sum(d * float(np.linalg.norm(w[g])) for d, g in zip(instance.weights, instance.groups))
    return 0.5 * instance.loss_scale * float(res @ res) + penalty


def build_group_lasso(instance: GroupLassoInstance, name: Optional[str] = None) -> Problem:
    """
    J = L + 1 blocks: group copies under d_g ||.||_2, then w under the scaled
    least-squares loss. Every row block has d_i = 2.
    """
    local = [GroupL2Norm(d, len(g)) for d, g in zip(instance.weights, instance.groups)]
    loss = LeastSquaresLoss(instance.A_data, instance.b, scale=instance.loss_scale)
    name = name or f"group-lasso(L={instance.n_groups},n={instance.n_features})"
    problem = build_overlap_splitting(local, instance.groups, loss, name=name,
                                      metadata={"kind": "group-lasso", "params": dict(instance.params)})
    J = problem.J
    problem.metadata["step_sizes"] = {K: table1_step_sizes(J, K, problem.A.degrees) for K in sorted({1, 2, J})}
    return problem


def lift_weights(instance: GroupLassoInstance, w: np.ndarray) -> BlockVector:
    return lift(instance.groups, w)


def recover_weights(problem: Problem, x: BlockVector) -> np.ndarray:
    return x.block(problem.J - 1).copy()
