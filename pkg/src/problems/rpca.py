"""
Robust PCA
M = X1 + X2 + X3 split into a noise, a sparse and a low-rank part:

    min (1/2)||X1||_F^2 + g2 ||X2||_1 + g3 ||X3||_*   s.t.  X1 + X2 + X3 = M
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from block_linalg import BlockMatrix, BlockPartition, BlockVector
from constants import RPCA_NOISE_STD, RPCA_SPARSE_DENSITY, RPCA_SPARSE_SCALE, RPCA_WEIGHT_FRACTION
from exceptions import ConfigurationError
from pdmm_solver import Problem
from prox_library import L1Norm, NuclearNorm, SquaredFrobenius
from stepsize import table1_step_sizes

logger = logging.getLogger(__name__)


@dataclass
class RpcaInstance:
    """Observed matrix and weights; L, S, V are the generating components when synthetic"""
    M: np.ndarray
    gamma2: float
    gamma3: float
    L: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    params: Dict[str, object] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.M.shape


def default_weights(M: np.ndarray, fraction: float = RPCA_WEIGHT_FRACTION) -> Tuple[float, float]:
    """g2 = fraction * max|M_ij|,  g3 = fraction * ||M||_2"""
    if not np.any(M):
        return fraction, fraction
    return fraction * float(np.max(np.abs(M))), fraction * float(scipy.linalg.norm(M, 2))


def gen_rpca_synthetic(m: int, n: int, rank: int, seed: int,
                       density: float = RPCA_SPARSE_DENSITY,
                       sparse_scale: float = RPCA_SPARSE_SCALE,
                       noise_std: float = RPCA_NOISE_STD,
                       weight_fraction: float = RPCA_WEIGHT_FRACTION) -> RpcaInstance:
    """
    L = P Q' with P, Q Gaussian scaled by 1/sqrt(m), 1/sqrt(n) so the nonzero
    singular values are O(1); S has Bernoulli(density) support with entries
    +-U[0, 1] * sparse_scale; V is Gaussian noise.
    """
    if not 1 <= rank <= min(m, n):
        raise ConfigurationError(f"rank {rank} outside [1, min(m, n) = {min(m, n)}]")
    if not 0.0 < density < 1.0:
        raise ConfigurationError(f"sparse density must be in (0, 1), got {density}")
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((m, rank)) / np.sqrt(m)
    Q = rng.standard_normal((n, rank)) / np.sqrt(n)
    L = P @ Q.T
    support = rng.random((m, n)) < density
    signs = rng.choice(np.array([-1.0, 1.0]), size=(m, n))
    S = np.where(support, signs * rng.random((m, n)) * sparse_scale, 0.0)
    V = noise_std * rng.standard_normal((m, n))
    M = L + S + V
    gamma2, gamma3 = default_weights(M, weight_fraction)
    params = {"m": m, "n": n, "rank": rank, "seed": seed, "density": density,
              "sparse_scale": sparse_scale, "noise_std": noise_std, "weight_fraction": weight_fraction}
    logger.debug(f"RPCA instance {m}x{n} rank {rank} seed {seed}: nnz(S)={int(support.sum())}, "
                 f"gamma2={gamma2:.4g}, gamma3={gamma3:.4g}")
    return RpcaInstance(M, gamma2, gamma3, L, S, V, params)


def build_rpca(M: np.ndarray, gamma2: float, gamma3: float, name: str = "rpca") -> Problem:
    """Three identity column blocks over one row block (d = 3); every exact update is a prox"""
    if gamma2 <= 0 or gamma3 <= 0:
        raise ConfigurationError(f"RPCA weights must be positive, got gamma2={gamma2}, gamma3={gamma3}")
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ConfigurationError(f"M must be a matrix, got shape {M.shape}")
    shape = M.shape
    size = M.size
    partition = BlockPartition((size,), (size, size, size))
    A = BlockMatrix(partition, {(0, j): sp.identity(size, format="csr") for j in range(3)})
    f = [SquaredFrobenius(size, 1.0, shape), L1Norm(gamma2, size, shape), NuclearNorm(gamma3, shape)]
    steps = {K: table1_step_sizes(3, K, A.degrees) for K in (1, 2, 3)}
    return Problem(A, BlockVector((size,), M.ravel().copy()), f, name=name,
                   metadata={"kind": "rpca", "shape": shape, "gamma2": gamma2, "gamma3": gamma3,
                             "step_sizes": steps})


def build_rpca_instance(instance: RpcaInstance) -> Problem:
    problem = build_rpca(instance.M, instance.gamma2, instance.gamma3,
                         name=f"rpca({instance.shape[0]}x{instance.shape[1]})")
    problem.metadata["params"] = dict(instance.params)
    return problem


def split_components(problem: Problem, x: BlockVector) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    shape = problem.metadata["shape"]
    return tuple(x.block(j).reshape(shape) for j in range(3))


def rpca_objective(X1: np.ndarray, X2: np.ndarray, X3: np.ndarray, gamma2: float, gamma3: float) -> float:
    """(1/2)||X1||_F^2 + g2 ||X2||_1 + g3 ||X3||_*, evaluated directly"""
    return (0.5 * float(np.sum(X1 * X1)) + gamma2 * float(np.abs(X2).sum())
            + gamma3 * float(scipy.linalg.svdvals(X3).sum()))
