"""
Proximal Operator Library
Block functions f_j behind one interface: value, prox, gradient, local constraint
"""

import logging
import threading
from abc import ABC, abstractmethod
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from exceptions import ConfigurationError, DimensionError, NumericalError

logger = logging.getLogger(__name__)


# === PROXIMAL OPERATORS ===

def prox_l1(v: np.ndarray, lam: float) -> np.ndarray:
    """Soft threshold sign(v) max(|v| - lam, 0)"""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_group_l2(v: np.ndarray, lam: float) -> np.ndarray:
    """Block shrinkage max(1 - lam/||v||, 0) v"""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= lam:
        return np.zeros_like(v)
    return (1.0 - lam / norm) * v


def prox_nuclear(V: np.ndarray, lam: float) -> np.ndarray:
    """Singular value thresholding"""
    V = np.asarray(V, dtype=float)
    try:
        U, s, Wt = scipy.linalg.svd(V, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        try:
            U, s, Wt = scipy.linalg.svd(V, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"SVD of {V.shape[0]}x{V.shape[1]} matrix failed: {e}") from e
    shrunk = np.maximum(s - lam, 0.0)
    keep = shrunk > 0.0
    return (U[:, keep] * shrunk[keep]) @ Wt[keep, :]


def prox_sq_frobenius(V: np.ndarray, lam: float, scale: float = 1.0) -> np.ndarray:
    """prox of (c/2)||.||_F^2: V / (1 + c lam)"""
    return np.asarray(V, dtype=float) / (1.0 + scale * lam)


class QuadraticLossSolver:
    """
    Solves (H + mu I) u = mu v - g with one cached Cholesky factor per mu.

    Factors are immutable once stored, so concurrent solves are safe.
    """

    def __init__(self, H: np.ndarray):
        self.H = np.asarray(H, dtype=float)
        if self.H.ndim != 2 or self.H.shape[0] != self.H.shape[1]:
            raise DimensionError(f"H must be square, got {self.H.shape}")
        self._factors: Dict[float, Tuple[np.ndarray, bool]] = {}
        self._lock = threading.Lock()

    def factor(self, mu: float):
        with self._lock:
            cached = self._factors.get(mu)
        if cached is not None:
            return cached
        try:
            cached = scipy.linalg.cho_factor(self.H + mu * np.eye(self.H.shape[0]))
        except np.linalg.LinAlgError as e:
            raise NumericalError(f"system H + {mu} I is not positive definite: {e}") from e
        with self._lock:
            self._factors[mu] = cached
        return cached

    def solve(self, g: np.ndarray, mu: float, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self.factor(mu), mu * np.asarray(v, dtype=float) - np.asarray(g, dtype=float))


def quadratic_loss_solve(H: np.ndarray, g: np.ndarray, mu: float, v: np.ndarray) -> np.ndarray:
    """u solving (H + mu I) u = mu v - g"""
    if mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    return QuadraticLossSolver(H).solve(g, mu, v)


# === BLOCK FUNCTIONS ===

class BlockFunction(ABC):
    """
    One separable term f_j(x_j).

    Matrix-valued blocks are stored as row-major vectors; `shape` carries the
    matrix shape for the functions that need it.
    """

    has_prox = True
    is_quadratic = False

    def __init__(self, size: int, shape: Optional[Tuple[int, int]] = None):
        self.size = int(size)
        self.shape = shape
        if shape is not None and shape[0] * shape[1] != self.size:
            raise DimensionError(f"shape {shape} does not hold {self.size} entries")

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> float:
        pass

    def prox(self, v: np.ndarray, lam: float) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} has no proximal operator")

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise ConfigurationError(f"{type(self).__name__} is not differentiable; use an exact or linearized-penalty update")

    def subgradient(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(x)

    @property
    def lipschitz(self) -> Optional[float]:
        """Lipschitz constant of the gradient, None when not smooth"""
        return None

    def bregman(self, x_new: np.ndarray, x_old: np.ndarray) -> float:
        """B_f(x_new, x_old) for smooth f"""
        return float(self.evaluate(x_new) - self.evaluate(x_old)
                     - self.gradient(x_old) @ (x_new - x_old))

    def quadratic_data(self) -> Tuple[np.ndarray, np.ndarray]:
        """(H, q) with f(x) = 0.5 x'Hx + q'x + const"""
        raise ConfigurationError(f"{type(self).__name__} is not quadratic")

    def constraint_project(self, x: np.ndarray) -> np.ndarray:
        return x

    def _matrix(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float).reshape(self.shape)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(size={self.size})"


class ZeroFunction(BlockFunction):
    is_quadratic = True

    def evaluate(self, x):
        return 0.0

    def prox(self, v, lam):
        return np.array(v, dtype=float)

    def gradient(self, x):
        return np.zeros(self.size)

    @property
    def lipschitz(self):
        return 0.0

    def bregman(self, x_new, x_old):
        return 0.0

    def quadratic_data(self):
        return np.zeros((self.size, self.size)), np.zeros(self.size)


class L1Norm(BlockFunction):
    """weight * ||x||_1"""

    def __init__(self, weight: float, size: int, shape: Optional[Tuple[int, int]] = None):
        super().__init__(size, shape)
        if weight <= 0:
            raise ConfigurationError(f"l1 weight must be positive, got {weight}")
        self.weight = float(weight)

    def evaluate(self, x):
        return self.weight * float(np.abs(x).sum())

    def prox(self, v, lam):
        return prox_l1(v, self.weight * lam)

    def subgradient(self, x):
        return self.weight * np.sign(x)


class GroupL2Norm(BlockFunction):
    """weight * ||x||_2 over the whole block"""

    def __init__(self, weight: float, size: int):
        super().__init__(size)
        if weight <= 0:
            raise ConfigurationError(f"group weight must be positive, got {weight}")
        self.weight = float(weight)

    def evaluate(self, x):
        return self.weight * float(np.linalg.norm(x))

    def prox(self, v, lam):
        return prox_group_l2(v, self.weight * lam)

    def subgradient(self, x):
        norm = np.linalg.norm(x)
        return self.weight * x / norm if norm > 0 else np.zeros(self.size)


class NuclearNorm(BlockFunction):
    """weight * ||X||_* for X of the given shape"""

    def __init__(self, weight: float, shape: Tuple[int, int]):
        super().__init__(shape[0] * shape[1], tuple(shape))
        if weight <= 0:
            raise ConfigurationError(f"nuclear-norm weight must be positive, got {weight}")
        self.weight = float(weight)

    def evaluate(self, x):
        try:
            return self.weight * float(scipy.linalg.svdvals(self._matrix(x)).sum())
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"singular values of {self.shape} block failed: {e}") from e

    def prox(self, v, lam):
        return prox_nuclear(self._matrix(v), self.weight * lam).ravel()


class SquaredFrobenius(BlockFunction):
    """(scale/2) ||x||^2"""
    is_quadratic = True

    def __init__(self, size: int, scale: float = 1.0, shape: Optional[Tuple[int, int]] = None):
        super().__init__(size, shape)
        if scale <= 0:
            raise ConfigurationError(f"scale must be positive, got {scale}")
        self.scale = float(scale)

    def evaluate(self, x):
        return 0.5 * self.scale * float(x @ x)

    def prox(self, v, lam):
        return prox_sq_frobenius(v, lam, self.scale)

    def gradient(self, x):
        return self.scale * np.asarray(x, dtype=float)

    @property
    def lipschitz(self):
        return self.scale

    def bregman(self, x_new, x_old):
        d = x_new - x_old
        return 0.5 * self.scale * float(d @ d)

    def quadratic_data(self):
        return self.scale * np.eye(self.size), np.zeros(self.size)


class QuadraticFunction(BlockFunction):
    """0.5 x'Hx + q'x + const with H symmetric PSD"""
    is_quadratic = True

    def __init__(self, H: np.ndarray, q: Optional[np.ndarray] = None, const: float = 0.0):
        H = np.asarray(H, dtype=float)
        super().__init__(H.shape[0])
        self.H = 0.5 * (H + H.T)
        self.q = np.zeros(self.size) if q is None else np.asarray(q, dtype=float).ravel()
        self.const = float(const)
        self._solver = QuadraticLossSolver(self.H)
        self._lipschitz: Optional[float] = None

    def evaluate(self, x):
        return float(0.5 * x @ (self.H @ x) + self.q @ x + self.const)

    def prox(self, v, lam):
        return self._solver.solve(self.q, 1.0 / lam, v)

    def gradient(self, x):
        return self.H @ x + self.q

    @property
    def lipschitz(self):
        if self._lipschitz is None:
            self._lipschitz = float(max(scipy.linalg.eigvalsh(self.H)[-1], 0.0)) if self.size else 0.0
        return self._lipschitz

    def bregman(self, x_new, x_old):
        d = x_new - x_old
        return 0.5 * float(d @ (self.H @ d))

    def quadratic_data(self):
        return self.H, self.q


class LeastSquaresLoss(QuadraticFunction):
    """(scale/2) ||A w - b||^2, evaluated from the residual"""

    def __init__(self, A_data: np.ndarray, b: np.ndarray, scale: float = 1.0):
        A_data = np.asarray(A_data, dtype=float)
        b = np.asarray(b, dtype=float).ravel()
        super().__init__(scale * (A_data.T @ A_data), -scale * (A_data.T @ b), 0.5 * scale * float(b @ b))
        self.A_data = A_data
        self.b = b
        self.scale = float(scale)

    def evaluate(self, x):
        res = self.A_data @ x - self.b
        return 0.5 * self.scale * float(res @ res)


class SquaredDistance(QuadraticFunction):
    """(scale/2) ||x - center||^2"""

    def __init__(self, center: np.ndarray, scale: float = 1.0):
        center = np.asarray(center, dtype=float).ravel()
        super().__init__(scale * np.eye(center.shape[0]), -scale * center, 0.5 * scale * float(center @ center))
        self.center = center
        self.scale = float(scale)

    def evaluate(self, x):
        d = x - self.center
        return 0.5 * self.scale * float(d @ d)

    def prox(self, v, lam):
        return (np.asarray(v, dtype=float) + lam * self.scale * self.center) / (1.0 + lam * self.scale)

    @property
    def lipschitz(self):
        return self.scale


class BoxIndicator(BlockFunction):
    """Indicator of {lower <= x <= upper}"""

    def __init__(self, size: int, lower: float = -np.inf, upper: float = np.inf):
        super().__init__(size)
        if lower > upper:
            raise ConfigurationError(f"empty box [{lower}, {upper}]")
        self.lower = lower
        self.upper = upper

    def evaluate(self, x):
        tol = 1e-12 * (1.0 + float(np.max(np.abs(x), initial=0.0)))
        inside = np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        return 0.0 if inside else np.inf

    def prox(self, v, lam):
        return np.clip(v, self.lower, self.upper)

    def constraint_project(self, x):
        return np.clip(x, self.lower, self.upper)
