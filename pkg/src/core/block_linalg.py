"""
Block Linear Algebra
Block-partitioned vectors and matrices with the structural quantities used by the solver
(row degrees, column spectral bounds, the Q and P_t quadratic forms)
"""

import logging
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from constants import (
    EXACT_EIGENSOLVE_MAX_DIM,
    MATERIALIZE_MAX_DIM,
    POWER_ITERATION_MAX_ITER,
    POWER_ITERATION_TOL,
)
from exceptions import DimensionError, ValidationError

logger = logging.getLogger(__name__)

Block = Union[np.ndarray, sp.spmatrix]
BlockIndex = Tuple[int, int]


@dataclass(frozen=True)
class BlockPartition:
    """Row sizes m_i and column sizes n_j of an I x J block layout"""
    row_sizes: Tuple[int, ...]
    col_sizes: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "row_sizes", tuple(int(s) for s in self.row_sizes))
        object.__setattr__(self, "col_sizes", tuple(int(s) for s in self.col_sizes))
        if not self.row_sizes or not self.col_sizes:
            raise DimensionError("partition needs at least one row block and one column block")
        if min(self.row_sizes) <= 0 or min(self.col_sizes) <= 0:
            raise DimensionError(f"block sizes must be positive: rows={self.row_sizes} cols={self.col_sizes}")

    @property
    def I(self) -> int:
        return len(self.row_sizes)

    @property
    def J(self) -> int:
        return len(self.col_sizes)

    @property
    def m(self) -> int:
        return sum(self.row_sizes)

    @property
    def n(self) -> int:
        return sum(self.col_sizes)


class BlockVector:
    """
    Concatenated real vector split into consecutive blocks.

    Blocks are views into one contiguous array, so block writes are visible
    through `data` without copying.
    """

    def __init__(self, sizes: Sequence[int], data: Optional[np.ndarray] = None):
        self.sizes = tuple(int(s) for s in sizes)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes))).astype(int)
        total = int(self.offsets[-1])
        if data is None:
            self.data = np.zeros(total)
        else:
            data = np.asarray(data, dtype=float).ravel()
            if data.shape[0] != total:
                raise DimensionError(f"data length {data.shape[0]} != sum of block sizes {total}")
            self.data = data

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "BlockVector":
        return cls(sizes)

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "BlockVector":
        arrays = [np.asarray(b, dtype=float).ravel() for b in blocks]
        return cls([a.shape[0] for a in arrays], np.concatenate(arrays) if arrays else np.zeros(0))

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    def block(self, k: int) -> np.ndarray:
        return self.data[self.offsets[k]:self.offsets[k + 1]]

    def set_block(self, k: int, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=float).ravel()
        if value.shape[0] != self.sizes[k]:
            raise DimensionError(f"block {k}: expected length {self.sizes[k]}, got {value.shape[0]}")
        self.data[self.offsets[k]:self.offsets[k + 1]] = value

    def blocks(self) -> List[np.ndarray]:
        return [self.block(k) for k in range(self.n_blocks)]

    def copy(self) -> "BlockVector":
        return BlockVector(self.sizes, self.data.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(self.block(k)) for k in range(self.n_blocks)])

    def dot(self, other: "BlockVector") -> float:
        self._check_conforms(other)
        return float(self.data @ other.data)

    def expand(self, per_block: Sequence[float]) -> np.ndarray:
        """Repeat one scalar per block over that block's entries"""
        return np.repeat(np.asarray(per_block, dtype=float), self.sizes)

    def _check_conforms(self, other: "BlockVector") -> None:
        if self.sizes != other.sizes:
            raise DimensionError(f"block sizes differ: {self.sizes} vs {other.sizes}")

    def __add__(self, other: "BlockVector") -> "BlockVector":
        self._check_conforms(other)
        return BlockVector(self.sizes, self.data + other.data)

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        self._check_conforms(other)
        return BlockVector(self.sizes, self.data - other.data)

    def __mul__(self, scalar: float) -> "BlockVector":
        return BlockVector(self.sizes, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "BlockVector":
        return BlockVector(self.sizes, -self.data)

    def __repr__(self) -> str:
        return f"BlockVector(sizes={self.sizes})"


def _as_vector(value) -> np.ndarray:
    return np.asarray(value, dtype=float).ravel()


def _gram_scalar(gram) -> Optional[float]:
    """c when gram = c I up to rounding, else None"""
    diag = gram.diagonal()
    c = float(diag[0])
    if sp.issparse(gram):
        off = sp.csr_matrix(gram - sp.diags(diag))
        return c if np.allclose(diag, c, rtol=1e-12, atol=1e-14) and (
            off.nnz == 0 or np.max(np.abs(off.data)) <= 1e-14 * max(abs(c), 1.0)) else None
    return c if np.allclose(gram, c * np.eye(gram.shape[0]), rtol=1e-12, atol=1e-14 * max(abs(c), 1.0)) else None


def _top_eigenvalue(matvec, dim: int, dense_gram=None) -> float:
    """Largest eigenvalue of a PSD operator given by matvec"""
    if dim <= EXACT_EIGENSOLVE_MAX_DIM:
        gram = dense_gram() if dense_gram is not None else np.column_stack([matvec(e) for e in np.eye(dim)])
        return float(max(scipy.linalg.eigvalsh(gram)[-1], 0.0))

    v = np.random.default_rng(0).standard_normal(dim)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITERATION_MAX_ITER):
        w = matvec(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        new_estimate = float(v @ w)
        v = w / norm_w
        if abs(new_estimate - estimate) <= POWER_ITERATION_TOL * max(abs(new_estimate), 1e-300):
            return max(new_estimate, 0.0)
        estimate = new_estimate

    logger.warning(f"Power iteration did not converge in {POWER_ITERATION_MAX_ITER} steps "
                   f"(dim={dim}); falling back to exact eigensolve")
    gram = dense_gram() if dense_gram is not None else np.column_stack([matvec(e) for e in np.eye(dim)])
    return float(max(scipy.linalg.eigvalsh(gram)[-1], 0.0))


class BlockMatrix:
    """
    I x J block matrix stored as a map (i, j) -> block.

    Absent entries are zero blocks. Blocks may be dense arrays or scipy.sparse
    matrices; sparsity that matters to the solver is at block level only.
    """

    def __init__(self, partition: BlockPartition, blocks: Dict[BlockIndex, Block]):
        self.partition = partition
        self.blocks: Dict[BlockIndex, Block] = {}
        for (i, j), block in blocks.items():
            if not (0 <= i < partition.I and 0 <= j < partition.J):
                raise DimensionError(f"block index {(i, j)} outside {partition.I}x{partition.J} layout")
            if not sp.issparse(block):
                block = np.atleast_2d(np.asarray(block, dtype=float))
            else:
                block = sp.csr_matrix(block, dtype=float)
            expected = (partition.row_sizes[i], partition.col_sizes[j])
            if block.shape != expected:
                raise DimensionError(f"block {(i, j)} has shape {block.shape}, expected {expected}")
            self.blocks[(int(i), int(j))] = block

        neighbors: List[List[int]] = [[] for _ in range(partition.I)]
        column_rows: List[List[int]] = [[] for _ in range(partition.J)]
        for (i, j) in sorted(self.blocks):
            neighbors[i].append(j)
            column_rows[j].append(i)
        self._neighbors = tuple(tuple(n) for n in neighbors)
        self._column_rows = tuple(tuple(c) for c in column_rows)

        self._lock = threading.Lock()
        self._gram_cache: Dict[int, Block] = {}
        self._scalar_cache: Dict[int, Optional[float]] = {}
        self._spectral_cache: Dict[int, float] = {}
        self._block_spectral_cache: Dict[BlockIndex, float] = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    @classmethod
    def from_dense(cls, dense: np.ndarray, partition: BlockPartition) -> "BlockMatrix":
        """Split a dense matrix, keeping only blocks with a nonzero entry"""
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (partition.m, partition.n):
            raise DimensionError(f"dense shape {dense.shape} != ({partition.m}, {partition.n})")
        rows = np.concatenate(([0], np.cumsum(partition.row_sizes)))
        cols = np.concatenate(([0], np.cumsum(partition.col_sizes)))
        blocks = {}
        for i in range(partition.I):
            for j in range(partition.J):
                block = dense[rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
                if np.any(block != 0.0):
                    blocks[(i, j)] = block.copy()
        return cls(partition, blocks)

    # --- structure ---

    @property
    def I(self) -> int:
        return self.partition.I

    @property
    def J(self) -> int:
        return self.partition.J

    @property
    def degrees(self) -> Tuple[int, ...]:
        """d_i = number of stored blocks in row block i"""
        return tuple(len(n) for n in self._neighbors)

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self._neighbors[i]

    def column_rows(self, j: int) -> Tuple[int, ...]:
        return self._column_rows[j]

    def validate_structure(self) -> None:
        """Reject zero row blocks and empty columns"""
        empty_rows = [i for i, d in enumerate(self.degrees) if d == 0]
        if empty_rows:
            raise ValidationError(f"row blocks {empty_rows} have no nonzero block (d_i = 0)")
        empty_cols = [j for j in range(self.J) if not self._column_rows[j]]
        if empty_cols:
            raise ValidationError(f"column blocks {empty_cols} do not appear in any constraint")

    # --- products ---

    def _check_columns(self, x: BlockVector) -> None:
        if x.sizes != self.partition.col_sizes:
            raise DimensionError(f"vector blocks {x.sizes} do not match columns {self.partition.col_sizes}")

    def _check_rows(self, y: BlockVector) -> None:
        if y.sizes != self.partition.row_sizes:
            raise DimensionError(f"vector blocks {y.sizes} do not match rows {self.partition.row_sizes}")

    def row_block_apply(self, x: BlockVector, i: int) -> np.ndarray:
        """sum_{j in N(i)} A_ij x_j"""
        self._check_columns(x)
        out = np.zeros(self.partition.row_sizes[i])
        for j in self._neighbors[i]:
            out += _as_vector(self.blocks[(i, j)] @ x.block(j))
        return out

    def apply(self, x: BlockVector) -> BlockVector:
        self._check_columns(x)
        return BlockVector.from_blocks([self.row_block_apply(x, i) for i in range(self.I)])

    def column_apply(self, j: int, v: np.ndarray) -> Dict[int, np.ndarray]:
        """A_j^c v split by row block"""
        return {i: _as_vector(self.blocks[(i, j)] @ v) for i in self._column_rows[j]}

    def column_adjoint(self, j: int, w: BlockVector) -> np.ndarray:
        """(A_j^c)^T w"""
        self._check_rows(w)
        out = np.zeros(self.partition.col_sizes[j])
        for i in self._column_rows[j]:
            out += _as_vector(self.blocks[(i, j)].T @ w.block(i))
        return out

    def column_gram_apply(self, j: int, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.partition.col_sizes[j])
        for i in self._column_rows[j]:
            block = self.blocks[(i, j)]
            out += _as_vector(block.T @ _as_vector(block @ v))
        return out

    def z_vector(self, x: BlockVector) -> "ZVector":
        self._check_columns(x)
        return ZVector({(i, j): _as_vector(block @ x.block(j)) for (i, j), block in self.blocks.items()})

    # --- cached column quantities ---

    def column_gram(self, j: int) -> Block:
        """(A_j^c)^T A_j^c; sparse when every block in the column is sparse"""
        with self._lock:
            if j in self._gram_cache:
                return self._gram_cache[j]
        blocks = [self.blocks[(i, j)] for i in self._column_rows[j]]
        if blocks and all(sp.issparse(b) for b in blocks):
            gram = sp.csr_matrix((self.partition.col_sizes[j],) * 2)
            for b in blocks:
                gram = gram + (b.T @ b)
            gram = sp.csr_matrix(gram)
        else:
            gram = np.zeros((self.partition.col_sizes[j],) * 2)
            for b in blocks:
                dense = b.toarray() if sp.issparse(b) else b
                gram += dense.T @ dense
        with self._lock:
            self._gram_cache[j] = gram
        return gram

    def column_gram_scalar(self, j: int) -> Optional[float]:
        """c when (A_j^c)^T A_j^c = c I, else None"""
        with self._lock:
            if j in self._scalar_cache:
                return self._scalar_cache[j]
        result = _gram_scalar(self.column_gram(j))
        with self._lock:
            self._scalar_cache[j] = result
        return result

    def column_spectral_bound(self, j: int) -> float:
        """lambda_max((A_j^c)^T A_j^c)"""
        with self._lock:
            if j in self._spectral_cache:
                return self._spectral_cache[j]
        if not self._column_rows[j]:
            value = 0.0
        else:
            scalar = self.column_gram_scalar(j)
            if scalar is not None:
                value = scalar
            else:
                def dense_gram():
                    gram = self.column_gram(j)
                    return gram.toarray() if sp.issparse(gram) else gram
                value = _top_eigenvalue(lambda v: self.column_gram_apply(j, v),
                                        self.partition.col_sizes[j], dense_gram)
        with self._lock:
            self._spectral_cache[j] = value
        return value

    def block_spectral_bound(self, i: int, j: int) -> float:
        """lambda_max(A_ij^T A_ij), zero for an absent block"""
        with self._lock:
            if (i, j) in self._block_spectral_cache:
                return self._block_spectral_cache[(i, j)]
        block = self.blocks.get((i, j))
        scalar = None if block is None else _gram_scalar(block.T @ block)
        if block is None:
            value = 0.0
        elif scalar is not None:
            value = scalar
        else:
            def dense_gram():
                dense = block.toarray() if sp.issparse(block) else block
                return dense.T @ dense
            value = _top_eigenvalue(lambda v: _as_vector(block.T @ _as_vector(block @ v)),
                                    block.shape[1], dense_gram)
        with self._lock:
            self._block_spectral_cache[(i, j)] = value
        return value

    def to_dense(self) -> np.ndarray:
        p = self.partition
        if p.m * p.n > MATERIALIZE_MAX_DIM ** 2:
            raise DimensionError(f"refusing to materialize a {p.m}x{p.n} matrix")
        rows = np.concatenate(([0], np.cumsum(p.row_sizes)))
        cols = np.concatenate(([0], np.cumsum(p.col_sizes)))
        dense = np.zeros((p.m, p.n))
        for (i, j), block in self.blocks.items():
            dense[rows[i]:rows[i + 1], cols[j]:cols[j + 1]] = block.toarray() if sp.issparse(block) else block
        return dense


class ZVector:
    """z_ij = A_ij x_j, stored for the nonzero blocks only"""

    def __init__(self, entries: Dict[BlockIndex, np.ndarray]):
        self.entries = {k: _as_vector(v) for k, v in entries.items()}

    def __sub__(self, other: "ZVector") -> "ZVector":
        if set(self.entries) != set(other.entries):
            raise DimensionError("z-vectors have different sparsity patterns")
        return ZVector({k: self.entries[k] - other.entries[k] for k in self.entries})

    def row(self, i: int, columns: Iterable[int]) -> List[np.ndarray]:
        return [self.entries[(i, j)] for j in columns if (i, j) in self.entries]

    def to_dense(self, partition: BlockPartition) -> np.ndarray:
        """Stack as [z_1^r; ...; z_I^r] with z_i^r = [z_i1; ...; z_iJ], zeros for absent blocks"""
        parts = []
        for i, m_i in enumerate(partition.row_sizes):
            for j in range(partition.J):
                parts.append(self.entries.get((i, j), np.zeros(m_i)))
        return np.concatenate(parts)


@dataclass(frozen=True)
class BlockQuadraticForm:
    """
    sum_i [ sum_{j in active_i} ||z_ij||^2 - w_i ||sum_{j in active_i} z_ij||^2 ]

    Used for Q (active = N(i), w_i = 1/d_i) and P_t (active = N(i) & selected, w_i = 1/K~_i).
    """
    partition: BlockPartition
    active: Tuple[Tuple[int, ...], ...]
    weights: Tuple[float, ...]
    label: str = "Q"

    def evaluate(self, z: ZVector) -> float:
        total = 0.0
        for i, columns in enumerate(self.active):
            if not columns:
                continue
            pieces = z.row(i, columns)
            total += sum(float(p @ p) for p in pieces)
            s = np.sum(pieces, axis=0)
            total -= self.weights[i] * float(s @ s)
        return total

    __call__ = evaluate

    def dense_matrix(self) -> np.ndarray:
        """Materialized form over the layout of ZVector.to_dense; verification only"""
        p = self.partition
        size = p.J * p.m
        if size > MATERIALIZE_MAX_DIM:
            raise DimensionError(f"refusing to materialize a {size}x{size} quadratic form")
        blocks = []
        for i, m_i in enumerate(p.row_sizes):
            s = np.zeros(p.J)
            s[list(self.active[i])] = 1.0
            q_i = np.diag(s) - self.weights[i] * np.outer(s, s)
            blocks.append(np.kron(q_i, np.eye(m_i)))
        return scipy.linalg.block_diag(*blocks)


def row_block_apply(A: BlockMatrix, x: BlockVector, i: int) -> np.ndarray:
    return A.row_block_apply(x, i)


def column_spectral_bound(A: BlockMatrix, j: int) -> float:
    return A.column_spectral_bound(j)


def build_Q(A: BlockMatrix) -> BlockQuadraticForm:
    degrees = A.degrees
    weights = tuple(1.0 / d if d > 0 else 0.0 for d in degrees)
    return BlockQuadraticForm(A.partition, tuple(A.neighbors(i) for i in range(A.I)), weights, "Q")


def build_Pt(A: BlockMatrix, selected: Iterable[int], K: int) -> BlockQuadraticForm:
    chosen = set(int(j) for j in selected)
    if len(chosen) > K:
        raise DimensionError(f"{len(chosen)} selected blocks exceed K={K}")
    active = tuple(tuple(j for j in A.neighbors(i) if j in chosen) for i in range(A.I))
    weights = tuple(1.0 / min(K, d) if d > 0 else 0.0 for d in A.degrees)
    return BlockQuadraticForm(A.partition, active, weights, "P_t")
