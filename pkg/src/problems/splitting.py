"""
Overlapping Splitting
Copies x_j = U_j' w of overlapping sub-vectors tied to one global variable
"""

from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from block_linalg import BlockMatrix, BlockPartition, BlockVector
from exceptions import ValidationError
from pdmm_solver import Problem
from prox_library import BlockFunction


def selector(indices: Sequence[int], n: int) -> sp.csr_matrix:
    """U_j' : R^n -> R^{|indices|}, picking the given coordinates"""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        raise ValidationError("empty index set")
    if indices.min() < 0 or indices.max() >= n:
        raise ValidationError(f"indices {indices.min()}..{indices.max()} outside [0, {n})")
    if np.unique(indices).size != indices.size:
        raise ValidationError("repeated index in a group")
    data = np.ones(indices.size)
    return sp.csr_matrix((data, (np.arange(indices.size), indices)), shape=(indices.size, n))


def build_overlap_splitting(local_functions: List[BlockFunction], index_sets: Sequence[Sequence[int]],
                            global_function: BlockFunction, name: str = "overlap-splitting",
                            metadata: Optional[dict] = None) -> Problem:
    """
    min sum_j g_j(x_j) + f(w)  s.t.  x_j - U_j' w = 0,  j = 1..L

    Column blocks 0..L-1 hold the copies, column block L holds w; every row block
    has exactly two nonzero blocks. Consensus is the case where every index set
    is the full range.
    """
    if len(local_functions) != len(index_sets):
        raise ValidationError(f"{len(local_functions)} local functions for {len(index_sets)} index sets")
    n = global_function.size
    L = len(index_sets)
    sizes = [len(s) for s in index_sets]
    partition = BlockPartition(tuple(sizes), tuple(sizes) + (n,))
    blocks = {}
    for i, indices in enumerate(index_sets):
        if local_functions[i].size != sizes[i]:
            raise ValidationError(f"local function {i} has size {local_functions[i].size}, group has {sizes[i]}")
        blocks[(i, i)] = sp.identity(sizes[i], format="csr")
        blocks[(i, L)] = -selector(indices, n)
    A = BlockMatrix(partition, blocks)
    a = BlockVector.zeros(partition.row_sizes)
    return Problem(A, a, list(local_functions) + [global_function], name=name, metadata=dict(metadata or {}))


def lift(index_sets: Sequence[Sequence[int]], w: np.ndarray) -> BlockVector:
    """Feasible point (U_1'w, ..., U_L'w, w)"""
    w = np.asarray(w, dtype=float)
    return BlockVector.from_blocks([w[np.asarray(s, dtype=int)] for s in index_sets] + [w])
