"""Dense symmetric linear algebra: eigenvalues, Kronecker and block Hadamard products"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .config import MAX_EIGEN_DIM, MAX_KRON_DIM
from .errors import CapacityError, InvalidInputError


def _as_finite_matrix(entries, what: str) -> np.ndarray:
    arr = np.array(entries, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise InvalidInputError(f"{what} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{what} has non-finite entries")
    return arr


@dataclass(frozen=True)
class SymMatrix:
    """Dense real symmetric matrix, symmetrized once on construction.

    The stored array is (M + Mᵀ)/2 of the input and is read-only, so
    downstream code may rely on exact symmetry.
    """

    entries: np.ndarray

    def __post_init__(self):
        arr = _as_finite_matrix(self.entries, "SymMatrix")
        arr = 0.5 * (arr + arr.T)
        arr.setflags(write=False)
        object.__setattr__(self, 'entries', arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "SymMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, values) -> "SymMatrix":
        return cls(np.diag(np.asarray(values, dtype=np.float64)))

    def permuted(self, order) -> "SymMatrix":
        """Symmetric permutation Pᵀ M P with P selecting columns in `order`"""
        order = np.asarray(order)
        return SymMatrix(self.entries[np.ix_(order, order)])


@dataclass(frozen=True)
class BlockMatrix:
    """Square matrix viewed as an n_blocks × n_blocks grid of p × p blocks.

    `blocks[a, b]` is the (a, b) block; flattening is a pure reshape.
    """

    blocks: np.ndarray

    def __post_init__(self):
        arr = np.array(self.blocks, dtype=np.float64)
        if arr.ndim != 4 or arr.shape[0] != arr.shape[1] or arr.shape[2] != arr.shape[3]:
            raise InvalidInputError(f"BlockMatrix needs shape (nb, nb, p, p), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("BlockMatrix has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, 'blocks', arr)

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_dim(self) -> int:
        return self.blocks.shape[2]

    @property
    def dim(self) -> int:
        return self.n_blocks * self.block_dim

    @classmethod
    def from_dense(cls, matrix, block_dim: int) -> "BlockMatrix":
        if isinstance(matrix, SymMatrix):
            matrix = matrix.entries
        arr = np.asarray(matrix, dtype=np.float64)
        if block_dim < 1 or arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] % block_dim:
            raise InvalidInputError(f"Cannot split shape {arr.shape} into {block_dim}x{block_dim} blocks")
        nb = arr.shape[0] // block_dim
        return cls(arr.reshape(nb, block_dim, nb, block_dim).transpose(0, 2, 1, 3))

    def flatten(self) -> np.ndarray:
        nb, p = self.n_blocks, self.block_dim
        return self.blocks.transpose(0, 2, 1, 3).reshape(nb * p, nb * p)

    def to_sym(self) -> SymMatrix:
        return SymMatrix(self.flatten())

    def diagonal_block(self, index: int) -> SymMatrix:
        return SymMatrix(self.blocks[index, index])


def eigenvalues(M: SymMatrix) -> np.ndarray:
    """All eigenvalues in ascending order (dense symmetric solver)"""
    if M.dim > MAX_EIGEN_DIM:
        raise CapacityError(f"Dense eigensolve limited to dim {MAX_EIGEN_DIM}, got {M.dim}")
    return linalg.eigvalsh(M.entries)


def lambda_min(M: SymMatrix, rel_tol: float = 1e-10) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Uses a full symmetric eigendecomposition, whose backward error is a
    small multiple of machine precision times ‖M‖, well inside any
    admissible `rel_tol`.
    """
    if not 0.0 < rel_tol <= 1e-4:
        raise InvalidInputError(f"rel_tol must lie in (0, 1e-4], got {rel_tol}")
    return float(eigenvalues(M)[0])


def lambda_max(M: SymMatrix) -> float:
    return float(eigenvalues(M)[-1])


def spectral_norm(M: SymMatrix) -> float:
    values = eigenvalues(M)
    return float(max(abs(values[0]), abs(values[-1])))


def kronecker(A: SymMatrix, B: SymMatrix, max_dim: int = MAX_KRON_DIM) -> SymMatrix:
    """Kronecker product A ⊗ B"""
    dim = A.dim * B.dim
    if dim > max_dim:
        raise CapacityError(f"Kronecker product of dim {dim} exceeds maximum {max_dim}")
    return SymMatrix(np.kron(A.entries, B.entries))


def block_hadamard(A: BlockMatrix, B: BlockMatrix) -> BlockMatrix:
    """Block Hadamard product: output block (a, b) is A_ab @ B_ab"""
    if A.blocks.shape != B.blocks.shape:
        raise InvalidInputError(
            f"Block shapes differ: {A.blocks.shape} vs {B.blocks.shape}"
        )
    return BlockMatrix(np.einsum('abij,abjk->abik', A.blocks, B.blocks))


def gershgorin_lower_bound(M: SymMatrix) -> float:
    """min_i (M_ii - sum_{j != i} |M_ij|), a lower bound on lambda_min"""
    diag = np.diag(M.entries)
    radii = np.sum(np.abs(M.entries), axis=1) - np.abs(diag)
    return float(np.min(diag - radii))


def frobenius_distance(A: SymMatrix, B: SymMatrix) -> float:
    if A.dim != B.dim:
        raise InvalidInputError(f"Dimension mismatch: {A.dim} vs {B.dim}")
    return float(np.linalg.norm(A.entries - B.entries, 'fro'))
