"""Quadtree matrices with per-node Frobenius norms.

The tree is stored as a linear (level-pyramid) quadtree: leaf blocks live in a
``(nb, nb, N_b, N_b)`` array and node norms in one ``(2**l, 2**l)`` array per
level ``l``, root at level 0.  A node whose norm is exactly zero is a zero
marker; every consumer treats it as absent.  ``QuadNode`` gives the usual
recursive view over this storage.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEFAULT_BLOCK_SIZE = 16
MAX_BLOCK_SIZE = 64


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class QuadNode:
    """Read-only view of one node of a :class:`HierMatrix`."""

    owner: "HierMatrix"
    level: int
    row: int
    col: int

    @property
    def norm(self) -> float:
        return float(self.owner.norms[self.level][self.row, self.col])

    @property
    def is_zero(self) -> bool:
        return self.norm == 0.0

    @property
    def is_leaf(self) -> bool:
        return self.level == self.owner.depth

    @property
    def span(self) -> int:
        """Number of rows (and columns) covered by this node."""
        return self.owner.padded_dim >> self.level

    @property
    def children(self) -> Optional[tuple["QuadNode", ...]]:
        """Children in ``[00, 01, 10, 11]`` order, or None at a leaf."""
        if self.is_leaf:
            return None
        l, r, c = self.level + 1, 2 * self.row, 2 * self.col
        return (
            QuadNode(self.owner, l, r, c),
            QuadNode(self.owner, l, r, c + 1),
            QuadNode(self.owner, l, r + 1, c),
            QuadNode(self.owner, l, r + 1, c + 1),
        )

    @property
    def block(self) -> np.ndarray:
        if not self.is_leaf:
            raise AttributeError("interior nodes carry no dense block")
        return self.owner.blocks[self.row, self.col]

    def to_dense(self) -> np.ndarray:
        s = self.span
        full = self.owner.padded()
        return full[self.row * s:(self.row + 1) * s, self.col * s:(self.col + 1) * s]


def _depth_for(n: int, block_size: int) -> int:
    d = 0
    while block_size << d < n:
        d += 1
    return d


def _norm_pyramid(blocks: np.ndarray) -> list[np.ndarray]:
    sq = np.einsum("ijab,ijab->ij", blocks, blocks)
    levels = [sq]
    while levels[-1].shape[0] > 1:
        q = levels[-1]
        levels.append(q[0::2, 0::2] + q[0::2, 1::2] + q[1::2, 0::2] + q[1::2, 1::2])
    norms = [np.sqrt(q) for q in reversed(levels)]
    for a in norms:
        a.flags.writeable = False
    return norms


class HierMatrix:
    """Square matrix held as a quadtree of ``N_b x N_b`` leaf blocks.

    Instances are immutable; every operation returns a new matrix with norms
    recomputed bottom-up.

    Parameters
    ----------
    blocks : ndarray of shape (nb, nb, N_b, N_b)
        Leaf blocks; ``nb`` must be a power of two.
    logical_dim : int
        Dimension before padding.  Entries past it must already be zero.
    """

    def __init__(self, blocks: np.ndarray, logical_dim: int, copy: bool = True):
        blocks = np.array(blocks, dtype=np.float64, order="C", copy=copy or None)
        nb, nb2, bs, bs2 = blocks.shape
        if nb != nb2 or bs != bs2 or nb & (nb - 1):
            raise ShapeMismatchError(f"bad block array shape {blocks.shape}")
        blocks.flags.writeable = False
        self.blocks = blocks
        self.block_size = bs
        self.depth = nb.bit_length() - 1
        self.padded_dim = bs * nb
        if not 0 < logical_dim <= self.padded_dim:
            raise ShapeMismatchError("logical_dim outside the padded window")
        self.logical_dim = int(logical_dim)
        self.norms = _norm_pyramid(blocks)

    # -- decorations ---------------------------------------------------

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def norm(self) -> float:
        return float(self.norms[0][0, 0])

    @property
    def root(self) -> QuadNode:
        return QuadNode(self, 0, 0, 0)

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.blocks))

    @property
    def allocation_count(self) -> int:
        """Leaf blocks that are not zero markers."""
        return int(np.count_nonzero(self.norms[-1]))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.logical_dim, self.logical_dim)

    def padded(self) -> np.ndarray:
        N = self.padded_dim
        return self.blocks.transpose(0, 2, 1, 3).reshape(N, N)

    def __repr__(self) -> str:
        return (f"HierMatrix(n={self.logical_dim}, N={self.padded_dim}, "
                f"N_b={self.block_size}, depth={self.depth}, norm={self.norm:.6g})")

    def _like(self, blocks: np.ndarray) -> "HierMatrix":
        return HierMatrix(blocks, self.logical_dim, copy=False)


def _blocks_from_padded(full: np.ndarray, block_size: int) -> np.ndarray:
    nb = full.shape[0] // block_size
    return full.reshape(nb, block_size, nb, block_size).transpose(0, 2, 1, 3).copy()


def build(dense, block_size: int = DEFAULT_BLOCK_SIZE) -> HierMatrix:
    """Build a quadtree matrix from a dense square array.

    The dimension is padded with zeros up to ``block_size * 2**depth``.
    """
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {dense.shape}")
    if int(block_size) != block_size or block_size < 1:
        raise ValueError("block_size must be a positive integer")
    if block_size > MAX_BLOCK_SIZE:
        raise ValueError(f"block_size above {MAX_BLOCK_SIZE} is not supported")
    if not np.all(np.isfinite(dense)):
        raise ValueError("matrix has non-finite entries")
    n = dense.shape[0]
    if n == 0:
        raise ShapeMismatchError("empty matrix")
    N = block_size << _depth_for(n, block_size)
    full = np.zeros((N, N))
    full[:n, :n] = dense
    return HierMatrix(_blocks_from_padded(full, block_size), n, copy=False)


def zeros(n: int, block_size: int = DEFAULT_BLOCK_SIZE) -> HierMatrix:
    N = block_size << _depth_for(n, block_size)
    nb = N // block_size
    return HierMatrix(np.zeros((nb, nb, block_size, block_size)), n, copy=False)


def identity(n: int, block_size: int = DEFAULT_BLOCK_SIZE) -> HierMatrix:
    return scale_shift(zeros(n, block_size), 0.0, 1.0)


def to_dense(m: HierMatrix) -> np.ndarray:
    n = m.logical_dim
    return m.padded()[:n, :n].copy()


def _check_compatible(a: HierMatrix, b: HierMatrix) -> None:
    if a.logical_dim != b.logical_dim or a.block_size != b.block_size:
        raise ShapeMismatchError(
            f"incompatible operands: n={a.logical_dim}/{b.logical_dim}, "
            f"N_b={a.block_size}/{b.block_size}")


def add(a: HierMatrix, b: HierMatrix, beta: float = 1.0) -> HierMatrix:
    """Return ``a + beta * b``."""
    _check_compatible(a, b)
    return a._like(a.blocks + beta * b.blocks)


def _diag_mask(m: HierMatrix) -> np.ndarray:
    # (nb, N_b) mask of diagonal positions inside the logical window
    idx = np.arange(m.padded_dim).reshape(m.n_blocks, m.block_size)
    return idx < m.logical_dim


def scale_shift(m: HierMatrix, a: float, b: float) -> HierMatrix:
    """Return ``a * m + b * I``; the shift touches the logical diagonal only."""
    blocks = a * m.blocks
    if b != 0.0:
        d = np.arange(m.n_blocks)
        k = np.arange(m.block_size)
        mask = _diag_mask(m)
        diag = blocks[d[:, None], d[:, None], k[None, :], k[None, :]]
        blocks[d[:, None], d[:, None], k[None, :], k[None, :]] = diag + b * mask
    return m._like(blocks)


def trace(m: HierMatrix) -> float:
    d = np.arange(m.n_blocks)
    diag = np.einsum("ikk->ik", m.blocks[d, d])
    return float(diag[_diag_mask(m)].sum())


def transpose(m: HierMatrix) -> HierMatrix:
    return m._like(m.blocks.transpose(1, 0, 3, 2))


def sparsify(m: HierMatrix, tau_drop: float) -> HierMatrix:
    """Drop every entry with ``|m_ij| < tau_drop``."""
    if tau_drop < 0:
        raise ValueError("drop tolerance must be nonnegative")
    blocks = np.where(np.abs(m.blocks) < tau_drop, 0.0, m.blocks)
    return m._like(blocks)


def frobenius(m: HierMatrix) -> float:
    return m.norm


def matvec(m: HierMatrix, v: np.ndarray) -> np.ndarray:
    """Dense matrix-vector product over the logical window."""
    n, N = m.logical_dim, m.padded_dim
    w = np.zeros(N)
    w[:n] = v
    out = np.einsum("ijab,jb->ia", m.blocks, w.reshape(m.n_blocks, m.block_size))
    return out.reshape(N)[:n]


def walk(m: HierMatrix):
    """Yield every node, parents before children."""
    stack = [m.root]
    while stack:
        node = stack.pop()
        yield node
        if not node.is_leaf:
            stack.extend(reversed(node.children))
