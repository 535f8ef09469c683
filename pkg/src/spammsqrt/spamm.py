"""SpAMM: approximate multiply with a relative occlusion cull.

The product tensor ``a_ik * b_kj`` is scoped as an octree over ``(i, j, k)``.
A node pair (block ``a^(i,k)``, block ``b^(k,j)``) is culled when
``||a^(i,k)|| * ||b^(k,j)|| < tau * ||a|| * ||b||``, with the root norms taken
once per call.  Surviving pairs recurse into the canonical 2x2 block product

    c00 = a00 b00 + a01 b10        c01 = a00 b01 + a01 b11
    c10 = a10 b00 + a11 b10        c11 = a10 b01 + a11 b11

down to dense ``N_b x N_b`` leaf products.  (A commonly reproduced display of
this recursion repeats the top-right quadrant in the bottom row; the block
product above is the one the error bound is proved for.)

The traversal here is breadth first: each level keeps the surviving
``(i, j, k)`` triples as index arrays, applies the cull test to all of them at
once and expands the rest into their eight children.  The set of performed
leaf products is identical to the depth-first recursion since every cull
decision depends only on the two node norms.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .qtree import HierMatrix, ShapeMismatchError

# leaf products are formed in chunks of this many triples to bound memory
_CHUNK = 1 << 15

PERFORMED = "performed"
CULLED = "culled"


@dataclass
class MultiplyStats:
    """Work accounting for one SpAMM call."""

    depth: int
    block_size: int
    leaf_products_performed: int = 0
    culled_subtree_count: list[int] = field(default_factory=list)

    @property
    def leaf_products_possible(self) -> int:
        return 8 ** self.depth

    @property
    def volume_fraction(self) -> float:
        return self.leaf_products_performed / self.leaf_products_possible

    @property
    def culled_volume(self) -> int:
        """Element-space volume covered by culled boxes."""
        N = self.block_size << self.depth
        return sum(c * (N >> l) ** 3 for l, c in enumerate(self.culled_subtree_count))

    @property
    def performed_volume(self) -> int:
        return self.leaf_products_performed * self.block_size ** 3


class VolumeLog:
    """Boxes of the ``(i, j, k)`` product tensor, in element units.

    Each box is ``(i_lo, j_lo, k_lo, side, status)``: one box per cull at the
    depth where it happened and one per performed leaf product.
    """

    def __init__(self):
        self._chunks: list[tuple[np.ndarray, bool]] = []

    def record(self, ijk: np.ndarray, side: int, performed: bool) -> None:
        if len(ijk):
            arr = np.empty((len(ijk), 4), dtype=np.int64)
            arr[:, :3] = ijk
            arr[:, 3] = side
            self._chunks.append((arr, performed))

    def __len__(self) -> int:
        return sum(len(a) for a, _ in self._chunks)

    def __iter__(self) -> Iterator[tuple[int, int, int, int, str]]:
        for arr, performed in self._chunks:
            status = PERFORMED if performed else CULLED
            for i, j, k, s in arr.tolist():
                yield (i, j, k, s, status)

    def boxes(self, status: Optional[str] = None) -> np.ndarray:
        """Return an ``(m, 4)`` int array of boxes, optionally filtered."""
        want = None if status is None else status == PERFORMED
        parts = [a for a, p in self._chunks if want is None or p == want]
        if not parts:
            return np.empty((0, 4), dtype=np.int64)
        return np.concatenate(parts)

    def total_volume(self) -> int:
        return int(sum((a[:, 3] ** 3).sum() for a, _ in self._chunks))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i_lo", "j_lo", "k_lo", "side", "status"])
            for row in self:
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "VolumeLog":
        log = cls()
        perf, cull = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                box = [int(row["i_lo"]), int(row["j_lo"]), int(row["k_lo"]), int(row["side"])]
                if row["status"] == PERFORMED:
                    perf.append(box)
                elif row["status"] == CULLED:
                    cull.append(box)
                else:
                    raise ValueError(f"unknown box status {row['status']!r}")
        for boxes, performed in ((perf, True), (cull, False)):
            if boxes:
                log._chunks.append((np.asarray(boxes, dtype=np.int64), performed))
        return log


@dataclass(frozen=True)
class SpammTau:
    """The cull threshold of one call, fixed at entry."""

    tau: float
    global_norm_a: float
    global_norm_b: float

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")

    @property
    def threshold(self) -> float:
        return self.tau * self.global_norm_a * self.global_norm_b


def occlusion_test(norm_a_node, norm_b_node, tau, norm_a_root, norm_b_root):
    """True when the node pair is culled (strict inequality)."""
    return norm_a_node * norm_b_node < tau * norm_a_root * norm_b_root


def error_bound(n: int, tau: float, norm_a: float, norm_b: float) -> float:
    """Normwise bound ``n**2 * tau * ||a|| * ||b||`` on the occlusion error."""
    return n * n * tau * norm_a * norm_b


def elementwise_bound(n: int, tau: float, norm_a: float, norm_b: float) -> float:
    return n * tau * norm_a * norm_b


_OCT = np.array([(di, dj, dk) for di in (0, 1) for dj in (0, 1) for dk in (0, 1)])


def multiply(a: HierMatrix, b: HierMatrix, tau: float = 0.0,
             log: Optional[VolumeLog] = None) -> tuple[HierMatrix, MultiplyStats]:
    """Return ``a (x)_tau b`` and the work statistics of the call."""
    if a.padded_dim != b.padded_dim or a.block_size != b.block_size \
            or a.logical_dim != b.logical_dim:
        raise ShapeMismatchError("operands differ in dimension or block size")
    scope = SpammTau(float(tau), a.norm, b.norm)
    thresh = scope.threshold
    depth, N = a.depth, a.padded_dim
    stats = MultiplyStats(depth=depth, block_size=a.block_size)

    ijk = np.zeros((1, 3), dtype=np.int64)
    for level in range(depth + 1):
        na = a.norms[level][ijk[:, 0], ijk[:, 2]]
        nb = b.norms[level][ijk[:, 2], ijk[:, 1]]
        prod = na * nb
        # zero markers never contribute, even at tau = 0
        keep = (prod >= thresh) & (na > 0) & (nb > 0)
        culled = ijk[~keep]
        stats.culled_subtree_count.append(len(culled))
        side = N >> level
        if log is not None:
            log.record(culled * side, side, performed=False)
        ijk = ijk[keep]
        if level < depth:
            ijk = (2 * ijk[:, None, :] + _OCT[None, :, :]).reshape(-1, 3)

    stats.leaf_products_performed = len(ijk)
    if log is not None:
        log.record(ijk * a.block_size, a.block_size, performed=True)
    out = _leaf_products(a.blocks, b.blocks, ijk)
    return HierMatrix(out, a.logical_dim, copy=False), stats


def _leaf_products(A: np.ndarray, B: np.ndarray, ijk: np.ndarray) -> np.ndarray:
    nb = A.shape[0]
    C = np.zeros_like(A)
    if not len(ijk):
        return C
    # group by output block, k ascending inside each group
    order = np.lexsort((ijk[:, 2], ijk[:, 1], ijk[:, 0]))
    ijk = ijk[order]
    for lo in range(0, len(ijk), _CHUNK):
        part = ijk[lo:lo + _CHUNK]
        P = np.matmul(A[part[:, 0], part[:, 2]], B[part[:, 2], part[:, 1]])
        key = part[:, 0] * nb + part[:, 1]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        sums = np.add.reduceat(P, starts, axis=0)
        C[part[starts, 0], part[starts, 1]] += sums
    return C


def multiply_exact(a: HierMatrix, b: HierMatrix) -> HierMatrix:
    """Recursive GEMM: SpAMM with nothing culled except zero markers."""
    return multiply(a, b, 0.0)[0]
