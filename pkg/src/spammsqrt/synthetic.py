"""Synthetic decay matrices on lattices, with optional Morton ordering."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

NATURAL = "natural"
MORTON = "morton"
_MORTON_BITS = 21
_DENSE_CAP = 2048


@dataclass
class SyntheticSpec:
    n: int
    lattice_dim: int = 1
    decay_rate: float = 1.0
    diagonal_shift: float = 0.0
    ordering: str = NATURAL
    # spectrum remapped log-linearly onto [1/target_condition, 1]
    target_condition: Optional[float] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.lattice_dim not in (1, 2, 3):
            raise ValueError("lattice_dim must be 1, 2 or 3")
        if not self.decay_rate > 0:
            raise ValueError("decay_rate must be positive")
        if self.ordering not in (NATURAL, MORTON):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        if self.target_condition is not None and not self.target_condition >= 1:
            raise ValueError("target_condition must be >= 1")


def lattice_points(n: int, dim: int) -> np.ndarray:
    """Integer points of a ``side**dim`` lattice, first axis fastest."""
    side = round(n ** (1.0 / dim))
    if side ** dim != n:
        raise ValueError(f"n={n} is not a perfect {('', 'line', 'square', 'cube')[dim]} "
                         f"for a {dim}-d lattice")
    axes = np.meshgrid(*[np.arange(side)] * dim, indexing="ij")
    return np.stack([a.ravel(order="F") for a in axes], axis=1)


def morton_code(coords) -> np.ndarray:
    """Interleave coordinate bits, axis 0 in the lowest position."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    if (coords < 0).any():
        raise ValueError("coordinates must be nonnegative")
    if (coords >= 1 << _MORTON_BITS).any():
        raise OverflowError(f"coordinates exceed {_MORTON_BITS} bits per axis")
    dim = coords.shape[1]
    code = np.zeros(len(coords), dtype=np.int64)
    for bit in range(_MORTON_BITS):
        for ax in range(dim):
            code |= ((coords[:, ax] >> bit) & 1) << (bit * dim + ax)
    return code


def morton_order(coords) -> np.ndarray:
    """Permutation sorting points along the Z curve; ties keep input order."""
    return np.argsort(morton_code(coords), kind="stable")


def gen_decay(spec: SyntheticSpec) -> np.ndarray:
    """``m_ij = exp(-decay_rate * |r_i - r_j|) + diagonal_shift * delta_ij``."""
    pts = lattice_points(spec.n, spec.lattice_dim)
    if spec.ordering == MORTON:
        pts = pts[morton_order(pts)]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff.astype(np.float64) ** 2).sum(-1))
    with np.errstate(invalid="ignore"):
        m = np.exp(-spec.decay_rate * dist) if np.isfinite(spec.decay_rate) \
            else (dist == 0).astype(np.float64)
    m[np.diag_indices_from(m)] += spec.diagonal_shift
    if spec.target_condition is not None:
        m = impose_condition(m, spec.target_condition)
    return m


def impose_condition(m: np.ndarray, kappa: float) -> np.ndarray:
    """Keep the eigenvectors of symmetric ``m``; respace its spectrum
    log-linearly (order preserving) over ``[1/kappa, 1]``."""
    if m.shape[0] > _DENSE_CAP:
        raise ValueError(f"spectrum surgery limited to n <= {_DENSE_CAP}")
    lam, v = np.linalg.eigh(m)
    lam = np.maximum(lam, lam[-1] * 1e-300)
    lo, hi = np.log(lam[0]), np.log(lam[-1])
    frac = (np.log(lam) - lo) / (hi - lo) if hi > lo else np.linspace(0, 1, len(lam))
    new = np.exp(np.log(1.0 / kappa) * (1.0 - frac))
    out = (v * new) @ v.T
    return 0.5 * (out + out.T)
