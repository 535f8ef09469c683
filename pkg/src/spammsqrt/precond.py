"""Regularized inverse-factor slices and their product representation.

A slice is a coarse inverse square root of a level-shifted matrix,
``z ~ (s + mu I)^(-1/2)``, built by the dual iteration at a loose SpAMM
threshold.  Slices compose by congruence: with ``Z = z_0 z_1 ... z_m`` each
new slice is built from the residual ``Z^T (s + mu_next I) Z``, so that
``Z^T s Z`` gains roughly a decade in conditioning per slice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import qtree
from . import sqrt_iter as si
from .qtree import HierMatrix, ShapeMismatchError
from .spamm import multiply

RILEY_COEFFS = (1.0, 0.5, 0.375)


@dataclass(frozen=True)
class ShiftedMatrix:
    base: HierMatrix
    mu: float
    realized: HierMatrix


@dataclass
class Slice:
    z_factor: HierMatrix
    tau0: float
    mu: float
    iterations: int = 0
    converged: bool = True
    final_t: float = 0.0
    # per-step (t, vol_y, vol_z, vol_x)
    provenance: list = field(default_factory=list)


@dataclass
class ProductRepresentation:
    """Slices coarsest first; ``taus[i]`` is the precision slice ``i`` is applied at."""

    slices: list[Slice] = field(default_factory=list)
    taus: list[float] = field(default_factory=list)
    target: str = ""

    def __len__(self) -> int:
        return len(self.slices)

    @property
    def mus(self) -> list[float]:
        return [sl.mu for sl in self.slices]


def tikhonov_shift(s: HierMatrix, mu: float) -> ShiftedMatrix:
    if mu < 0:
        raise ValueError("shift must be nonnegative")
    return ShiftedMatrix(s, mu, qtree.scale_shift(s, 1.0, mu))


def shifted_condition(s_min: float, s_max: float, mu: float) -> float:
    """``sqrt(s_max^2 + mu^2) / sqrt(s_min^2 + mu^2)``, the regularized condition
    estimate quoted for Tikhonov shifts (not the exact value for ``s + mu I``;
    see :func:`exact_shifted_condition`)."""
    if not s_max >= s_min >= 0:
        raise ValueError("need s_max >= s_min >= 0")
    den = math.hypot(s_min, mu)
    if den == 0:
        raise ZeroDivisionError("singular spectrum with zero shift")
    return math.hypot(s_max, mu) / den


def exact_shifted_condition(s_min: float, s_max: float, mu: float) -> float:
    if not s_max >= s_min >= 0:
        raise ValueError("need s_max >= s_min >= 0")
    if s_min + mu == 0:
        raise ZeroDivisionError("singular spectrum with zero shift")
    return (s_max + mu) / (s_min + mu)


def _slice_config(cfg: Optional[si.IterationConfig], tau0: float,
                  tau_s: Optional[float]) -> si.IterationConfig:
    cfg = cfg or si.IterationConfig()
    if cfg.mode != si.DUAL:
        raise ValueError("slices are built with the dual instance only")
    tau_s = 0.01 * tau0 if tau_s is None else tau_s
    return replace(cfg, tau=tau0, tau_s=tau_s)


def build_slice(s: HierMatrix, mu: float, tau0: float, tau_s: Optional[float] = None,
                cfg: Optional[si.IterationConfig] = None) -> Slice:
    """Coarse ``(s + mu I)^(-1/2)`` from the dual iteration at ``tau0``."""
    cfg = _slice_config(cfg, tau0, tau_s)
    res = si.run(tikhonov_shift(s, mu).realized, cfg)
    if res.z.norm == 0:
        # every diagonal pair fell under the relative cull
        raise ValueError(f"slice culled to zero at tau0={tau0}; use fewer, larger blocks")
    prov = [(h.t, h.volume_fraction("y"), h.volume_fraction("z"), h.volume_fraction("x"))
            for h in res.history]
    return Slice(res.z, tau0, mu, res.iterations, res.converged, res.final_t, prov)


def _congruence(w: HierMatrix, rep: ProductRepresentation, tau: float) -> HierMatrix:
    # Z^T w Z with Z = z_0 z_1 ... z_m, innermost slice first
    for sl in rep.slices:
        z = sl.z_factor
        w = multiply(qtree.transpose(z), multiply(w, z, tau)[0], tau)[0]
    return w


def residual(s: HierMatrix, rep: ProductRepresentation, mu_next: float,
             tau_next: float) -> HierMatrix:
    """``Z^T (s + mu_next I) Z`` at SpAMM precision ``tau_next``."""
    if not len(rep):
        raise ValueError("empty representation")
    _check(s, rep)
    return _congruence(tikhonov_shift(s, mu_next).realized, rep, tau_next)


def _check(m: HierMatrix, rep: ProductRepresentation) -> None:
    for sl in rep.slices:
        z = sl.z_factor
        if z.logical_dim != m.logical_dim or z.block_size != m.block_size:
            raise ShapeMismatchError("slice and matrix differ in shape or block size")


def start(s: HierMatrix, mu0: float = 0.1, tau0: float = 0.1,
          tau_s: Optional[float] = None, cfg: Optional[si.IterationConfig] = None,
          target: str = "") -> ProductRepresentation:
    """Representation holding the first (most regularized) slice."""
    sl = build_slice(s, mu0, tau0, tau_s, cfg)
    return ProductRepresentation([sl], [tau0], target)


def extend(rep: ProductRepresentation, s: HierMatrix, mu_next: float, tau0: float,
           tau_next: float, cfg: Optional[si.IterationConfig] = None,
           tau_s: Optional[float] = None) -> ProductRepresentation:
    """Append a slice built from the residual at shift ``mu_next``."""
    if len(rep) and not mu_next < rep.slices[-1].mu:
        raise ValueError(f"shift ladder must decrease: {mu_next} after {rep.slices[-1].mu}")
    if not len(rep):
        return start(s, mu_next, tau0, tau_s, cfg, rep.target)
    r = residual(s, rep, mu_next, tau_next)
    # the shift is already folded into the residual
    sl = build_slice(r, 0.0, tau0, tau_s, cfg)
    sl.mu = mu_next
    return ProductRepresentation(rep.slices + [sl], rep.taus + [tau_next], rep.target)


def ladder(s: HierMatrix, mus, tau0: float = 0.1, tau_apply=None,
           tau_s: Optional[float] = None,
           cfg: Optional[si.IterationConfig] = None) -> ProductRepresentation:
    """Build slices for a decreasing shift ladder.

    ``tau_apply`` defaults to one decade below ``tau0`` for every residual.
    """
    mus = list(mus)
    if tau_apply is None:
        tau_apply = 0.1 * tau0
    taus = list(tau_apply) if np.ndim(tau_apply) else [tau_apply] * len(mus)
    rep = start(s, mus[0], tau0, tau_s, cfg)
    for mu, tn in zip(mus[1:], taus[1:]):
        rep = extend(rep, s, mu, tau0, tn, cfg, tau_s)
    return rep


def apply(rep: ProductRepresentation, m: HierMatrix, tau_apply: float) -> HierMatrix:
    """``slice_m (x) ... (x) slice_0 (x) m``."""
    _check(m, rep)
    for sl in rep.slices:
        m = multiply(sl.z_factor, m, tau_apply)[0]
    return m


def compose(rep: ProductRepresentation) -> np.ndarray:
    """Dense ``Z = z_0 z_1 ... z_m`` (exact products)."""
    z = None
    for sl in rep.slices:
        zi = qtree.to_dense(sl.z_factor)
        z = zi if z is None else z @ zi
    return z


def riley_correction(sl: Slice, mu: float, order: int, tau: float = 0.0) -> HierMatrix:
    """Truncated series ``z (I + mu/2 z^2 + 3 mu^2/8 z^4)`` for ``s^(-1/2)``."""
    if order not in (0, 1, 2):
        raise ValueError("Riley correction supports order 0, 1 or 2")
    z = sl.z_factor
    if order == 0 or mu == 0:
        return z
    inv = multiply(z, z, tau)[0]
    series = qtree.scale_shift(inv, RILEY_COEFFS[1] * mu, 1.0)
    if order == 2:
        inv2 = multiply(inv, inv, tau)[0]
        series = qtree.add(series, inv2, RILEY_COEFFS[2] * mu * mu)
    return multiply(z, series, tau)[0]


def congruence_check(rep: ProductRepresentation, s: HierMatrix, tau: float = 0.0) -> float:
    """``||Z^T s Z - I||_F / sqrt(n)``."""
    n = s.logical_dim
    w = _congruence(s, rep, tau) if len(rep) else s
    return qtree.add(w, qtree.identity(n, s.block_size), -1.0).norm / math.sqrt(n)
