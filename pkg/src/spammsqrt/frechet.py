"""First-order error flow of the square root iteration.

Dense diagnostics: directional (Frechet) derivatives of the ``x`` map with
respect to the previous ``y`` and ``z`` iterates, their limit forms near the
fixed point, a displacement bound for the ``z`` channel, and lockstep
tracking of a SpAMM run against an exact dense reference.

Derivatives are labelled by the channel of the perturbed input.  For the dual
map ``x_k = (h y_{k-1}) (z_{k-1} h)`` with ``h = h_alpha[y_{k-1} z_{k-1}]``
and ``h' = -alpha**1.5 / 2``::

    d x / d z . D = h' y_{k-1} D y_{k-1} z_k + y_k D h + h' y_k z_{k-1} y_{k-1} D
    d x / d y . D = h D z_k + h' D z_{k-1} y_{k-1} z_k + h' y_k z_{k-1} D z_{k-1}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np

from . import qtree
from .qtree import HierMatrix, ShapeMismatchError
from . import sqrt_iter as si

DENSE_CAP = 512


@dataclass(frozen=True)
class Direction:
    unit_matrix: np.ndarray
    channel: str

    def __post_init__(self):
        if self.channel not in ("y", "z"):
            raise ValueError(f"channel must be 'y' or 'z', got {self.channel!r}")
        nrm = np.linalg.norm(self.unit_matrix)
        if abs(nrm - 1.0) > 1e-12:
            raise ValueError(f"direction must have unit Frobenius norm, got {nrm}")

    @classmethod
    def of(cls, m, channel: str) -> "Direction":
        m = np.asarray(m, dtype=np.float64)
        nrm = np.linalg.norm(m)
        if nrm == 0:
            raise ValueError("cannot normalize a zero direction")
        return cls(m / nrm, channel)


def _arr(d):
    return d.unit_matrix if isinstance(d, Direction) else np.asarray(d, dtype=np.float64)


def _check(*ms):
    n = ms[0].shape
    for m in ms:
        if m.shape != n or m.ndim != 2 or n[0] != n[1]:
            raise ShapeMismatchError("operands must be square and of equal size")


def _h(x, alpha):
    n = x.shape[0]
    return 0.5 * math.sqrt(alpha) * (3.0 * np.eye(n) - alpha * x)


def frechet_x_wrt_z(y_prev, z_prev, direction, alpha: float = 1.0) -> np.ndarray:
    D = _arr(direction)
    _check(y_prev, z_prev, D)
    hp = si.map_slope(alpha)
    h = _h(y_prev @ z_prev, alpha)
    y_k, z_k = h @ y_prev, z_prev @ h
    return (hp * (y_prev @ D @ y_prev @ z_k)
            + y_k @ D @ h
            + hp * (y_k @ z_prev @ y_prev @ D))


def frechet_x_wrt_y(y_prev, z_prev, direction, alpha: float = 1.0) -> np.ndarray:
    D = _arr(direction)
    _check(y_prev, z_prev, D)
    hp = si.map_slope(alpha)
    h = _h(y_prev @ z_prev, alpha)
    y_k, z_k = h @ y_prev, z_prev @ h
    return (h @ D @ z_k
            + hp * (D @ z_prev @ y_prev @ z_k)
            + hp * (y_k @ z_prev @ D @ z_prev))


def frechet_x_wrt_z_single(z_prev, s, direction, alpha: float = 1.0) -> np.ndarray:
    """Derivative of ``x_k = z_k^T s z_k``, ``z_k = z_{k-1} h[z_{k-1}^T s z_{k-1}]``."""
    D = _arr(direction)
    _check(z_prev, s, D)
    hp = si.map_slope(alpha)
    h = _h(z_prev.T @ s @ z_prev, alpha)
    z_k = z_prev @ h
    dx_prev = D.T @ s @ z_prev + z_prev.T @ s @ D
    dz = D @ h + hp * (z_prev @ dx_prev)
    return dz.T @ s @ z_k + z_k.T @ s @ dz


def limit_forms(y_k, y_prev, z_k, z_prev, direction: Direction) -> np.ndarray:
    """Fixed-point orbit forms of the dual derivatives."""
    D = direction.unit_matrix
    if direction.channel == "y":
        return D @ (z_k - z_prev)
    return (y_k - y_prev) @ D


def limit_form_single(z_k, z_prev, s, direction) -> np.ndarray:
    D = _arr(direction)
    dz = z_k - z_prev
    return dz.T @ s @ D + D.T @ s @ dz


def displacement_bound(z_prev_norm, h_norm, y_prev_norm, dy_prev, dz_prev,
                       tau, n, alpha: float = 1.0) -> float:
    """Bound on the next ``z`` displacement from SpAMM error and carried errors."""
    hp = abs(si.map_slope(alpha))
    return (z_prev_norm * (tau * n * n * h_norm + hp * dy_prev * z_prev_norm)
            + dz_prev * (h_norm + y_prev_norm))


# -- lockstep tracking --------------------------------------------------------

@dataclass
class ErrorFlowRecord:
    k: int
    alpha: float
    eps: float
    t_approx: float
    t_ref: float
    dy: float
    dz: float
    dx: float
    deriv_y: float
    deriv_z: float
    bound_dz: float
    bifurcated: bool = False


@dataclass
class ReferenceRun:
    """Dense trajectory; entry ``k`` holds ``(y_k, z_k, x_k)``."""

    s: np.ndarray
    y: list = field(default_factory=list)
    z: list = field(default_factory=list)
    x: list = field(default_factory=list)


@dataclass
class ErrorFlow:
    records: list[ErrorFlowRecord]
    reference: ReferenceRun
    diverged: bool
    converged: bool

    @property
    def terminal_dz(self) -> float:
        return self.records[-1].dz if self.records else 0.0


class ReferenceDivergence(RuntimeError):
    pass


def _stab(x, eps):
    if eps == 0:
        return x
    return (1.0 - 2.0 * eps) * x + eps * np.eye(x.shape[0])


def _ref_step(ref: ReferenceRun, mode: str, alpha: float, eps: float) -> None:
    y, z, x = ref.y[-1], ref.z[-1], ref.x[-1]
    h = _h(_stab(x, eps), alpha)
    if mode == si.DUAL:
        y2 = h @ y
        z2 = z @ h
        x2 = y2 @ z2
    else:
        z2 = z @ h
        y2 = ref.s @ z2
        x2 = z2.T @ y2
    ref.y.append(y2)
    ref.z.append(z2)
    ref.x.append(x2)


def _bifurcating(dz: list[float], znorm: float) -> bool:
    # 10x growth across 3 steps up to an order-one relative displacement
    if not math.isfinite(dz[-1]):
        return True
    return len(dz) > 3 and dz[-1] > 10.0 * dz[-4] and dz[-1] > znorm


def track_error_flow(s, cfg: si.IterationConfig, n_steps: int,
                     stop_on_divergence: bool = True) -> ErrorFlow:
    """Run the SpAMM iteration and a dense reference side by side.

    Both runs use the same map parameters (taken from the SpAMM run's trace
    error), so displacements measure SpAMM error and its propagation only.
    Directions are the normalized previous errors.
    """
    if isinstance(s, HierMatrix):
        S = s
    else:
        S = qtree.build(np.asarray(s, dtype=np.float64), cfg.block_size)
    n = S.logical_dim
    if n > DENSE_CAP:
        raise ValueError(f"dense reference limited to n <= {DENSE_CAP}")
    scaled, _ = si.rescale_spectrum(S, cfg.power_iters)
    state = si.initial_state(scaled, cfg)
    sd = qtree.to_dense(scaled)
    ref = ReferenceRun(sd, [sd], [np.eye(n)], [sd])

    records: list[ErrorFlowRecord] = []
    dzs = [0.0]
    diverged = False
    dy_prev = dz_prev = 0.0
    for _ in range(n_steps):
        k = state.k + 1
        alpha, eps = si._map_params(state.t, cfg)
        y_prev, z_prev = ref.y[-1], ref.z[-1]
        ey = qtree.to_dense(state.y) - y_prev
        ez = qtree.to_dense(state.z) - z_prev

        if cfg.mode == si.DUAL:
            dn_y = (np.linalg.norm(frechet_x_wrt_y(y_prev, z_prev, Direction.of(ey, "y"), alpha))
                    if np.any(ey) else 0.0)
            dn_z = (np.linalg.norm(frechet_x_wrt_z(y_prev, z_prev, Direction.of(ez, "z"), alpha))
                    if np.any(ez) else 0.0)
        else:
            dn_y = 0.0
            dn_z = (np.linalg.norm(frechet_x_wrt_z_single(z_prev, sd, Direction.of(ez, "z"), alpha))
                    if np.any(ez) else 0.0)
        h_apx = si.logistic_map(si.stabilize(state.x, eps), alpha)
        bound = displacement_bound(np.linalg.norm(z_prev), h_apx.norm,
                                   np.linalg.norm(y_prev), dy_prev, dz_prev,
                                   cfg.tau, n, alpha)

        _ref_step(ref, cfg.mode, alpha, eps)
        if not np.isfinite(ref.x[-1]).all():
            raise ReferenceDivergence(f"dense reference blew up at k={k}")
        try:
            state = si.step(state, cfg)
            yt, zt, xt = (qtree.to_dense(m) for m in (state.y, state.z, state.x))
            dy = float(np.linalg.norm(yt - ref.y[-1]))
            dz = float(np.linalg.norm(zt - ref.z[-1]))
            dx = float(np.linalg.norm(xt - ref.x[-1]))
            t_apx = state.t
        except si.IterationDivergence as exc:
            state = exc.state
            dy = dz = dx = t_apx = math.inf
        t_ref = (n - np.trace(ref.x[-1])) / n
        dzs.append(dz)
        flag = _bifurcating(dzs, float(np.linalg.norm(ref.z[-1])))
        records.append(ErrorFlowRecord(k, alpha, eps, t_apx, t_ref, dy, dz, dx,
                                       float(dn_y), float(dn_z), float(bound), flag))
        diverged = diverged or flag
        dy_prev, dz_prev = dy, dz
        if (flag and stop_on_divergence) or not math.isfinite(dz):
            break
    converged = (not diverged and bool(records)
                 and abs(records[-1].t_approx) < cfg.convergence_tol)
    return ErrorFlow(records, ref, diverged, converged)
