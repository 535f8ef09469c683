"""Newton-Schulz square root / inverse square root iteration on quadtrees.

Two instances are provided.  The dual channel carries ``y -> s^(1/2)`` and
``z -> s^(-1/2)``::

    h   = h_alpha[stab_eps(x_{k-1})]
    y_k = h (x)_tau_s y_{k-1}
    z_k = z_{k-1} (x)_tau h
    x_k = y_k (x)_tau z_k

The single channel carries only ``z``::

    z_k = z_{k-1} (x)_tau h
    x_k = z_k^T (x)_tau (s (x)_tau_s z_k)

with ``h_alpha[x] = (sqrt(alpha)/2) (3 I - alpha x)``.  Convergence is read
off the relative trace error ``t_k = (n - tr x_k) / n``; optional sigmoid
schedules in ``t`` drive the map scaling ``alpha`` and the stabilizing shift
``eps`` back to 1 and 0 as the iteration converges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import qtree
from .qtree import HierMatrix
from .spamm import MultiplyStats, VolumeLog, multiply

DUAL = "dual"
SINGLE = "single"

# stabilization below this shift is skipped
_EPS_FLOOR = 1e-6


class IterationDivergence(RuntimeError):
    """Raised when the trace error blows up; carries the history so far."""

    def __init__(self, message, history=None, state=None):
        super().__init__(message)
        self.history = history if history is not None else []
        self.state = state


@dataclass
class IterationConfig:
    mode: str = DUAL
    tau: float = 0.0
    tau_s: Optional[float] = None
    block_size: int = qtree.DEFAULT_BLOCK_SIZE
    max_iter: int = 100
    convergence_tol: float = 1e-10
    scaling_enabled: bool = True
    a_amp: float = 1.85
    a_rate: float = 50.0
    a_mid: float = 0.35
    e_amp: float = 0.1
    e_rate: float = 75.0
    e_mid: float = 0.30
    power_iters: int = 100
    # keep a VolumeLog for every channel product when k % volumes_every == 0
    volumes_every: int = 0

    def __post_init__(self):
        if self.tau_s is None:
            self.tau_s = 0.01 * self.tau
        if self.mode not in (DUAL, SINGLE):
            raise ValueError(f"mode must be 'dual' or 'single', got {self.mode!r}")
        if not 0 <= self.tau_s <= self.tau:
            raise ValueError("need 0 <= tau_s <= tau")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if min(self.a_amp, self.a_rate, self.a_mid,
               self.e_amp, self.e_rate, self.e_mid) <= 0:
            raise ValueError("schedule parameters must be positive")


@dataclass
class StepRecord:
    k: int
    t: float
    alpha: float
    eps: float
    stats: dict[str, MultiplyStats] = field(default_factory=dict)
    volumes: dict[str, VolumeLog] = field(default_factory=dict)

    def volume_fraction(self, channel: str) -> float:
        st = self.stats.get(channel)
        return float("nan") if st is None else st.volume_fraction


@dataclass
class IterationState:
    """Iterates of one run; ``s`` is the rescaled input.

    In the single instance ``y`` holds the sensitive product ``s z_k``.
    """

    k: int
    s: HierMatrix
    y: HierMatrix
    z: HierMatrix
    x: HierMatrix
    t: float
    s_max: float
    history: list[StepRecord] = field(default_factory=list)


@dataclass
class IterationResult:
    y: HierMatrix
    z: HierMatrix
    history: list[StepRecord]
    converged: bool
    s_max: float

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def final_t(self) -> float:
        return self.history[-1].t


# -- scalar pieces ------------------------------------------------------------

def alpha_schedule(t: float, cfg: Optional[IterationConfig] = None) -> float:
    cfg = cfg or IterationConfig()
    return 1.0 + cfg.a_amp / (1.0 + math.exp(-cfg.a_rate * (t - cfg.a_mid)))


def epsilon_schedule(t: float, cfg: Optional[IterationConfig] = None) -> float:
    cfg = cfg or IterationConfig()
    return cfg.e_amp / (1.0 + math.exp(-cfg.e_rate * (t - cfg.e_mid)))


def map_value(x, alpha: float):
    """Scalar (or elementwise) ``h_alpha``; handy for oracles."""
    return 0.5 * math.sqrt(alpha) * (3.0 - alpha * x)


def map_slope(alpha: float) -> float:
    """Derivative of ``h_alpha`` with respect to its argument."""
    return -0.5 * alpha ** 1.5


# -- matrix maps -------------------------------------------------------------

def logistic_map(x: HierMatrix, alpha: float) -> HierMatrix:
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return qtree.scale_shift(x, map_slope(alpha), 1.5 * math.sqrt(alpha))


def stabilize(x: HierMatrix, eps: float) -> HierMatrix:
    """Affine map of the spectrum ``[0, 1] -> [eps, 1 - eps]``."""
    if not 0 <= eps < 0.5:
        raise ValueError(f"eps must lie in [0, 0.5), got {eps}")
    if eps == 0:
        return x
    return qtree.scale_shift(x, 1.0 - 2.0 * eps, eps)


def trace_error(x: HierMatrix) -> float:
    n = x.logical_dim
    return (n - qtree.trace(x)) / n


def rescale_spectrum(s: HierMatrix, iters: int = 100) -> tuple[HierMatrix, float]:
    """Divide ``s`` by a power-iteration estimate of its top eigenvalue, +1%."""
    if s.norm == 0:
        raise ValueError("cannot rescale the zero matrix")
    n = s.logical_dim
    v = np.full(n, 1.0 / math.sqrt(n))
    lam = 0.0
    for _ in range(iters):
        w = qtree.matvec(s, v)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        lam = float(v @ w)
        v = w / nw
    if lam <= 0:
        # start vector in the null space; fall back on the Frobenius norm
        lam = s.norm
    s_max = 1.01 * lam
    return qtree.scale_shift(s, 1.0 / s_max, 0.0), s_max


def _map_params(t: float, cfg: IterationConfig) -> tuple[float, float]:
    if not cfg.scaling_enabled:
        return 1.0, 0.0
    tc = min(max(t, 0.0), 1.0)
    eps = epsilon_schedule(tc, cfg)
    return alpha_schedule(tc, cfg), (eps if eps > _EPS_FLOOR else 0.0)


def _finite(*ms: HierMatrix) -> bool:
    return all(math.isfinite(m.norm) for m in ms)


def initial_state(s: HierMatrix, cfg: IterationConfig) -> IterationState:
    """State at k = 0 for an already rescaled ``s``."""
    z0 = qtree.identity(s.logical_dim, s.block_size)
    t0 = trace_error(s)
    return IterationState(k=0, s=s, y=s, z=z0, x=s, t=t0, s_max=1.0,
                          history=[StepRecord(0, t0, 1.0, 0.0)])


def _logs(k: int, cfg: IterationConfig, channels) -> dict[str, VolumeLog]:
    if cfg.volumes_every and k % cfg.volumes_every == 0:
        return {c: VolumeLog() for c in channels}
    return {}


def dual_step(state: IterationState, cfg: IterationConfig) -> IterationState:
    k = state.k + 1
    alpha, eps = _map_params(state.t, cfg)
    h = logistic_map(stabilize(state.x, eps), alpha)
    logs = _logs(k, cfg, ("y", "z", "x"))
    y, sy = multiply(h, state.y, cfg.tau_s, logs.get("y"))
    z, sz = multiply(state.z, h, cfg.tau, logs.get("z"))
    x, sx = multiply(y, z, cfg.tau, logs.get("x"))
    t = trace_error(x)
    rec = StepRecord(k, t, alpha, eps, {"y": sy, "z": sz, "x": sx}, logs)
    new = replace(state, k=k, y=y, z=z, x=x, t=t, history=state.history + [rec])
    if not (math.isfinite(t) and _finite(y, z, x)):
        raise IterationDivergence(f"non-finite iterate at k={k}", new.history, new)
    return new


def single_step(state: IterationState, cfg: IterationConfig) -> IterationState:
    k = state.k + 1
    alpha, eps = _map_params(state.t, cfg)
    h = logistic_map(stabilize(state.x, eps), alpha)
    logs = _logs(k, cfg, ("z", "y", "x"))
    z, sz = multiply(state.z, h, cfg.tau, logs.get("z"))
    # the rightmost product carries s and is the sensitive one
    w, sw = multiply(state.s, z, cfg.tau_s, logs.get("y"))
    x, sx = multiply(qtree.transpose(z), w, cfg.tau, logs.get("x"))
    t = trace_error(x)
    rec = StepRecord(k, t, alpha, eps, {"z": sz, "y": sw, "x": sx}, logs)
    new = replace(state, k=k, y=w, z=z, x=x, t=t, history=state.history + [rec])
    if not (math.isfinite(t) and _finite(z, x)):
        raise IterationDivergence(f"non-finite iterate at k={k}", new.history, new)
    return new


def step(state: IterationState, cfg: IterationConfig) -> IterationState:
    return dual_step(state, cfg) if cfg.mode == DUAL else single_step(state, cfg)


class _DivergenceMonitor:
    """Flags ``|t_k|`` above 10x its running minimum for 3 steps in a row."""

    def __init__(self, factor: float = 10.0, patience: int = 3):
        self.factor, self.patience = factor, patience
        self.best = math.inf
        self.strikes = 0

    def __call__(self, t: float) -> bool:
        a = abs(t)
        if not math.isfinite(a):
            return True
        if a > self.factor * self.best:
            self.strikes += 1
        else:
            self.strikes = 0
        self.best = min(self.best, a)
        return self.strikes >= self.patience


def run(s: HierMatrix, cfg: IterationConfig) -> IterationResult:
    """Iterate to convergence and return unrescaled ``s^(1/2)``, ``s^(-1/2)``.

    Raises :class:`IterationDivergence` (with history) on blow-up.
    """
    scaled, s_max = rescale_spectrum(s, cfg.power_iters)
    state = initial_state(scaled, cfg)
    state.s_max = s_max
    monitor = _DivergenceMonitor()
    monitor(state.t)
    converged = abs(state.t) < cfg.convergence_tol
    while not converged and state.k < cfg.max_iter:
        state = step(state, cfg)
        if monitor(state.t):
            raise IterationDivergence(
                f"trace error diverged at k={state.k} (t={state.t:.3g})",
                state.history, state)
        converged = abs(state.t) < cfg.convergence_tol
    root = math.sqrt(s_max)
    y = qtree.scale_shift(state.y, root, 0.0)
    z = qtree.scale_shift(state.z, 1.0 / root, 0.0)
    return IterationResult(y=y, z=z, history=state.history,
                           converged=converged, s_max=s_max)
