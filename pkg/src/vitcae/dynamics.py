"""Head-level convergence diagnostics and control.

Drift is the 1-Wasserstein distance between a head's class-token attention
over patches at consecutive epochs; the consensus count is the multiplicity
of the unit eigenvalue of the random walk on the symmetrised attention
graph. Together they decide when a head's query/key/value projections and
temperature are frozen.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import (
    ContractError,
    DegenerateDistributionError,
    IntegrationError,
    NumericDomainError,
)
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass
class DiscreteDistribution:
    """Probability weights on ``0..n-1``.

    ``grid`` is ``None`` for the unit-spaced index line, or ``(rows, cols)``
    for raster-ordered patch-grid coordinates with a Euclidean metric.
    """

    weights: np.ndarray
    grid: tuple[int, int] | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ContractError("distribution weights must be a non-empty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ContractError("distribution weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise DegenerateDistributionError("distribution has no mass")
        self.weights = w / total
        if self.grid is not None:
            self.grid = (int(self.grid[0]), int(self.grid[1]))
            if self.grid[0] * self.grid[1] != w.size:
                raise ContractError(f"grid {self.grid} does not cover {w.size} support points")

    @property
    def n(self) -> int:
        return self.weights.size

    def coordinates(self) -> np.ndarray:
        if self.grid is None:
            return np.arange(self.n, dtype=np.float64)[:, None]
        rows, cols = np.divmod(np.arange(self.n), self.grid[1])
        return np.stack([rows, cols], axis=1).astype(np.float64)


@dataclass(frozen=True)
class FreezePolicy:
    drift_threshold: float = 0.01
    drift_window: int = 3
    kappa_window: int = 5
    min_epoch: int = 6

    def __post_init__(self):
        # a zero threshold is allowed and disables freezing
        if self.drift_threshold < 0:
            raise ContractError("drift_threshold must be non-negative")
        if self.drift_window < 2 or self.kappa_window < 2:
            raise ContractError("drift and kappa windows must be at least 2")

    @property
    def enabled(self) -> bool:
        return self.drift_threshold > 0


@dataclass
class HeadState:
    layer: int
    head: int
    tau: float = 1.0
    attn_snapshot: np.ndarray | None = None
    cls_snapshot: np.ndarray | None = None
    drift_history: list[float] = field(default_factory=list)
    kappa_history: list[int] = field(default_factory=list)
    tau_history: list[float] = field(default_factory=list)
    frozen: bool = False
    frozen_at_epoch: int | None = None

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "head": self.head,
            "tau": self.tau,
            "drift_history": list(self.drift_history),
            "kappa_history": list(self.kappa_history),
            "tau_history": list(self.tau_history),
            "frozen": self.frozen,
            "frozen_at_epoch": self.frozen_at_epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> HeadState:
        return cls(
            layer=d["layer"], head=d["head"], tau=d["tau"],
            drift_history=list(d["drift_history"]), kappa_history=list(d["kappa_history"]),
            tau_history=list(d.get("tau_history", [])),
            frozen=d["frozen"], frozen_at_epoch=d["frozen_at_epoch"],
        )


# -- drift ---------------------------------------------------------------------

def cls_attention_row(A, grid: tuple[int, int] | None = None) -> DiscreteDistribution:
    """Class-token attention restricted to the patch tokens and renormalised."""
    A = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64)
    row = A[0, 1:]
    if row.sum() <= 0:
        raise DegenerateDistributionError("class token puts no attention mass on patches")
    return DiscreteDistribution(row, grid)


def cls_patch_rows(A: np.ndarray) -> np.ndarray:
    """Vectorised :func:`cls_attention_row` for a batch ``(..., N, N)`` -> ``(..., n)``."""
    rows = np.asarray(A, dtype=np.float64)[..., 0, 1:]
    mass = rows.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise DegenerateDistributionError("class token puts no attention mass on patches")
    return rows / mass


def _w1_line(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.abs(np.cumsum(p - q, axis=-1)).sum(axis=-1)


def transport_cost(p: np.ndarray, q: np.ndarray, cost: np.ndarray) -> float:
    """Exact optimal-transport cost via the primal transport linear program."""
    n, m = p.size, q.size
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([p, q])
    # the two marginal systems share one redundant equation
    res = linprog(cost.reshape(-1), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericDomainError(f"transport LP failed: {res.message}")
    return float(res.fun)


def w1_distance(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    if p.n != q.n or p.grid != q.grid:
        raise ContractError(f"support mismatch: {p.n}/{p.grid} vs {q.n}/{q.grid}")
    if p.grid is None:
        return float(_w1_line(p.weights, q.weights))
    xy = p.coordinates()
    cost = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
    return max(transport_cost(p.weights, q.weights, cost), 0.0)


def mean_drift(prev_rows: np.ndarray, rows: np.ndarray, grid: tuple[int, int] | None = None) -> float:
    """Average W1 between paired probe distributions ``(probe, n)``."""
    if prev_rows.shape != rows.shape:
        raise ContractError("drift snapshots have different shapes")
    if grid is None:
        return float(_w1_line(prev_rows, rows).mean())
    return float(np.mean([
        w1_distance(DiscreteDistribution(a, grid), DiscreteDistribution(b, grid))
        for a, b in zip(prev_rows, rows)
    ]))


# -- consensus -------------------------------------------------------------------

def consensus_rank(A, eps_eig: float = 1e-6) -> int:
    """Number of eigenvalues within ``eps_eig`` of 1 for the symmetrised random walk."""
    A = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"consensus_rank needs a square matrix, got {A.shape}")
    S = 0.5 * (A + A.T)
    deg = S.sum(axis=1)
    if np.any(deg <= 0) or not np.all(np.isfinite(S)):
        raise NumericDomainError(f"consensus_rank: degenerate operator (min degree {deg.min():.3g})")
    # P = D^-1 S is similar to the symmetric D^-1/2 S D^-1/2
    inv_sqrt = 1.0 / np.sqrt(deg)
    M = S * inv_sqrt[:, None] * inv_sqrt[None, :]
    try:
        eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError(f"eigen-solver failed; condition number {np.linalg.cond(S):.3g}") from exc
    return int(np.sum(np.abs(eig - 1.0) < eps_eig))


# -- temperature and freezing ---------------------------------------------------------

def update_temperature(d: float, alpha_temp: float = 1.0) -> float:
    """Scheduled temperature ``1 / (1 + alpha * d)``."""
    if d < 0 or not math.isfinite(d):
        raise ContractError(f"drift must be finite and non-negative, got {d}")
    if alpha_temp <= 0:
        raise ContractError(f"alpha_temp must be positive, got {alpha_temp}")
    return 1.0 / (1.0 + alpha_temp * d)


def check_converged(state: HeadState, policy: FreezePolicy, epoch: int) -> bool:
    if not policy.enabled or epoch < policy.min_epoch:
        return False
    d, k = state.drift_history, state.kappa_history
    if len(d) < policy.drift_window or len(k) < policy.kappa_window:
        return False
    if any(x >= policy.drift_threshold for x in d[-policy.drift_window:]):
        return False
    return len(set(k[-policy.kappa_window:])) == 1


@dataclass
class EfficiencyLedger:
    total_params: int = 0
    frozen_params: int = 0
    events: list[dict] = field(default_factory=list)

    @property
    def frozen_fraction(self) -> float:
        return self.frozen_params / self.total_params if self.total_params else 0.0


def freeze_head(state: HeadState, params: Sequence[Tensor], epoch: int | None = None,
                ledger: EfficiencyLedger | None = None) -> int:
    """Exclude a head's projections and temperature from gradient computation.

    Returns the number of scalars frozen (0 if the head was already frozen).
    """
    if state.frozen:
        log.warning("head (%d, %d) is already frozen", state.layer, state.head)
        return 0
    count = 0
    for p in params:
        p.requires_grad = False
        p.grad = None
        count += p.size
    state.frozen = True
    state.frozen_at_epoch = epoch
    if ledger is not None:
        ledger.frozen_params += count
        ledger.events.append({"epoch": epoch, "layer": state.layer, "head": state.head, "params": count})
    return count


# -- opinion dynamics -----------------------------------------------------------------

@dataclass
class OpinionSystem:
    states: np.ndarray
    influence: Callable[[np.ndarray], np.ndarray]
    dt: float = 0.1
    steps: int = 100

    def __post_init__(self):
        X = np.asarray(self.states, dtype=np.float64)
        # a flat vector means scalar opinions, one per agent
        self.states = X.reshape(-1, 1) if X.ndim == 1 else X
        if self.dt <= 0:
            raise ContractError("dt must be positive")
        if self.steps < 0:
            raise ContractError("steps must be non-negative")


def influence_matrix(X: np.ndarray, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Row-normalised interaction weights ``phi(|x_j - x_i|) / sum_j phi``."""
    X = np.asarray(X, dtype=np.float64)
    dist = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    w = np.asarray(phi(dist), dtype=np.float64)
    denom = w.sum(axis=1)
    bad = np.flatnonzero(~(denom > 0))
    if bad.size:
        raise IntegrationError(f"influence normalisation vanishes for agent {int(bad[0])}")
    return w / denom[:, None]


def simulate_opinions(sys: OpinionSystem) -> np.ndarray:
    """Forward-Euler trajectory ``(steps + 1, m, d)`` including the initial state."""
    X = sys.states.copy()
    traj = [X.copy()]
    for _ in range(sys.steps):
        W = influence_matrix(X, sys.influence)
        X = X + sys.dt * (W @ X - X)
        traj.append(X.copy())
    return np.stack(traj)
