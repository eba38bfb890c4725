"""Distances between grid functions and empirical measures, rate fits, work models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .ensemble import EnsembleSummary
from .errors import DegenerateInputError, IncompatibleGridsError, TooLargeError, UnequalSupportError
from .fvm_core import FieldSample, GridSpec
from .oracles import ShockOracleParams, exact_shock_solution
from .random_fields import UncertainShock
from .work import WorkLedger

MAX_ASSIGNMENT_SIZE = 4096

__all__ = [
    "WorkLedger", "RateFit", "prolong", "l1_distance", "l1_cost_matrix", "wasserstein1_empirical",
    "shock_atoms", "wasserstein_vs_exact_shock", "fit_rate", "work_fvm", "work_mc",
    "work_mlmc_optimal", "work_models",
]


def _common_grid(ga: GridSpec, gb: GridSpec) -> GridSpec:
    if ga.domain != gb.domain:
        raise IncompatibleGridsError(f"domains differ: {ga.domain} vs {gb.domain}")
    # both cell counts are powers of two, so one always divides the other
    return ga if ga.n_cells >= gb.n_cells else gb


def prolong(values: np.ndarray, grid: GridSpec, target: GridSpec) -> np.ndarray:
    """Piecewise-constant injection of cell values onto the finer ``target`` grid."""
    if target.n_cells % grid.n_cells or target.domain != grid.domain:
        raise IncompatibleGridsError(f"cannot prolong {grid.n_cells} cells onto {target.n_cells}")
    return np.repeat(values, target.n_cells // grid.n_cells, axis=-1)


def l1_distance(a: FieldSample, b: FieldSample) -> float:
    fine = _common_grid(a.grid, b.grid)
    diff = prolong(a.values, a.grid, fine) - prolong(b.values, b.grid, fine)
    return float(np.sum(np.abs(diff)) * fine.dx)


def l1_cost_matrix(A: EnsembleSummary, B: EnsembleSummary) -> np.ndarray:
    fine = _common_grid(A.grid, B.grid)
    return cdist(prolong(A.values, A.grid, fine), prolong(B.values, B.grid, fine), "cityblock") * fine.dx


def wasserstein1_empirical(A: EnsembleSummary, B: EnsembleSummary, order_a=None, order_b=None) -> float:
    """W1 with L1 ground cost between two uniform empirical measures of equal size.

    Solved exactly as a linear assignment problem. If scalar ordering keys
    ``order_a``/``order_b`` are given (a certificate that the monotone
    coupling is optimal, e.g. shock positions), members are matched in
    sorted order instead.
    """
    if A.size != B.size:
        raise UnequalSupportError(f"member counts differ: {A.size} vs {B.size}")
    if A.size > MAX_ASSIGNMENT_SIZE:
        raise TooLargeError(f"{A.size} members exceeds the assignment cap {MAX_ASSIGNMENT_SIZE}")
    if not (A.uniform and B.uniform):
        raise ValueError("empirical measures must carry uniform weights")
    fine = _common_grid(A.grid, B.grid)
    if order_a is not None and order_b is not None:
        ia = np.argsort(order_a, kind="stable")
        ib = np.argsort(order_b, kind="stable")
        diff = prolong(A.values[ia], A.grid, fine) - prolong(B.values[ib], B.grid, fine)
        return float(np.sum(np.abs(diff)) * fine.dx / A.size)
    cost = l1_cost_matrix(A, B)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / A.size)


def shock_atoms(grid: GridSpec, t: float, Q: int, spec: UncertainShock = UncertainShock()) -> EnsembleSummary:
    """Exact solution measure discretized by Q midpoint atoms in X, sampled at cell midpoints."""
    params = ShockOracleParams.from_spec(spec)
    w = spec.half_width
    X = -w + (np.arange(Q) + 0.5) * (2 * w / Q)
    values = exact_shock_solution(X[:, None], grid.midpoints[None, :], t, params)
    return EnsembleSummary(grid, t, values)


def wasserstein_vs_exact_shock(ens: EnsembleSummary, t: float, Q: int | None = None,
                               spec: UncertainShock = UncertainShock()) -> float:
    Q = ens.size if Q is None else Q
    return wasserstein1_empirical(ens, shock_atoms(ens.grid, t, Q, spec))


@dataclass(frozen=True)
class RateFit:
    """Least-squares line log2(e) = slope * log2(h) + intercept."""

    slope: float
    intercept: float
    residual: float
    points: tuple

    def predict(self, h):
        return 2.0 ** (self.intercept + self.slope * np.log2(h))


def fit_rate(points) -> RateFit:
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 2:
        raise DegenerateInputError("need at least two points")
    h = np.array([p[0] for p in pts])
    e = np.array([p[1] for p in pts])
    if np.any(h <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise DegenerateInputError("resolutions and errors must be positive and finite")
    if len(np.unique(h)) < len(h):
        raise DegenerateInputError("repeated resolution values")
    lh, le = np.log2(h), np.log2(e)
    slope, intercept = np.polyfit(lh, le, 1)
    resid = float(np.sqrt(np.mean((le - (slope * lh + intercept)) ** 2)))
    return RateFit(float(slope), float(intercept), resid, tuple(pts))


# -- work models (up to constants) ------------------------------------------

def work_fvm(delta: float, d: int = 1) -> float:
    """One explicit solve with dt ~ delta."""
    return delta ** (-d - 1)


def work_mc(delta: float, s: float, d: int = 1) -> float:
    """MC with M ~ delta**(-2s) samples balancing sampling and spatial error."""
    return delta ** (-d - 1 - 2 * s)


def work_mlmc_optimal(delta_L: float, L: int, r: float, s: float, d: int = 1) -> float:
    return 2.0 ** (-L * (d + 1)) * delta_L ** (-d - 1 - 2 * s) + delta_L ** (-d - 1 + r / 2 - s) * L


def work_models(config, M: int | None = None, r: float = 1.0, s: float = 0.5, d: int = 1) -> dict:
    """Model-predicted work for a single-level mesh width or an MLMC LevelPlan."""
    from .mlmc import LevelPlan

    if isinstance(config, LevelPlan):
        deltas, samples = config.deltas, config.samples
        return {
            "mlmc_plan": float(sum(m * work_fvm(dl, d) for m, dl in zip(samples, deltas))),
            "mlmc_optimal": work_mlmc_optimal(deltas[-1], config.L, r, s, d),
            "fvm_finest": work_fvm(deltas[-1], d),
            "mc_finest": work_mc(deltas[-1], s, d),
        }
    delta = float(config)
    if not delta > 0:
        raise ValueError("mesh width must be positive")
    out = {"fvm": work_fvm(delta, d), "mc_optimal": work_mc(delta, s, d)}
    if M is not None:
        out["mc"] = M * work_fvm(delta, d)
    return out
