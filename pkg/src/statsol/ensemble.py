"""Single-level Monte Carlo ensembles and their statistics.

An :class:`EnsembleSummary` is the weighted empirical measure of M evolved
samples. The functionals below (moments, two-point structure functions and
the three-point moment) are all weighted sums over members, reduced in a
canonical order so that the result is bit-identical however the members
were produced or ordered.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, OffsetNotOnGridError
from .fvm_core import Boundary, FieldSample, FluxModel, GridSpec, SchemeConfig, cell_updates, evolve_batch
from .random_fields import RandomFieldSpec, SeedSpec, initial_batch
from .work import WorkLedger


def tree_sum(a: np.ndarray) -> np.ndarray:
    """Pairwise sum over axis 0 with a shape fixed by ``len(a)`` alone."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    while a.shape[0] > 1:
        if a.shape[0] % 2:
            a = np.concatenate([a, np.zeros((1,) + a.shape[1:])])
        a = a[0::2] + a[1::2]
    return a[0]


def weighted_sum(weights: np.ndarray, G: np.ndarray) -> np.ndarray:
    """sum_k w_k G_k, independent of member order.

    Products are sorted per output entry before the pairwise reduction, so
    any permutation of (weight, member) pairs reduces identically.
    """
    G = np.asarray(G, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).reshape((-1,) + (1,) * (G.ndim - 1))
    return tree_sum(np.sort(w * G, axis=0))


@dataclass(frozen=True)
class EnsembleSummary:
    """Empirical measure sum_k w_k delta_{u_k} of samples on a common grid."""

    grid: GridSpec
    time: float
    values: np.ndarray
    weights: np.ndarray | None = None
    work: WorkLedger = field(default_factory=WorkLedger, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, ndmin=2)
        if v.shape[1] != self.grid.n_cells:
            raise ValueError(f"members must have {self.grid.n_cells} cells, got {v.shape[1]}")
        if v.shape[0] < 1:
            raise ValueError("ensemble needs at least one member")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("ensemble member contains NaN or Inf")
        if self.weights is None:
            w = np.full(v.shape[0], 1.0 / v.shape[0])
        else:
            w = np.array(self.weights, dtype=np.float64)
            if w.shape != (v.shape[0],):
                raise ValueError("one weight per member required")
            if np.any(w < 0) or not np.sum(w) > 0:
                raise ValueError("weights must be non-negative with positive sum")
            # order-independent total, so permuted members normalise identically
            w = w / tree_sum(np.sort(w))
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @property
    def members(self) -> list[FieldSample]:
        return [FieldSample(self.grid, row, self.time) for row in self.values]

    @classmethod
    def from_members(cls, members, weights=None) -> "EnsembleSummary":
        members = list(members)
        grid, time = members[0].grid, members[0].time
        if any(m.grid != grid or m.time != time for m in members):
            raise ValueError("members must share grid and time")
        return cls(grid, time, np.stack([m.values for m in members]), weights)

    def expectation(self, G: np.ndarray) -> np.ndarray:
        """Weighted mean of per-member values ``G`` (shape (M,) or (M, ...))."""
        return weighted_sum(self.weights, G)


def run_mc(
    spec: RandomFieldSpec,
    flux: FluxModel,
    scheme: SchemeConfig,
    grid: GridSpec,
    M: int,
    seed: int,
    level: int = 0,
    workers: int | None = None,
) -> EnsembleSummary:
    """Monte Carlo ensemble: member k is the solve of sample stream (seed, level, k)."""
    if M < 1:
        raise ValueError("M must be at least 1")
    seeds = [SeedSpec(seed, level, k) for k in range(M)]
    values = initial_batch(spec, grid, seeds)
    try:
        values, steps = evolve_batch(values, grid, flux, scheme, workers=workers)
    except NonFiniteError as err:
        raise NonFiniteError(f"MC sample {err.sample_index} (level {level}) blew up",
                             sample_index=err.sample_index, level=level) from err
    ledger = WorkLedger()
    ledger.record(level, M, cell_updates(grid, steps))
    return EnsembleSummary(grid, scheme.t_end, values, None, ledger)


def mean_variance(ens: EnsembleSummary) -> tuple[FieldSample, FieldSample]:
    """Weighted mean and (population) variance fields.

    The variance is taken of the shifted data u - min_k u_k, so identical
    members give exactly zero.
    """
    mean = ens.expectation(ens.values)
    d = ens.values - ens.values.min(axis=0)
    var = ens.expectation((d - ens.expectation(d)) ** 2)
    return FieldSample(ens.grid, mean, ens.time), FieldSample(ens.grid, var, ens.time)


def grid_offset(h: float, grid: GridSpec, snap: bool = True) -> int:
    """Number of cells corresponding to the offset ``h``.

    With ``snap`` the offset is rounded to the nearest grid multiple;
    otherwise a non-multiple raises OffsetNotOnGridError.
    """
    if h < 0 or h >= grid.length:
        raise OffsetNotOnGridError(f"offset {h} outside [0, {grid.length})")
    q = h / grid.dx
    s = int(round(q))
    if not snap and abs(q - s) > 1e-9 * max(1.0, q):
        raise OffsetNotOnGridError(f"offset {h} is not a multiple of dx={grid.dx}")
    return s


def shifted(values: np.ndarray, grid: GridSpec, s: int) -> np.ndarray:
    """u(x_i + s dx) for every member: wrapped if periodic, clamped to the last cell otherwise."""
    n = grid.n_cells
    idx = np.arange(n) + s
    idx = idx % n if grid.boundary is Boundary.PERIODIC else np.minimum(idx, n - 1)
    return np.asarray(values)[..., idx]


def interior_mask(grid: GridSpec, s: int) -> np.ndarray:
    """Cells whose shifted partner lies inside the domain (all cells when periodic)."""
    n = grid.n_cells
    if grid.boundary is Boundary.PERIODIC:
        return np.ones(n, dtype=bool)
    return np.arange(n) + s <= n - 1


def increment_power(values, grid: GridSpec, p: float, h: float, snap: bool = True) -> np.ndarray:
    """|u(x+h) - u(x)|**p per member and cell."""
    s = grid_offset(h, grid, snap)
    return np.abs(shifted(values, grid, s) - values) ** p


def integrated_increment(values, grid: GridSpec, p: float, h: float,
                         snap: bool = True, interior_only: bool = False) -> np.ndarray:
    """Midpoint quadrature of |u(x+h) - u(x)|**p over x, per member."""
    s = grid_offset(h, grid, snap)
    integrand = np.abs(shifted(values, grid, s) - values) ** p
    if interior_only:
        integrand = integrand[..., interior_mask(grid, s)]
    return np.sum(integrand, axis=-1) * grid.dx


def three_point_integrand(values, grid: GridSpec, h1: float, h2: float, snap: bool = True) -> np.ndarray:
    """(u(x) - u(x+h1)) * (u(x) - u(x+h2))**2 per member and cell."""
    s1 = grid_offset(h1, grid, snap)
    s2 = grid_offset(h2, grid, snap)
    return (values - shifted(values, grid, s1)) * (values - shifted(values, grid, s2)) ** 2


def structure_function_local(ens: EnsembleSummary, p: float, h: float, snap: bool = True) -> FieldSample:
    return FieldSample(ens.grid, ens.expectation(increment_power(ens.values, ens.grid, p, h, snap)), ens.time)


def structure_function_integrated(ens: EnsembleSummary, p: float, h: float,
                                  snap: bool = True, interior_only: bool = False) -> float:
    vals = integrated_increment(ens.values, ens.grid, p, h, snap, interior_only)
    return float(ens.expectation(vals))


def three_point_moment(ens: EnsembleSummary, h1: float, h2: float, snap: bool = True) -> FieldSample:
    return FieldSample(ens.grid, ens.expectation(three_point_integrand(ens.values, ens.grid, h1, h2, snap)), ens.time)
