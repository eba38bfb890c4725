"""Deterministic 1D finite-volume evolution for scalar conservation laws.

The solver is a semi-discrete conservative scheme

    du_i/dt = -(F_{i+1/2} - F_{i-1/2}) / dx

with a Godunov or Rusanov numerical flux, optional two-stencil WENO
reconstruction of the interface states, and second order SSP Runge-Kutta
time stepping under a CFL restriction.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels as K
from .errors import NonFiniteError

# stages per SSP-RK2 step; used by the work ledger
RK_STAGES = 2


class Boundary(str, Enum):
    OUTFLOW = "outflow"
    PERIODIC = "periodic"


class NumericalFlux(str, Enum):
    GODUNOV = "godunov"
    RUSANOV = "rusanov"


class Reconstruction(str, Enum):
    NONE = "none"
    WENO2 = "weno2"


@dataclass(frozen=True)
class GridSpec:
    """Uniform dyadic grid of ``n_cells`` cells on ``domain``."""

    n_cells: int
    domain: tuple[float, float] = (0.0, 1.0)
    boundary: Boundary = Boundary.OUTFLOW

    def __post_init__(self):
        n = int(self.n_cells)
        if n < 1 or n & (n - 1):
            raise ValueError(f"n_cells must be a positive power of two, got {self.n_cells}")
        a, b = float(self.domain[0]), float(self.domain[1])
        if not b > a:
            raise ValueError(f"domain must satisfy b > a, got {self.domain}")
        object.__setattr__(self, "n_cells", n)
        object.__setattr__(self, "domain", (a, b))
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def midpoints(self) -> np.ndarray:
        return self.domain[0] + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def interfaces(self) -> np.ndarray:
        return self.domain[0] + np.arange(self.n_cells + 1) * self.dx

    @property
    def depth(self) -> int:
        """log2 of the cell count."""
        return self.n_cells.bit_length() - 1

    def with_cells(self, n_cells: int) -> "GridSpec":
        return GridSpec(n_cells, self.domain, self.boundary)

    def coarsen(self) -> "GridSpec":
        return self.with_cells(self.n_cells // 2)

    def refine(self) -> "GridSpec":
        return self.with_cells(self.n_cells * 2)


@dataclass(frozen=True)
class FieldSample:
    """Cell averages of one solution on ``grid`` at ``time``."""

    grid: GridSpec
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("field contains NaN or Inf")
        if self.time < 0:
            raise ValueError("time must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx)

    def total_variation(self) -> float:
        return float(np.sum(np.abs(np.diff(self.values))))


_FLUX_KINDS = {"burgers": K.BURGERS, "cubic": K.CUBIC, "linear": K.LINEAR}


@dataclass(frozen=True)
class FluxModel:
    """Flux function of the conservation law.

    Use the constructors :meth:`burgers`, :meth:`cubic` and
    :meth:`linear_advection`.
    """

    name: str
    speed: float = 0.0
    critical_points: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.name not in _FLUX_KINDS:
            raise ValueError(f"unknown flux {self.name!r}")

    @classmethod
    def burgers(cls) -> "FluxModel":
        return cls("burgers", 0.0, (0.0,))

    @classmethod
    def cubic(cls) -> "FluxModel":
        return cls("cubic", 0.0, (0.0,))

    @classmethod
    def linear_advection(cls, speed: float) -> "FluxModel":
        return cls("linear", float(speed), ())

    @classmethod
    def from_name(cls, name: str, speed: float = 1.0) -> "FluxModel":
        if name == "burgers":
            return cls.burgers()
        if name == "cubic":
            return cls.cubic()
        if name == "linear":
            return cls.linear_advection(speed)
        raise ValueError(f"unknown flux {name!r}")

    @property
    def kind(self) -> int:
        return _FLUX_KINDS[self.name]

    @property
    def _crit(self) -> np.ndarray:
        return np.asarray(self.critical_points, dtype=np.float64)

    def f(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.name == "burgers":
            return 0.5 * u * u
        if self.name == "cubic":
            return u * u * u / 3.0
        return self.speed * u

    def f_prime(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.name == "burgers":
            return u.copy()
        if self.name == "cubic":
            return u * u
        return np.full_like(u, self.speed)


@dataclass(frozen=True)
class SchemeConfig:
    numerical_flux: NumericalFlux = NumericalFlux.GODUNOV
    reconstruction: Reconstruction = Reconstruction.WENO2
    cfl: float = 0.475
    t_end: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "numerical_flux", NumericalFlux(self.numerical_flux))
        object.__setattr__(self, "reconstruction", Reconstruction(self.reconstruction))
        if not 0.0 < self.cfl <= 1.0:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")

    def _codes(self):
        nflux = K.GODUNOV if self.numerical_flux is NumericalFlux.GODUNOV else K.RUSANOV
        recon = K.WENO2 if self.reconstruction is Reconstruction.WENO2 else K.NO_RECON
        return nflux, recon


def godunov_flux(flux: FluxModel, uL, uR):
    """Exact Godunov flux: min of f on [uL, uR] if uL <= uR, else max on [uR, uL].

    Accepts scalars or equally shaped arrays.
    """
    if np.ndim(uL) == 0 and np.ndim(uR) == 0:
        return K.godunov(flux.kind, flux.speed, flux._crit, float(uL), float(uR))
    uL, uR = np.broadcast_arrays(np.asarray(uL, np.float64), np.asarray(uR, np.float64))
    out = np.empty(uL.size)
    K.godunov_array(flux.kind, flux.speed, flux._crit, uL.ravel().copy(), uR.ravel().copy(), out)
    return out.reshape(uL.shape)


def rusanov_flux(flux: FluxModel, uL: float, uR: float) -> float:
    return K.rusanov(flux.kind, flux.speed, float(uL), float(uR))


def weno2_reconstruct(u_im1: float, u_i: float, u_ip1: float) -> tuple[float, float]:
    """Left and right interface values of cell i from the stencil (i-1, i, i+1)."""
    return K.weno2(float(u_im1), float(u_i), float(u_ip1))


def semi_discrete_rhs(state: FieldSample, flux: FluxModel, scheme: SchemeConfig) -> np.ndarray:
    grid = state.grid
    n = grid.n_cells
    nflux, recon = scheme._codes()
    out = np.empty(n)
    K.rhs(
        np.array(state.values), np.empty(n + 4), np.empty(n + 4), np.empty(n + 4), np.empty(n + 4),
        out, grid.dx, flux.kind, flux.speed, flux._crit, nflux, recon,
        grid.boundary is Boundary.PERIODIC,
    )
    return out


def cfl_dt(state: FieldSample, flux: FluxModel, cfl: float) -> float:
    """cfl * dx / max|f'(u)|, or cfl * dx when the field is (numerically) at rest."""
    return K.stable_dt(np.array(state.values), state.grid.dx, flux.kind, flux.speed, float(cfl))


def _check_grid(grid: GridSpec):
    if grid.boundary is Boundary.PERIODIC and grid.n_cells < 2:
        raise ValueError("periodic boundaries need at least two cells")


def evolve(initial: FieldSample, flux: FluxModel, scheme: SchemeConfig) -> tuple[FieldSample, int]:
    """Advance ``initial`` to ``scheme.t_end``. Returns the final state and the step count."""
    if scheme.t_end < initial.time:
        raise ValueError(f"t_end={scheme.t_end} precedes initial time {initial.time}")
    values, steps = evolve_batch(initial.values[None, :], initial.grid, flux, scheme, t_start=initial.time)
    return FieldSample(initial.grid, values[0], scheme.t_end), int(steps[0])


def default_workers() -> int:
    return os.cpu_count() or 1


def evolve_batch(
    values: np.ndarray,
    grid: GridSpec,
    flux: FluxModel,
    scheme: SchemeConfig,
    t_start: float = 0.0,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Evolve every row of ``values`` independently.

    Rows never interact, so the result does not depend on how rows are split
    across ``workers`` threads.

    Returns the evolved (M, n) array and the per-row step counts. Raises
    NonFiniteError carrying the first failing row index.
    """
    _check_grid(grid)
    U = np.array(values, dtype=np.float64, order="C", ndmin=2)
    if U.shape[1] != grid.n_cells:
        raise ValueError(f"rows must have {grid.n_cells} cells, got {U.shape[1]}")
    m = U.shape[0]
    steps = np.zeros(m, dtype=np.int64)
    nflux, recon = scheme._codes()
    args = (
        grid.dx, flux.kind, flux.speed, flux._crit, nflux, recon,
        grid.boundary is Boundary.PERIODIC, float(scheme.cfl), float(t_start), float(scheme.t_end),
    )
    workers = min(workers or default_workers(), m) if m else 1
    if workers <= 1:
        K.evolve_rows(U, steps, *args)
    else:
        bounds = np.linspace(0, m, workers + 1).astype(int)

        def job(i):
            lo, hi = bounds[i], bounds[i + 1]
            K.evolve_rows(U[lo:hi], steps[lo:hi], *args)

        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(job, range(workers)))
    bad = np.flatnonzero(steps < 0)
    if bad.size:
        raise NonFiniteError(f"non-finite state in sample {bad[0]}", sample_index=int(bad[0]))
    return U, steps


def cell_updates(grid: GridSpec, steps) -> int:
    """Work of one or more solves: cells x RK stages x steps."""
    return int(grid.n_cells * RK_STAGES * int(np.sum(steps)))

