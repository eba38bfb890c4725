"""Multi-level Monte Carlo over a nested dyadic mesh hierarchy.

The estimator is the signed measure

    mu_0^{M_0} + sum_{l=1}^{L} (mu_l^{M_l} - mu_{l-1}^{M_l})

where the l-th correction uses M_l coupled pairs: the same random sample
solved on mesh l and on mesh l-1. A functional G is integrated against it as

    mean_k G(u_k^0) + sum_l mean_k (G(u_k^l) - G(u_k^{l-1})).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .ensemble import EnsembleSummary, weighted_sum
from .errors import InsufficientSamplesError, InvalidRateError, NonFiniteError
from .fvm_core import Boundary, FieldSample, FluxModel, GridSpec, SchemeConfig, cell_updates, evolve_batch
from .random_fields import RandomFieldSpec, SeedSpec, initial_batch
from .work import WorkLedger

# G(values, grid) -> per-member scalars (M,) or per-member fields (M, n_cells)
Functional = Callable[[np.ndarray, GridSpec], np.ndarray]


@dataclass(frozen=True)
class LevelPlan:
    delta0: float
    samples: tuple[int, ...]

    def __post_init__(self):
        samples = tuple(int(m) for m in self.samples)
        if not samples:
            raise ValueError("plan needs at least one level")
        if any(m < 1 for m in samples):
            raise ValueError("every level needs at least one sample")
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        object.__setattr__(self, "samples", samples)
        if any(samples[l] > samples[l - 1] for l in range(1, len(samples))):
            warnings.warn("sample counts increase with level; the work model assumes M_l <= M_{l-1}",
                          stacklevel=2)

    @property
    def L(self) -> int:
        return len(self.samples) - 1

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(self.delta0 * 2.0**-l for l in range(self.L + 1))

    def grids(self, domain=(0.0, 1.0), boundary=Boundary.OUTFLOW) -> list[GridSpec]:
        length = domain[1] - domain[0]
        return [GridSpec(int(round(length / d)), domain, boundary) for d in self.deltas]


def allocate_experimental(L: int, delta_L: float) -> LevelPlan:
    """M_0 = 1/delta_L and M_l = 16 * 2**(L-l) for l >= 1."""
    if L < 0:
        raise ValueError("L must be non-negative")
    samples = [int(round(1.0 / delta_L))] + [16 * 2 ** (L - l) for l in range(1, L + 1)]
    return LevelPlan(delta_L * 2.0**L, tuple(samples))


def _ceil(x: float) -> int:
    # absorb round-off so that exact integers (e.g. 256**1.0) do not round up
    return max(1, math.ceil(x * (1.0 - 1e-12)))


def allocate_theoretical(L: int, delta_L: float, r: float, s: float) -> LevelPlan:
    """M_0 = delta_L**(-2s), M_l = 2**(r(L-l)) * delta_L**(r/2 - s), rounded up."""
    if r <= 0 or s <= 0:
        raise InvalidRateError(f"rates must be positive, got r={r}, s={s}")
    if L < 0:
        raise ValueError("L must be non-negative")
    samples = [_ceil(delta_L ** (-2 * s))]
    samples += [_ceil(2.0 ** (r * (L - l)) * delta_L ** (r / 2 - s)) for l in range(1, L + 1)]
    return LevelPlan(delta_L * 2.0**L, tuple(samples))


@dataclass
class LevelDetail:
    """Coupled (fine, coarse) solves of one correction level. ``coarse`` is None on level 0."""

    level: int
    fine_grid: GridSpec
    fine: np.ndarray
    fine_steps: np.ndarray
    coarse_grid: GridSpec | None = None
    coarse: np.ndarray | None = None
    coarse_steps: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.fine.shape[0]

    def pair(self, k: int) -> tuple[FieldSample, FieldSample | None]:
        fine = FieldSample(self.fine_grid, self.fine[k])
        coarse = None if self.coarse is None else FieldSample(self.coarse_grid, self.coarse[k])
        return fine, coarse


def _to_grid(G: np.ndarray, grid: GridSpec, target: GridSpec) -> np.ndarray:
    if G.ndim == 1:
        return G
    return np.repeat(G, target.n_cells // grid.n_cells, axis=-1)


@dataclass
class MLMCSummary:
    plan: LevelPlan
    time: float
    levels: list[LevelDetail]
    seed: int
    streams: str = "coupled"
    work: WorkLedger = field(default_factory=WorkLedger)

    @property
    def finest_grid(self) -> GridSpec:
        return self.levels[-1].fine_grid

    def level_samples(self, G: Functional) -> list[np.ndarray]:
        """Per-sample G on level 0, per-sample detail G(fine) - G(coarse) above."""
        out = []
        target = self.finest_grid
        for lv in self.levels:
            g = _to_grid(np.asarray(G(lv.fine, lv.fine_grid), dtype=np.float64), lv.fine_grid, target)
            if lv.coarse is not None:
                g = g - _to_grid(np.asarray(G(lv.coarse, lv.coarse_grid), dtype=np.float64),
                                 lv.coarse_grid, target)
            out.append(g)
        return out

    def level_estimates(self, G: Functional) -> list[np.ndarray]:
        return [weighted_sum(np.full(len(g), 1.0 / len(g)), g) for g in self.level_samples(G)]

    def estimate(self, G: Functional):
        """Integral of G against the signed MLMC measure (float, or field on the finest grid)."""
        total = sum(self.level_estimates(G))
        return float(total) if np.ndim(total) == 0 else total

    def signed_atoms(self):
        """Yield (grid, member values, signed weight) for every atom of the signed measure."""
        for lv in self.levels:
            w = 1.0 / lv.size
            for k in range(lv.size):
                yield lv.fine_grid, lv.fine[k], w
                if lv.coarse is not None:
                    yield lv.coarse_grid, lv.coarse[k], -w

    def mean_variance(self):
        """Mean field, raw variance and zero-clamped variance on the finest grid.

        The raw variance E[u^2] - E[u]^2 of a signed measure can be negative;
        it is returned untouched alongside the clamped version.
        """
        grid = self.finest_grid
        mean = self.estimate(lambda v, g: v)
        second = self.estimate(lambda v, g: v * v)
        raw = second - mean * mean
        return (FieldSample(grid, mean, self.time), FieldSample(grid, raw, self.time),
                FieldSample(grid, np.maximum(raw, 0.0), self.time))

    def manifest(self) -> dict:
        return {
            "delta0": self.plan.delta0,
            "deltas": list(self.plan.deltas),
            "samples": list(self.plan.samples),
            "seed": self.seed,
            "streams": self.streams,
            "time": self.time,
            "work": self.work.to_dict(),
        }

    def save(self, directory, functionals: dict | None = None) -> Path:
        """Write manifest.json plus one binary ensemble record per level and side."""
        from .records import write_ensemble, write_json

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = self.manifest()
        if functionals:
            manifest["level_variances"] = {
                name: estimate_level_variances(self, G).tolist() for name, G in functionals.items()
            }
        files = []
        for lv in self.levels:
            name = f"level{lv.level}_fine.bin"
            write_ensemble(EnsembleSummary(lv.fine_grid, self.time, lv.fine), d / name)
            files.append(name)
            if lv.coarse is not None:
                name = f"level{lv.level}_coarse.bin"
                write_ensemble(EnsembleSummary(lv.coarse_grid, self.time, lv.coarse), d / name)
                files.append(name)
        manifest["records"] = files
        write_json(manifest, d / "manifest.json")
        return d / "manifest.json"


def _solve(spec, flux, scheme, grid, seeds, level, workers):
    values = initial_batch(spec, grid, seeds)
    try:
        return evolve_batch(values, grid, flux, scheme, workers=workers)
    except NonFiniteError as err:
        raise NonFiniteError(f"MLMC level {level}, sample {err.sample_index} blew up",
                             sample_index=err.sample_index, level=level) from err


def coupled_sample(
    spec: RandomFieldSpec,
    flux: FluxModel,
    scheme: SchemeConfig,
    level: int,
    grid_fine: GridSpec,
    seed: SeedSpec,
    coarse_seed: SeedSpec | None = None,
) -> tuple[FieldSample, FieldSample]:
    """Solve one sample on ``grid_fine`` and on its coarsening from the same stream.

    Passing a different ``coarse_seed`` decouples the pair (negative control).
    """
    if level < 1:
        raise ValueError("coupled pairs exist from level 1 on")
    grid_coarse = grid_fine.coarsen()
    fine, _ = _solve(spec, flux, scheme, grid_fine, [seed], level, 1)
    coarse, _ = _solve(spec, flux, scheme, grid_coarse, [coarse_seed or seed], level, 1)
    return (FieldSample(grid_fine, fine[0], scheme.t_end), FieldSample(grid_coarse, coarse[0], scheme.t_end))


def run_mlmc(
    spec: RandomFieldSpec,
    flux: FluxModel,
    scheme: SchemeConfig,
    plan: LevelPlan,
    seed: int,
    domain=(0.0, 1.0),
    boundary=Boundary.OUTFLOW,
    workers: int | None = None,
    streams: str = "coupled",
) -> MLMCSummary:
    """Run every level of ``plan``.

    ``streams`` selects the random streams:

    - "coupled": sample k of level l uses stream (seed, l, k) on both meshes;
    - "shared": stream (seed, 0, k) on every level, so all levels reuse the
      same draws and the estimator telescopes to single-level MC on the
      finest mesh;
    - "uncoupled": the coarse member uses stream (seed, l, M_l + k), an
      independent draw (negative control for variance decay).
    """
    if streams not in ("coupled", "shared", "uncoupled"):
        raise ValueError(f"unknown stream mode {streams!r}")
    grids = plan.grids(domain, boundary)
    ledger = WorkLedger()
    levels = []
    for l, (grid, M) in enumerate(zip(grids, plan.samples)):
        stream_level = 0 if streams == "shared" else l
        seeds = [SeedSpec(seed, stream_level, k) for k in range(M)]
        fine, fsteps = _solve(spec, flux, scheme, grid, seeds, l, workers)
        updates = cell_updates(grid, fsteps)
        if l == 0:
            levels.append(LevelDetail(0, grid, fine, fsteps))
        else:
            if streams == "uncoupled":
                cseeds = [SeedSpec(seed, l, M + k) for k in range(M)]
            else:
                cseeds = seeds
            coarse, csteps = _solve(spec, flux, scheme, grids[l - 1], cseeds, l, workers)
            updates += cell_updates(grids[l - 1], csteps)
            levels.append(LevelDetail(l, grid, fine, fsteps, grids[l - 1], coarse, csteps))
        ledger.record(l, M, updates)
    return MLMCSummary(plan, scheme.t_end, levels, seed, streams, ledger)


def estimate_level_variances(detail: MLMCSummary, G: Functional) -> np.ndarray:
    """Population variance of G on level 0 and of the detail G(fine) - G(coarse) above.

    G must be scalar-valued per member.
    """
    out = []
    for lv, g in zip(detail.levels, detail.level_samples(G)):
        if g.ndim != 1:
            raise ValueError("level variances need a scalar functional")
        if len(g) < 2:
            raise InsufficientSamplesError(f"level {lv.level} has {len(g)} sample(s); need at least 2")
        out.append(float(np.mean((g - np.mean(g)) ** 2)))
    return np.array(out)
