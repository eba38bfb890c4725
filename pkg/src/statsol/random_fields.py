"""Random initial data: uncertain shock location and fractional Brownian motion.

Every sample is drawn from its own counter-based stream keyed by
``(master_seed, level, sample_index)``, so a sample can be regenerated at
any resolution, in any order, on any thread.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InvalidHurstError, SizeMismatchError
from .fvm_core import FieldSample, GridSpec


@dataclass(frozen=True)
class UncertainShock:
    """Step from ``left_value`` to ``right_value`` at ``center + X``, X ~ U[-half_width, half_width]."""

    left_value: float = 1.0
    right_value: float = 0.0
    center: float = 0.5
    half_width: float = 0.1

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")


@dataclass(frozen=True)
class FractionalBrownian:
    hurst: float

    def __post_init__(self):
        _check_hurst(self.hurst)


RandomFieldSpec = Union[UncertainShock, FractionalBrownian]


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    level: int = 0
    sample_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.level < 0 or self.sample_index < 0:
            raise ValueError("stream coordinates must be non-negative")


def derive_stream(seed: SeedSpec) -> np.random.Generator:
    """Philox generator whose key is hashed from the seed triple."""
    ss = np.random.SeedSequence(seed.master_seed, spawn_key=(seed.level, seed.sample_index))
    return np.random.Generator(np.random.Philox(ss))


def _check_hurst(hurst):
    if not 0.0 < hurst < 1.0:
        raise InvalidHurstError(f"hurst must lie strictly inside (0, 1), got {hurst}")


def check_domain(spec: RandomFieldSpec, grid: GridSpec):
    if isinstance(spec, UncertainShock):
        a, b = grid.domain
        if not (a <= spec.center - spec.half_width and spec.center + spec.half_width <= b):
            raise ValueError("shock support must lie inside the domain")


def sample_shock_parameter(spec: UncertainShock, rng: np.random.Generator) -> float:
    return float(rng.uniform(-spec.half_width, spec.half_width))


def shock_initial_field(X: float, grid: GridSpec, spec: UncertainShock = UncertainShock()) -> FieldSample:
    values = np.where(grid.midpoints < X + spec.center, spec.left_value, spec.right_value)
    return FieldSample(grid, values, 0.0)


def displacement_scale(hurst: float, level: int) -> float:
    """Standard deviation of the midpoint displacement added at refinement ``level``."""
    return math.sqrt((1.0 - 2.0 ** (2 * hurst - 2)) / 2.0 ** (2 * level * hurst))


def sample_fbm_nodes(hurst: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random midpoint displacement on 2**k + 1 equispaced nodes of [0, 1].

    Node 0 is pinned to 0 and the last node is a standard normal. Level l
    bisects the 2**l current spans; its variates are consumed after those of
    all coarser levels, so the first 2**(k-1) normals of a stream build the
    depth k-1 path exactly.
    """
    _check_hurst(hurst)
    if k < 0:
        raise ValueError("k must be non-negative")
    n = 2**k
    z = rng.standard_normal(n)
    nodes = np.empty(n + 1)
    nodes[0] = 0.0
    nodes[n] = z[0]
    for level in range(k):
        half = 2 ** (k - level - 1)
        mid = np.arange(2**level) * (2 * half) + half
        scale = displacement_scale(hurst, level)
        nodes[mid] = 0.5 * (nodes[mid + half] + nodes[mid - half]) + scale * z[2**level : 2 ** (level + 1)]
    return nodes


def fbm_initial_field(nodes: np.ndarray, grid: GridSpec) -> FieldSample:
    """Cell i takes the value of its left interface node."""
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.shape != (grid.n_cells + 1,):
        raise SizeMismatchError(f"need {grid.n_cells + 1} nodes for {grid.n_cells} cells, got {nodes.shape}")
    return FieldSample(grid, nodes[:-1], 0.0)


def initial_values(spec: RandomFieldSpec, grid: GridSpec, seed: SeedSpec) -> np.ndarray:
    """Cell values of the sample ``seed`` projected on ``grid``.

    Calling this with the same seed on a grid and its coarsening yields a
    coupled pair (same shock location, or shared Gaussian prefix).
    """
    rng = derive_stream(seed)
    if isinstance(spec, UncertainShock):
        X = sample_shock_parameter(spec, rng)
        return shock_initial_field(X, grid, spec).values
    if isinstance(spec, FractionalBrownian):
        return fbm_initial_field(sample_fbm_nodes(spec.hurst, grid.depth, rng), grid).values
    raise TypeError(f"unsupported field spec {spec!r}")


def initial_batch(spec: RandomFieldSpec, grid: GridSpec, seeds) -> np.ndarray:
    check_domain(spec, grid)
    out = np.empty((len(seeds), grid.n_cells))
    for r, s in enumerate(seeds):
        out[r] = initial_values(spec, grid, s)
    return out
