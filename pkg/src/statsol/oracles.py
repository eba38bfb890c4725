"""Closed-form references for the uncertain shock, and cached fine-grid references.

For Burgers' equation with data 1 left of ``center + X`` and 0 right of it,
the entropy solution is a single shock moving at speed 1/2, so all its
statistics reduce to integrals over the uniform law of X.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from .ensemble import EnsembleSummary, run_mc
from .errors import CacheCorruptError
from .fvm_core import FluxModel, GridSpec, SchemeConfig
from .random_fields import RandomFieldSpec, UncertainShock

CACHE_ENV = "STATSOL_CACHE_DIR"


@dataclass(frozen=True)
class ShockOracleParams:
    center: float = 0.5
    half_width: float = 0.1
    left: float = 1.0
    right: float = 0.0

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @classmethod
    def from_spec(cls, spec: UncertainShock) -> "ShockOracleParams":
        return cls(spec.center, spec.half_width, spec.left_value, spec.right_value)

    @property
    def speed(self) -> float:
        # Rankine-Hugoniot for f(u) = u^2/2
        return 0.5 * (self.left + self.right)

    def shock_position(self, X, t):
        return X + self.center + self.speed * t


DEFAULT = ShockOracleParams()


def exact_shock_solution(X, x, t, params: ShockOracleParams = DEFAULT):
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    return np.where(np.asarray(x) < params.shock_position(X, t), params.left, params.right)


def exact_shock_mean_variance(x, t, params: ShockOracleParams = DEFAULT):
    """Mean and variance of u(x, t) over X ~ U[-w, w]."""
    # P(X > x - center - speed t)
    w = params.half_width
    prob = np.clip((params.center + params.speed * t + w - np.asarray(x, dtype=np.float64)) / (2 * w), 0.0, 1.0)
    jump = params.left - params.right
    mean = params.right + jump * prob
    var = jump * jump * prob * (1.0 - prob)
    return mean, var


def exact_structure_function(x, t, h, p: float = 1.0, params: ShockOracleParams = DEFAULT):
    """Local two-point structure function S_p(x, t; h) of the uncertain shock.

    u(x+h) and u(x) differ exactly when the shock sits in [x, x+h); the result
    is that probability times |jump|**p.
    """
    w = params.half_width
    c = params.center + params.speed * np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise ValueError("h must be non-negative")
    # length of [x - c, x + h - c) inside the support [-w, w] of X; zero when
    # the window misses the support on either side
    overlap = np.minimum(w, x + h - c) - np.maximum(-w, x - c)
    val = np.clip(overlap / (2 * w), 0.0, 1.0)
    return val * abs(params.left - params.right) ** p


def exact_structure_function_integrated(t, h, p: float = 1.0, params: ShockOracleParams = DEFAULT,
                                        domain=(0.0, 1.0), n_quad: int = 100_000) -> float:
    """Midpoint quadrature of the exact local structure function over the domain."""
    a, b = domain
    x = a + (np.arange(n_quad) + 0.5) * (b - a) / n_quad
    return float(np.sum(exact_structure_function(x, t, h, p, params)) * (b - a) / n_quad)


def shock_quadrature(integrand, n_nodes: int = 100_000, params: ShockOracleParams = DEFAULT):
    """E[integrand(X)] for X ~ U[-w, w] by the midpoint rule.

    ``integrand`` maps an array of X nodes (shape (n,)) to values of shape (n, ...).
    Evaluated in blocks to bound memory.
    """
    w = params.half_width
    nodes = -w + (np.arange(n_nodes) + 0.5) * (2 * w / n_nodes)
    total = None
    for lo in range(0, n_nodes, 2048):
        part = np.sum(integrand(nodes[lo:lo + 2048]), axis=0)
        total = part if total is None else total + part
    return total / n_nodes


def exact_three_point_moment(x, t, h1, h2, params: ShockOracleParams = DEFAULT, n_nodes: int = 100_000):
    """E[(u(x) - u(x+h1)) (u(x) - u(x+h2))**2] over the shock law, by X-quadrature."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))

    def g(X):
        u0 = exact_shock_solution(X[:, None], x[None, :], t, params)
        u1 = exact_shock_solution(X[:, None], x[None, :] + h1, t, params)
        u2 = exact_shock_solution(X[:, None], x[None, :] + h2, t, params)
        return (u0 - u1) * (u0 - u2) ** 2

    return shock_quadrature(g, n_nodes, params)


# -- cached references -------------------------------------------------------

def cache_dir(path=None) -> Path:
    p = Path(path or os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "statsol")
    p.mkdir(parents=True, exist_ok=True)
    return p


def reference_key(spec, flux, scheme, grid, M, seed) -> tuple[str, dict]:
    params = {
        "spec": {"type": type(spec).__name__, **asdict(spec)},
        "flux": asdict(flux),
        "scheme": {k: (v.value if hasattr(v, "value") else v) for k, v in asdict(scheme).items()},
        "grid": {"n_cells": grid.n_cells, "domain": list(grid.domain), "boundary": grid.boundary.value},
        "M": int(M),
        "seed": int(seed),
        "version": __version__,
    }
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:32], params


def reference_solution(
    spec: RandomFieldSpec,
    flux: FluxModel,
    scheme: SchemeConfig,
    grid_fine: GridSpec,
    M_ref: int,
    seed: int,
    cache: str | os.PathLike | None = None,
    workers: int | None = None,
) -> EnsembleSummary:
    """Fine-grid MC reference, computed once and then served from disk.

    The cache entry is a binary ensemble record plus a JSON manifest holding
    the parameters and the record's SHA-256. A checksum mismatch on reload
    raises CacheCorruptError.
    """
    from .records import read_ensemble, write_ensemble

    root = cache_dir(cache)
    key, params = reference_key(spec, flux, scheme, grid_fine, M_ref, seed)
    data_path = root / f"{key}.bin"
    manifest_path = root / f"{key}.json"
    with FileLock(str(root / f"{key}.lock")):
        if manifest_path.exists() and data_path.exists():
            manifest = json.loads(manifest_path.read_text())
            digest = hashlib.sha256(data_path.read_bytes()).hexdigest()
            if digest != manifest.get("sha256"):
                raise CacheCorruptError(f"checksum mismatch for cached reference {key}")
            return read_ensemble(data_path)
        ens = run_mc(spec, flux, scheme, grid_fine, M_ref, seed, workers=workers)
        write_ensemble(ens, data_path)
        manifest = {"key": key, "parameters": params,
                    "sha256": hashlib.sha256(data_path.read_bytes()).hexdigest(),
                    "cell_updates": ens.work.cell_updates}
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return ens
