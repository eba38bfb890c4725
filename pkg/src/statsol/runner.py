"""Batch studies over a resolution ladder, driven by a JSON config.

A config names one experiment, the random initial data, the flux and scheme,
the ladder of cell counts and a samples rule. ``run_experiment`` executes it
and writes into the output directory:

- ``manifest.json``: resolved config, seed, library version, file list;
- one CSV per resolution (fields or tables, depending on the study);
- ``summary.csv``: one row per (quantity, resolution) with columns
  quantity, resolution, samples, work_cell_updates, error_mean, error_std,
  fitted_rate.

Errors are L1 norms (sum |e| dx) for fields and absolute values for
scalars. Work is counted in cell updates. Every number is a function of
(config, seed) alone, whatever the worker count.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .ensemble import (
    EnsembleSummary,
    grid_offset,
    increment_power,
    integrated_increment,
    run_mc,
    three_point_integrand,
)
from .errors import ConfigInvalidError, DegenerateInputError
from .fvm_core import (
    Boundary,
    FluxModel,
    GridSpec,
    NumericalFlux,
    Reconstruction,
    SchemeConfig,
    cell_updates,
    evolve_batch,
)
from .metrics import fit_rate, prolong, wasserstein_vs_exact_shock
from .mlmc import LevelPlan, allocate_experimental, allocate_theoretical, estimate_level_variances, run_mlmc
from .oracles import (
    ShockOracleParams,
    exact_shock_mean_variance,
    exact_shock_solution,
    exact_structure_function,
    exact_structure_function_integrated,
    exact_three_point_moment,
    reference_solution,
)
from .random_fields import (
    FractionalBrownian,
    RandomFieldSpec,
    SeedSpec,
    UncertainShock,
    derive_stream,
    initial_batch,
    sample_shock_parameter,
    shock_initial_field,
)
from .records import emit_csv, write_ensemble, write_json
from .work import WorkLedger

EXPERIMENTS = ("deterministic", "mc", "mlmc", "wasserstein-study", "midpoint-study",
               "structure-functions", "level-variance")
SAMPLE_RULES = ("fixed", "equal-to-cells", "mlmc-experimental", "mlmc-theoretical")
QUANTITIES = ("mean", "variance", "sf_local", "sf_integrated", "three_point")
SUMMARY_COLUMNS = ("quantity", "resolution", "samples", "work_cell_updates", "error_mean", "error_std",
                   "fitted_rate")

# schema: key -> default (None marks optional without default); nested dicts are sections
_SCHEMA: dict[str, Any] = {
    "experiment": None,
    "field": {"kind": "shock", "left_value": 1.0, "right_value": 0.0, "center": 0.5, "half_width": 0.1,
              "hurst": None},
    "flux": {"name": "burgers", "speed": 1.0},
    "scheme": {"numerical_flux": "godunov", "reconstruction": "weno2", "cfl": 0.475, "t_end": 0.2},
    "grid": {"domain": [0.0, 1.0], "boundary": "outflow"},
    "resolutions": None,
    "samples": {"rule": "equal-to-cells", "M": None, "levels": None, "r": None, "s": None},
    "seed": 0,
    "repetitions": None,
    "workers": None,
    "output": "statsol-out",
    "save_ensembles": False,
    "diagnostics": {"quantities": None, "p": [1.0], "h": None, "h1": 0.05, "h2": 0.1,
                    "functional": "sf_integrated", "streams": "coupled",
                    "reference": {"n_cells": 4096, "M": 1024, "seed": 1}},
}


@dataclass(frozen=True)
class SamplesRule:
    rule: str = "equal-to-cells"
    M: int | None = None
    levels: int | None = None
    r: float | None = None
    s: float | None = None

    def count(self, n_cells: int) -> int:
        if self.rule == "fixed":
            return int(self.M)
        if self.rule == "equal-to-cells":
            return n_cells
        raise ValueError(f"rule {self.rule!r} gives a level plan, not a sample count")

    def plan(self, n_finest: int, length: float = 1.0) -> LevelPlan:
        delta_L = length / n_finest
        if self.rule == "mlmc-experimental":
            return allocate_experimental(self.levels, delta_L)
        if self.rule == "mlmc-theoretical":
            return allocate_theoretical(self.levels, delta_L, self.r, self.s)
        L = self.levels or 0
        M = self.count(n_finest)
        return LevelPlan(delta_L * 2**L, (M,) * (L + 1))


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    field_spec: RandomFieldSpec
    flux: FluxModel
    scheme: SchemeConfig
    resolutions: tuple[int, ...]
    samples: SamplesRule
    seed: int = 0
    repetitions: int = 1
    workers: int | None = None
    output: str = "statsol-out"
    domain: tuple[float, float] = (0.0, 1.0)
    boundary: Boundary = Boundary.OUTFLOW
    save_ensembles: bool = False
    diagnostics: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def is_shock(self) -> bool:
        return isinstance(self.field_spec, UncertainShock)

    def grid(self, n_cells: int) -> GridSpec:
        return GridSpec(n_cells, self.domain, self.boundary)

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)


# -- parsing -------------------------------------------------------------------

def _fail(path: str, msg: str):
    raise ConfigInvalidError(msg, path=path)


def _merge(raw: Any, schema: dict, path: str) -> dict:
    if not isinstance(raw, dict):
        _fail(path or "<root>", "expected a table")
    out = {}
    for key in raw:
        if key not in schema:
            _fail(f"{path}.{key}" if path else key, "unknown key")
    for key, default in schema.items():
        sub = f"{path}.{key}" if path else key
        if isinstance(default, dict):
            out[key] = _merge(raw.get(key, {}), default, sub)
        else:
            out[key] = copy.deepcopy(raw.get(key, default))
    return out


def _number(value, path, lo=None, hi=None, integer=False, open_lo=False):
    ok_types = (int,) if integer else (int, float)
    if isinstance(value, bool) or not isinstance(value, ok_types):
        _fail(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if lo is not None and (value < lo or (open_lo and value == lo)):
        _fail(path, f"must be {'>' if open_lo else '>='} {lo}")
    if hi is not None and value > hi:
        _fail(path, f"must be <= {hi}")
    return value


def _choice(value, options, path):
    if value not in options:
        _fail(path, f"expected one of {list(options)}, got {value!r}")
    return value


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config table; any unknown key or bad value raises ConfigInvalidError."""
    cfg = _merge(raw, _SCHEMA, "")
    exp = _choice(cfg["experiment"], EXPERIMENTS, "experiment")

    f = cfg["field"]
    kind = _choice(f["kind"], ("shock", "fbm"), "field.kind")
    if kind == "shock":
        if f["hurst"] is not None:
            _fail("field.hurst", "only valid for kind 'fbm'")
        for k in ("left_value", "right_value", "center"):
            _number(f[k], f"field.{k}")
        _number(f["half_width"], "field.half_width", lo=0, open_lo=True)
        spec: RandomFieldSpec = UncertainShock(f["left_value"], f["right_value"], f["center"], f["half_width"])
        f = {k: f[k] for k in ("kind", "left_value", "right_value", "center", "half_width")}
    else:
        if f["hurst"] is None:
            _fail("field.hurst", "required for kind 'fbm'")
        h = _number(f["hurst"], "field.hurst")
        if not 0 < h < 1:
            _fail("field.hurst", "must lie strictly between 0 and 1")
        extra = [k for k in ("left_value", "right_value", "center", "half_width") if k in raw.get("field", {})]
        if extra:
            _fail(f"field.{extra[0]}", "only valid for kind 'shock'")
        spec = FractionalBrownian(h)
        f = {"kind": "fbm", "hurst": h}
    cfg["field"] = f

    name = _choice(cfg["flux"]["name"], ("burgers", "cubic", "linear"), "flux.name")
    speed = _number(cfg["flux"]["speed"], "flux.speed")
    flux = FluxModel.from_name(name, speed)
    if name != "linear":
        cfg["flux"] = {"name": name}

    s = cfg["scheme"]
    scheme = SchemeConfig(
        NumericalFlux(_choice(s["numerical_flux"], ("godunov", "rusanov"), "scheme.numerical_flux")),
        Reconstruction(_choice(s["reconstruction"], ("none", "weno2"), "scheme.reconstruction")),
        _number(s["cfl"], "scheme.cfl", lo=0, hi=1, open_lo=True),
        _number(s["t_end"], "scheme.t_end", lo=0),
    )

    g = cfg["grid"]
    if not (isinstance(g["domain"], list) and len(g["domain"]) == 2):
        _fail("grid.domain", "expected [a, b]")
    a = _number(g["domain"][0], "grid.domain[0]")
    b = _number(g["domain"][1], "grid.domain[1]")
    if not b > a:
        _fail("grid.domain", "need a < b")
    boundary = Boundary(_choice(g["boundary"], ("outflow", "periodic"), "grid.boundary"))

    res = cfg["resolutions"]
    if not isinstance(res, list) or not res:
        _fail("resolutions", "expected a non-empty list of cell counts")
    for i, n in enumerate(res):
        _number(n, f"resolutions[{i}]", lo=1, integer=True)
        if n & (n - 1):
            _fail(f"resolutions[{i}]", f"{n} is not a power of two")
    if any(b2 <= a2 for a2, b2 in zip(res, res[1:])):
        _fail("resolutions", "must be strictly ascending")

    sm = cfg["samples"]
    rule = _choice(sm["rule"], SAMPLE_RULES, "samples.rule")
    if rule == "fixed":
        if sm["M"] is None:
            _fail("samples.M", "required for rule 'fixed'")
        _number(sm["M"], "samples.M", lo=1, integer=True)
    elif sm["M"] is not None:
        _fail("samples.M", "only valid for rule 'fixed'")
    if sm["levels"] is not None:
        _number(sm["levels"], "samples.levels", lo=0, integer=True)
    if rule.startswith("mlmc"):
        if sm["levels"] is None:
            _fail("samples.levels", f"required for rule {rule!r}")
        if exp not in ("mlmc", "level-variance"):
            _fail("samples.rule", f"rule {rule!r} needs an MLMC experiment")
    if rule == "mlmc-theoretical":
        for k in ("r", "s"):
            if sm[k] is None:
                _fail(f"samples.{k}", "required for rule 'mlmc-theoretical'")
            _number(sm[k], f"samples.{k}", lo=0, open_lo=True)
    elif sm["r"] is not None or sm["s"] is not None:
        _fail("samples.r" if sm["r"] is not None else "samples.s", "only valid for rule 'mlmc-theoretical'")
    samples = SamplesRule(rule, sm["M"], sm["levels"], sm["r"], sm["s"])
    if exp in ("mlmc", "level-variance"):
        L = samples.levels or 0
        for i, n in enumerate(res):
            if n >> L < 1:
                _fail(f"resolutions[{i}]", f"{n} cells cannot hold {L} coarsenings")

    seed = _number(cfg["seed"], "seed", lo=0, integer=True)
    if seed >= 2**64:
        _fail("seed", "must fit in 64 bits")
    reps = cfg["repetitions"]
    if reps is None:
        reps = 10 if exp == "wasserstein-study" else 1
    _number(reps, "repetitions", lo=1, integer=True)
    cfg["repetitions"] = reps
    if cfg["workers"] is not None:
        _number(cfg["workers"], "workers", lo=1, integer=True)
    if not isinstance(cfg["output"], str):
        _fail("output", "expected a path string")
    if not isinstance(cfg["save_ensembles"], bool):
        _fail("save_ensembles", "expected true or false")

    d = _check_diagnostics(cfg["diagnostics"], exp, spec)
    cfg["diagnostics"] = d
    if exp in ("wasserstein-study", "midpoint-study") and not isinstance(spec, UncertainShock):
        _fail("field.kind", f"{exp} compares against the exact shock law; needs kind 'shock'")

    return ExperimentConfig(exp, spec, flux, scheme, tuple(res), samples, seed, reps, cfg["workers"],
                            cfg["output"], (float(a), float(b)), boundary, cfg["save_ensembles"], d, cfg)


def _check_diagnostics(d: dict, exp: str, spec) -> dict:
    q = d["quantities"]
    if q is None:
        q = ["mean", "variance"]
    if not isinstance(q, list):
        _fail("diagnostics.quantities", "expected a list")
    for i, name in enumerate(q):
        _choice(name, QUANTITIES, f"diagnostics.quantities[{i}]")
    d["quantities"] = q
    if not isinstance(d["p"], list) or not d["p"]:
        _fail("diagnostics.p", "expected a non-empty list")
    for i, p in enumerate(d["p"]):
        _number(p, f"diagnostics.p[{i}]", lo=1)
    if d["h"] is not None:
        hs = d["h"] if isinstance(d["h"], list) else [d["h"]]
        for i, h in enumerate(hs):
            _number(h, f"diagnostics.h[{i}]", lo=0)
    for k in ("h1", "h2"):
        _number(d[k], f"diagnostics.{k}", lo=0)
    _choice(d["functional"], ("sf_integrated", "integral"), "diagnostics.functional")
    _choice(d["streams"], ("coupled", "uncoupled"), "diagnostics.streams")
    ref = d["reference"]
    _number(ref["n_cells"], "diagnostics.reference.n_cells", lo=1, integer=True)
    if ref["n_cells"] & (ref["n_cells"] - 1):
        _fail("diagnostics.reference.n_cells", "not a power of two")
    _number(ref["M"], "diagnostics.reference.M", lo=1, integer=True)
    _number(ref["seed"], "diagnostics.reference.seed", lo=0, integer=True)
    return d


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigInvalidError(f"not valid JSON in {path} ({err})", path="<root>") from err
    return parse_config(raw)


def preset_names() -> list[str]:
    root = resources.files("statsol") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    res = resources.files("statsol") / "presets" / f"{name}.json"
    if not res.is_file():
        raise ConfigInvalidError(f"unknown preset {name!r}; available: {', '.join(preset_names())}",
                                 path="preset")
    return json.loads(res.read_text())


# -- functionals -----------------------------------------------------------------

def repetition_seed(seed: int, r: int) -> int:
    """Master seed of repetition r; repetition 0 keeps the configured seed."""
    if r == 0:
        return seed
    return int(np.random.SeedSequence([seed, r]).generate_state(1, np.uint64)[0])


def default_offsets(grid: GridSpec, h_max: float = 1.0 / 16) -> list[float]:
    """Dyadic offsets 4*dx, 8*dx, ... up to h_max."""
    hs, h = [], 4 * grid.dx
    while h <= h_max * (1 + 1e-12):
        hs.append(h)
        h *= 2
    return hs


def _offsets(cfg: ExperimentConfig, grid: GridSpec) -> list[float]:
    h = cfg.diagnostics["h"]
    if h is None:
        return default_offsets(grid)
    return h if isinstance(h, list) else [h]


def _first_offset(cfg: ExperimentConfig) -> float:
    h = cfg.diagnostics["h"]
    if h is None:
        return 0.05
    return h[0] if isinstance(h, list) else h


@dataclass
class Quantity:
    """A statistic E[G(u)] with a per-member functional G and an optional exact value."""

    name: str
    G: Callable[[np.ndarray, GridSpec], np.ndarray]
    is_field: bool
    exact: Callable[[GridSpec, float], np.ndarray | float] | None = None
    combine: Callable | None = None  # builds the statistic from several expectations


def build_quantities(cfg: ExperimentConfig) -> list[Quantity]:
    d = cfg.diagnostics
    params = ShockOracleParams.from_spec(cfg.field_spec) if cfg.is_shock else None
    h0, h1, h2 = _first_offset(cfg), d["h1"], d["h2"]
    out = []
    for name in d["quantities"]:
        if name == "mean":
            out.append(Quantity("mean", lambda v, g: v, True,
                                params and (lambda g, t: exact_shock_mean_variance(g.midpoints, t, params)[0])))
        elif name == "variance":
            out.append(Quantity("variance", lambda v, g: v * v, True,
                                params and (lambda g, t: exact_shock_mean_variance(g.midpoints, t, params)[1]),
                                combine=lambda second, mean: second - mean * mean))
        elif name == "sf_local":
            for p in d["p"]:
                out.append(Quantity(
                    f"sf_local_p{_tag(p)}", lambda v, g, p=p: increment_power(v, g, p, h0), True,
                    params and (lambda g, t, p=p: exact_structure_function(g.midpoints, t, h0, p, params))))
        elif name == "sf_integrated":
            for p in d["p"]:
                out.append(Quantity(
                    f"sf_integrated_p{_tag(p)}", lambda v, g, p=p: integrated_increment(v, g, p, h0), False,
                    params and (lambda g, t, p=p: exact_structure_function_integrated(t, h0, p, params,
                                                                                      g.domain))))
        elif name == "three_point":
            out.append(Quantity(
                "three_point", lambda v, g: three_point_integrand(v, g, h1, h2), True,
                params and (lambda g, t: exact_three_point_moment(g.midpoints, t, h1, h2, params))))
    return out


def _tag(p: float) -> str:
    return str(int(p)) if float(p).is_integer() else str(p)


def evaluate(quantities: list[Quantity], expect: Callable) -> dict[str, Any]:
    """Apply ``expect`` (G -> expectation) to every quantity."""
    vals = {}
    mean = None
    for q in quantities:
        v = expect(q.G)
        if q.combine is not None:
            if mean is None:
                mean = expect(lambda v_, g_: v_)
            v = q.combine(v, mean)
        vals[q.name] = v
    return vals


def _error(est, exact, grid: GridSpec) -> float:
    if np.ndim(est) == 0:
        return float(abs(est - exact))
    return float(np.sum(np.abs(np.asarray(est) - np.asarray(exact))) * grid.dx)


def _ref_error(est, ref, grid: GridSpec, ref_grid: GridSpec) -> float:
    if np.ndim(est) == 0:
        return float(abs(est - ref))
    return float(np.sum(np.abs(prolong(np.asarray(est), grid, ref_grid) - ref)) * ref_grid.dx)


def midpoint_quadrature_ensemble(spec: UncertainShock, Q: int, grid: GridSpec, flux: FluxModel,
                                 scheme: SchemeConfig, workers: int | None = None) -> EnsembleSummary:
    """Solves from the Q midpoint nodes of the shock parameter, with equal weights."""
    if Q < 1:
        raise ValueError("Q must be at least 1")
    w = spec.half_width
    X = -w + (np.arange(Q) + 0.5) * (2 * w / Q)
    values = np.stack([shock_initial_field(x, grid, spec).values for x in X])
    values, steps = evolve_batch(values, grid, flux, scheme, workers=workers)
    ledger = WorkLedger()
    ledger.record(0, Q, cell_updates(grid, steps))
    return EnsembleSummary(grid, scheme.t_end, values, None, ledger)


# -- studies -----------------------------------------------------------------------

@dataclass
class _Row:
    quantity: str
    resolution: int
    samples: int
    work: int
    errors: list = field(default_factory=list)
    rate: float = float("nan")

    def as_tuple(self):
        e = np.array(self.errors, dtype=float)
        finite = e[np.isfinite(e)]
        mean = float(np.mean(finite)) if finite.size else float("nan")
        std = float(np.std(finite)) if finite.size > 1 else (0.0 if finite.size else float("nan"))
        return (self.quantity, self.resolution, self.samples, self.work, mean, std, self.rate)


def _fill_rates(rows: list[_Row]):
    by_q: dict[str, list[_Row]] = {}
    for r in rows:
        by_q.setdefault(r.quantity, []).append(r)
    for group in by_q.values():
        pts = []
        for r in group:
            m = r.as_tuple()[4]
            if np.isfinite(m) and m > 0:
                pts.append((1.0 / r.resolution, m))
        try:
            rate = fit_rate(pts).slope
        except DegenerateInputError:
            rate = float("nan")
        for r in group:
            r.rate = rate


class _Study:
    def __init__(self, cfg: ExperimentConfig, out: Path, workers):
        self.cfg, self.out, self.workers = cfg, out, workers
        self.files: list[str] = []
        self.rows: list[_Row] = []
        self.extra: dict = {}

    def csv(self, name: str, table):
        emit_csv(table, self.out / name)
        self.files.append(name)

    def reference(self):
        ref = self.cfg.diagnostics["reference"]
        grid = self.cfg.grid(ref["n_cells"])
        ens = reference_solution(self.cfg.field_spec, self.cfg.flux, self.cfg.scheme, grid, ref["M"], ref["seed"],
                                 workers=self.workers)
        return grid, ens


def _field_table(grid: GridSpec, vals: dict, exact: dict) -> dict:
    table = {"x": grid.midpoints}
    for name, v in vals.items():
        if np.ndim(v) == 1:
            table[name] = v
            if name in exact:
                table[f"{name}_exact"] = exact[name]
    return table


def _estimate_study(st: _Study, mlmc: bool):
    cfg = st.cfg
    quantities = build_quantities(cfg)
    t = cfg.scheme.t_end
    ref_vals = ref_grid = None
    if not cfg.is_shock:
        ref_grid, ref_ens = st.reference()
        ref_vals = evaluate(quantities, lambda G: ref_ens.expectation(G(ref_ens.values, ref_grid)))
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        exact = {q.name: q.exact(grid, t) for q in quantities if q.exact is not None}
        rows = {q.name: None for q in quantities}
        for r in range(cfg.repetitions):
            seed = repetition_seed(cfg.seed, r)
            if mlmc:
                plan = cfg.samples.plan(n, grid.length)
                run = run_mlmc(cfg.field_spec, cfg.flux, cfg.scheme, plan, seed, cfg.domain, cfg.boundary,
                               st.workers)
                vals = evaluate(quantities, run.estimate)
                work, samples = run.work.cell_updates, sum(plan.samples)
                if cfg.save_ensembles and r == 0:
                    run.save(st.out / f"mlmc_n{n}")
                    st.files.append(f"mlmc_n{n}/manifest.json")
            else:
                ens = run_mc(cfg.field_spec, cfg.flux, cfg.scheme, grid, cfg.samples.count(n), seed,
                             workers=st.workers)
                vals = evaluate(quantities, lambda G: ens.expectation(G(ens.values, grid)))
                work, samples = ens.work.cell_updates, ens.size
                if cfg.save_ensembles and r == 0:
                    write_ensemble(ens, st.out / f"ensemble_n{n}.bin")
                    st.files.append(f"ensemble_n{n}.bin")
            if r == 0:
                st.csv(f"fields_n{n}.csv", _field_table(grid, vals, exact))
            for q in quantities:
                if rows[q.name] is None:
                    rows[q.name] = _Row(q.name, n, samples, 0)
                row = rows[q.name]
                row.work += work
                if q.name in exact:
                    row.errors.append(_error(vals[q.name], exact[q.name], grid))
                elif ref_vals is not None:
                    row.errors.append(_ref_error(vals[q.name], ref_vals[q.name], grid, ref_grid))
        for row in rows.values():
            # report work of one repetition
            row.work //= cfg.repetitions
            st.rows.append(row)


def _deterministic(st: _Study):
    cfg = st.cfg
    seed = SeedSpec(cfg.seed, 0, 0)
    finals = {}
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        u0 = initial_batch(cfg.field_spec, grid, [seed])
        u, steps = evolve_batch(u0, grid, cfg.flux, cfg.scheme, workers=st.workers)
        finals[n] = (grid, u[0], 2 * n * int(steps[0]))
        st.csv(f"solution_n{n}.csv", {"x": grid.midpoints, "u0": u0[0], "u": u[0]})
    finest_grid, finest, _ = finals[cfg.resolutions[-1]]
    X = None
    if cfg.is_shock:
        X = sample_shock_parameter(cfg.field_spec, derive_stream(seed))
        st.extra["shock_parameter"] = X
    for n, (grid, u, work) in finals.items():
        row = _Row("solution", n, 1, work)
        if X is not None:
            exact = exact_shock_solution(X, grid.midpoints, cfg.scheme.t_end,
                                         ShockOracleParams.from_spec(cfg.field_spec))
            row.errors.append(_error(u, exact, grid))
        elif n != finest_grid.n_cells:
            row.errors.append(_ref_error(u, finest, grid, finest_grid))
        st.rows.append(row)


def _wasserstein(st: _Study, midpoint: bool):
    cfg = st.cfg
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        M = cfg.samples.count(n)
        row = _Row("wasserstein", n, M, 0)
        reps = 1 if midpoint else cfg.repetitions
        for r in range(reps):
            if midpoint:
                ens = midpoint_quadrature_ensemble(cfg.field_spec, M, grid, cfg.flux, cfg.scheme, st.workers)
            else:
                ens = run_mc(cfg.field_spec, cfg.flux, cfg.scheme, grid, M, repetition_seed(cfg.seed, r),
                             workers=st.workers)
            row.errors.append(wasserstein_vs_exact_shock(ens, cfg.scheme.t_end, spec=cfg.field_spec))
            row.work = ens.work.cell_updates
        st.csv(f"wasserstein_n{n}.csv", {"repetition": list(range(reps)), "error": row.errors})
        st.rows.append(row)


def _structure_functions(st: _Study):
    cfg = st.cfg
    d = cfg.diagnostics
    t = cfg.scheme.t_end
    params = ShockOracleParams.from_spec(cfg.field_spec) if cfg.is_shock else None
    scaling = {"resolution": [], "p": [], "exponent": [], "residual": []}
    for n in cfg.resolutions:
        grid = cfg.grid(n)
        hs = _offsets(cfg, grid)
        ens = run_mc(cfg.field_spec, cfg.flux, cfg.scheme, grid, cfg.samples.count(n), cfg.seed,
                     workers=st.workers)
        table = {"h": hs, "h_grid": [grid_offset(h, grid) * grid.dx for h in hs]}
        for p in d["p"]:
            name = f"S{_tag(p)}"
            S = [float(ens.expectation(integrated_increment(ens.values, grid, p, h))) for h in hs]
            table[name] = S
            row = _Row(f"sf_integrated_p{_tag(p)}", n, ens.size, ens.work.cell_updates)
            if params is not None:
                ex = [exact_structure_function_integrated(t, h, p, params, grid.domain) for h in hs]
                table[f"{name}_exact"] = ex
                row.errors.append(float(np.mean(np.abs(np.array(S) - np.array(ex)))))
            try:
                fit = fit_rate([(h, s) for h, s in zip(table["h_grid"], S) if h > 0])
                exponent, resid = fit.slope, fit.residual
            except DegenerateInputError:
                exponent = resid = float("nan")
            for k, v in (("resolution", n), ("p", p), ("exponent", exponent), ("residual", resid)):
                scaling[k].append(v)
            st.rows.append(row)
        st.csv(f"structure_functions_n{n}.csv", table)
    st.csv("scaling.csv", scaling)
    _fill_rates(st.rows)
    # the scaling exponent is the headline rate of this study
    for row, e in zip(st.rows, scaling["exponent"]):
        row.rate = e


def level_functional(cfg: ExperimentConfig):
    d = cfg.diagnostics
    if d["functional"] == "integral":
        return lambda v, g: np.sum(v, axis=-1) * g.dx
    p, h = d["p"][0], _first_offset(cfg)
    return lambda v, g: integrated_increment(v, g, p, h)


def _level_variance(st: _Study):
    cfg = st.cfg
    n0, nL = cfg.resolutions[0], cfg.resolutions[-1]
    L = int(round(math.log2(nL // n0)))
    if cfg.samples.rule in ("fixed", "equal-to-cells"):
        M = cfg.samples.count(n0)
        plan = LevelPlan((cfg.domain[1] - cfg.domain[0]) / n0, (M,) * (L + 1))
    else:
        plan = cfg.samples.plan(nL, cfg.domain[1] - cfg.domain[0])
    if len(cfg.resolutions) != L + 1:
        raise ConfigInvalidError("level-variance needs consecutive powers of two",
                                 path="resolutions")
    run = run_mlmc(cfg.field_spec, cfg.flux, cfg.scheme, plan, cfg.seed, cfg.domain, cfg.boundary, st.workers,
                   streams=cfg.diagnostics["streams"])
    V = estimate_level_variances(run, level_functional(cfg))
    work = run.work.updates_by_level
    st.csv("level_variances.csv", {"level": list(range(L + 1)), "resolution": list(cfg.resolutions),
                                   "samples": list(plan.samples), "variance": V,
                                   "work_cell_updates": [work[l] for l in range(L + 1)]})
    pts = [(1.0 / n, v) for n, v in zip(cfg.resolutions[1:], V[1:]) if v > 0]
    try:
        rate = fit_rate(pts).slope
    except DegenerateInputError:
        rate = float("nan")
    for l, n in enumerate(cfg.resolutions):
        row = _Row("level_variance", n, plan.samples[l], work[l], [float(V[l])], rate)
        st.rows.append(row)
    st.extra["level_variance_rate"] = rate


_DRIVERS = {
    "deterministic": _deterministic,
    "mc": lambda st: _estimate_study(st, mlmc=False),
    "mlmc": lambda st: _estimate_study(st, mlmc=True),
    "wasserstein-study": lambda st: _wasserstein(st, midpoint=False),
    "midpoint-study": lambda st: _wasserstein(st, midpoint=True),
    "structure-functions": _structure_functions,
    "level-variance": _level_variance,
}


def run_experiment(config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None) -> dict:
    """Execute the configured study and write its outputs.

    Returns the manifest (also written to ``manifest.json``). Exceptions from
    the study (e.g. NonFiniteError) propagate after a manifest with status
    "failed" has been written.
    """
    out = Path(out if out is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers if workers is not None else config.workers
    st = _Study(config, out, workers)
    manifest = {"version": __version__, "experiment": config.experiment, "seed": config.seed,
                "config": config.resolved(), "status": "running"}
    try:
        _DRIVERS[config.experiment](st)
        if config.experiment not in ("structure-functions", "level-variance"):
            _fill_rates(st.rows)
        st.csv("summary.csv", (list(SUMMARY_COLUMNS), [r.as_tuple() for r in st.rows]))
        manifest["status"] = "ok"
    except Exception as err:
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(err).__name__, "message": str(err),
                             "sample_index": getattr(err, "sample_index", None),
                             "level": getattr(err, "level", None)}
        raise
    finally:
        manifest["files"] = st.files
        manifest.update(st.extra)
        write_json(manifest, out / "manifest.json")
    return manifest
