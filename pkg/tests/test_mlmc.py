import json
import warnings

import numpy as np
import pytest

from statsol import (
    FluxModel,
    FractionalBrownian,
    GridSpec,
    LevelPlan,
    SchemeConfig,
    SeedSpec,
    UncertainShock,
    allocate_experimental,
    allocate_theoretical,
    run_mc,
    run_mlmc,
)
from statsol.ensemble import increment_power, integrated_increment, three_point_integrand
from statsol.errors import InsufficientSamplesError, InvalidRateError
from statsol.fvm_core import cell_updates
from statsol.metrics import fit_rate, work_models
from statsol.mlmc import LevelDetail, MLMCSummary, coupled_sample, estimate_level_variances
from statsol.records import read_ensemble

BURGERS = FluxModel.burgers()
SHOCK = UncertainShock()

FUNCTIONALS = {
    "mean": lambda v, g: v,
    "second_moment": lambda v, g: v * v,
    "sf_local": lambda v, g: increment_power(v, g, 1.0, 0.125),
    "sf_integrated_p2": lambda v, g: integrated_increment(v, g, 2.0, 0.25),
    "three_point": lambda v, g: three_point_integrand(v, g, 0.125, 0.25),
}


# -- allocation ---------------------------------------------------------------------

def test_experimental_examples():
    assert allocate_experimental(3, 1 / 128).samples == (128, 64, 32, 16)
    assert allocate_experimental(1, 1 / 32).samples == (32, 16)
    p = allocate_experimental(0, 1 / 64)
    assert p.samples == (64,) and p.delta0 == 1 / 64


def test_theoretical_examples():
    p = allocate_theoretical(4, 1 / 256, 1.0, 0.5)
    assert p.samples == (256, 8, 4, 2, 1)
    assert allocate_theoretical(0, 1 / 16, 1.0, 0.5).samples == (16,)
    for r, s in ((0, 0.5), (1, 0), (-1, 1)):
        with pytest.raises(InvalidRateError):
            allocate_theoretical(2, 1 / 64, r, s)


def test_theoretical_plan_work_matches_single_solve_rate():
    # r = 2s with delta0 = 1/8: plan work = 2 delta_L**-2 + O(delta_L**-1), i.e. one finest solve
    ratios = []
    for L in range(2, 13):
        delta_L = 2.0**-(3 + L)
        ratios.append(work_models(allocate_theoretical(L, delta_L, 1.0, 0.5))["mlmc_plan"] * delta_L**2)
    assert all(a > b for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(2.0, rel=2e-3)


def test_plan_invariants():
    p = LevelPlan(1 / 8, (10, 5, 2))
    assert p.deltas == (1 / 8, 1 / 16, 1 / 32)
    assert [g.n_cells for g in p.grids()] == [8, 16, 32]
    with pytest.raises(ValueError):
        LevelPlan(1 / 8, (4, 0))
    with pytest.warns(UserWarning):
        LevelPlan(1 / 8, (4, 8))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LevelPlan(1 / 8, (8, 8, 4))


# -- coupling --------------------------------------------------------------------------

def test_coupled_sample_same_draw():
    fine_grid = GridSpec(64)
    fine, coarse = coupled_sample(SHOCK, BURGERS, SchemeConfig(t_end=0.0), 3, fine_grid, SeedSpec(5, 3, 2))
    jf = np.flatnonzero(fine.values == 0)[0] * fine_grid.dx
    jc = np.flatnonzero(coarse.values == 0)[0] * coarse.grid.dx
    assert abs(jf - jc) <= coarse.grid.dx
    f, c = coupled_sample(FractionalBrownian(0.5), BURGERS, SchemeConfig(t_end=0.0), 1, fine_grid, SeedSpec(5, 1, 0))
    assert c.values.tobytes() == f.values[::2].tobytes()


# -- telescoping -------------------------------------------------------------------------

@pytest.mark.parametrize("spec", [SHOCK, FractionalBrownian(0.5)], ids=["shock", "fbm"])
def test_telescoping_identity(spec):
    scheme = SchemeConfig(t_end=0.1)
    M = 24
    plan = LevelPlan(1 / 16, (M, M, M))
    ml = run_mlmc(spec, BURGERS, scheme, plan, seed=17, streams="shared")
    mc = run_mc(spec, BURGERS, scheme, GridSpec(64), M, seed=17)
    for name, G in FUNCTIONALS.items():
        est = ml.estimate(G)
        ref = mc.expectation(G(mc.values, mc.grid))
        np.testing.assert_allclose(est, ref, rtol=0, atol=1e-12, err_msg=name)


def test_level_zero_equals_mc():
    scheme = SchemeConfig(t_end=0.1)
    ml = run_mlmc(SHOCK, BURGERS, scheme, LevelPlan(1 / 64, (20,)), seed=2)
    mc = run_mc(SHOCK, BURGERS, scheme, GridSpec(64), 20, seed=2)
    assert ml.levels[0].fine.tobytes() == mc.values.tobytes()
    assert ml.estimate(FUNCTIONALS["mean"]).tobytes() == mc.expectation(mc.values).tobytes()
    assert ml.work.cell_updates == mc.work.cell_updates


def test_expectation_consistency():
    # E[MLMC] = E[G at the finest mesh]; 50 independent runs vs a large single-level reference
    scheme = SchemeConfig(t_end=0.2)
    plan = LevelPlan(1 / 16, (32, 16, 8))
    grid = GridSpec(64)

    def G(v, g):
        return np.sum(v * g.midpoints, axis=-1) * g.dx

    runs = np.array([run_mlmc(SHOCK, BURGERS, scheme, plan, seed=100 + r).estimate(G) for r in range(50)])
    ref = run_mc(SHOCK, BURGERS, scheme, grid, 20_000, seed=99)
    g_ref = G(ref.values, grid)
    se = np.sqrt(runs.var(ddof=1) / 50 + g_ref.var(ddof=1) / 20_000)
    assert abs(runs.mean() - g_ref.mean()) <= 3 * se


def test_uncoupled_streams_differ():
    scheme = SchemeConfig(t_end=0.0)
    plan = LevelPlan(1 / 16, (4, 4))
    c = run_mlmc(FractionalBrownian(0.5), BURGERS, scheme, plan, seed=1)
    u = run_mlmc(FractionalBrownian(0.5), BURGERS, scheme, plan, seed=1, streams="uncoupled")
    assert c.levels[1].coarse.tobytes() == c.levels[1].fine[:, ::2].tobytes()
    assert not np.array_equal(u.levels[1].coarse, u.levels[1].fine[:, ::2])
    with pytest.raises(ValueError):
        run_mlmc(SHOCK, BURGERS, scheme, plan, seed=1, streams="other")


# -- signed measure -----------------------------------------------------------------------

def test_mean_variance_raw_and_clamped():
    plan = LevelPlan(1 / 16, (8, 4, 2))
    ml = run_mlmc(FractionalBrownian(0.5), BURGERS, SchemeConfig(t_end=0.05), plan, seed=3)
    mean, raw, clamped = ml.mean_variance()
    np.testing.assert_array_equal(clamped.values, np.maximum(raw.values, 0))
    g = ml.finest_grid
    total = ml.estimate(lambda v, gr: np.sum(v, axis=-1) * gr.dx)
    assert np.sum(mean.values) * g.dx == pytest.approx(total, abs=1e-12)
    weights = [w for _, _, w in ml.signed_atoms()]
    assert sum(weights) == pytest.approx(1.0, abs=1e-12)
    assert min(weights) < 0


# -- level variances ----------------------------------------------------------------------

def _detail(fine_vals, coarse_vals):
    fg, cg = GridSpec(fine_vals.shape[1]), GridSpec(coarse_vals.shape[1])
    lv0 = LevelDetail(0, cg, coarse_vals, np.zeros(len(coarse_vals), int))
    lv1 = LevelDetail(1, fg, fine_vals, np.zeros(len(fine_vals), int), cg, coarse_vals, np.zeros(len(coarse_vals), int))
    return MLMCSummary(LevelPlan(1 / cg.n_cells, (len(coarse_vals), len(fine_vals))), 0.0, [lv0, lv1], 0)


def test_level_variance_examples():
    rng = np.random.default_rng(0)
    coarse = rng.normal(size=(6, 8))
    same = _detail(np.repeat(coarse, 2, axis=1), coarse)
    V = estimate_level_variances(same, lambda v, g: v.max(axis=-1))
    assert V[1] == 0.0
    # G linear, details alternate -1, +1
    fine = np.zeros((6, 16))
    c = np.zeros((6, 8))
    c[::2, 0] = 1.0
    c[1::2, 0] = -1.0
    V = estimate_level_variances(_detail(fine, c), lambda v, g: v[..., 0])
    assert V[1] == 1.0


def test_level_variance_needs_two_samples():
    ml = run_mlmc(SHOCK, BURGERS, SchemeConfig(t_end=0.0), LevelPlan(1 / 8, (4, 1)), seed=0)
    with pytest.raises(InsufficientSamplesError):
        estimate_level_variances(ml, lambda v, g: v.sum(axis=-1))


def test_coupled_variance_decays_on_fbm():
    plan = LevelPlan(1 / 16, (32,) * 5)
    G = lambda v, g: integrated_increment(v, g, 1.0, 1 / 16)  # noqa: E731
    V = estimate_level_variances(run_mlmc(FractionalBrownian(0.5), BURGERS, SchemeConfig(t_end=0.05),
                                          plan, seed=4), G)
    Vu = estimate_level_variances(run_mlmc(FractionalBrownian(0.5), BURGERS, SchemeConfig(t_end=0.05),
                                           plan, seed=4, streams="uncoupled"), G)
    deltas = plan.deltas[1:]
    assert fit_rate(list(zip(deltas, V[1:]))).slope > 1.0
    assert abs(fit_rate(list(zip(deltas, Vu[1:]))).slope) < 0.3


# -- work and serialization -------------------------------------------------------------------

def test_work_accounting():
    plan = LevelPlan(1 / 16, (12, 6, 3))
    ml = run_mlmc(SHOCK, BURGERS, SchemeConfig(t_end=0.1), plan, seed=8)
    total = 0
    for lv in ml.levels:
        level = cell_updates(lv.fine_grid, lv.fine_steps)
        if lv.coarse is not None:
            level += cell_updates(lv.coarse_grid, lv.coarse_steps)
        assert ml.work.updates_by_level[lv.level] == level
        assert ml.work.samples_by_level[lv.level] == plan.samples[lv.level]
        total += level
    assert ml.work.cell_updates == total


def test_save_manifest_and_records(tmp_path):
    plan = LevelPlan(1 / 8, (6, 3))
    ml = run_mlmc(SHOCK, BURGERS, SchemeConfig(t_end=0.1), plan, seed=9)
    path = ml.save(tmp_path, {"mass": lambda v, g: np.sum(v, axis=-1) * g.dx})
    manifest = json.loads(path.read_text())
    assert manifest["samples"] == [6, 3] and manifest["seed"] == 9
    assert len(manifest["level_variances"]["mass"]) == 2
    back = read_ensemble(tmp_path / "level1_coarse.bin")
    assert back.values.tobytes() == ml.levels[1].coarse.tobytes()


def test_worker_count_bit_stable():
    plan = LevelPlan(1 / 16, (10, 5, 3))
    a = run_mlmc(FractionalBrownian(0.3), BURGERS, SchemeConfig(t_end=0.05), plan, seed=6, workers=1)
    b = run_mlmc(FractionalBrownian(0.3), BURGERS, SchemeConfig(t_end=0.05), plan, seed=6, workers=8)
    for G in FUNCTIONALS.values():
        assert np.asarray(a.estimate(G)).tobytes() == np.asarray(b.estimate(G)).tobytes()
