import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consflux.fem import integrate_cells
from consflux.harness import (BARRIER_BLOCKS, SCENARIOS, CaseSpec, ConvergenceTable, analytic_case,
                              barrier_mask, channel_mask, compute_rates, consistency_grid, convergence_level,
                              distorted_base_grid, run_consistency, run_convergence, run_scenario,
                              scenario_setup)
from consflux.postprocess import WeightScheme


def test_analytic_origin():
    d = analytic_case(0.0, 0.0, 0.0)
    assert d["p"] == pytest.approx(1.0)
    assert d["q"] == pytest.approx(2.0)
    assert d["f"] == pytest.approx(1.0)
    np.testing.assert_allclose(d["u"], [0.0, 0.0], atol=1e-15)


def test_analytic_quarter_turn():
    d = analytic_case(np.pi / 2, 0.0, 0.0)
    assert d["p"] == pytest.approx(0.0, abs=1e-15)
    assert d["q"] == pytest.approx(-1.0)
    assert d["f"] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(d["u"], [1.0, -1.0])


def test_analytic_normal_flux():
    d = analytic_case(np.pi / 2, 0.0, 0.0, normal=(0.0, 1.0))
    assert d["un"] == pytest.approx(-1.0)


def test_manufactured_identities():
    rng = np.random.default_rng(0)
    t, x, y = rng.uniform(0, 3, (3, 1000))
    eps = 1e-5
    d = analytic_case(t, x, y)
    p = lambda t, x, y: analytic_case(t, x, y)["p"]
    dpdt = (p(t + eps, x, y) - p(t - eps, x, y)) / (2 * eps)
    lap = (p(t, x + eps, y) + p(t, x - eps, y) + p(t, x, y + eps) + p(t, x, y - eps) - 4 * p(t, x, y)) / eps**2
    np.testing.assert_allclose(dpdt - lap - d["q"], 0.0, atol=1e-4)
    # transport: dc/dt + div(u c) = f with c = sin(alpha)
    c = lambda t, x, y: analytic_case(t, x, y)["c"]
    uc = lambda t, x, y: analytic_case(t, x, y)["u"] * c(t, x, y)[..., None]
    dcdt = (c(t + eps, x, y) - c(t - eps, x, y)) / (2 * eps)
    div = ((uc(t, x + eps, y)[..., 0] - uc(t, x - eps, y)[..., 0])
           + (uc(t, x, y + eps)[..., 1] - uc(t, x, y - eps)[..., 1])) / (2 * eps)
    np.testing.assert_allclose(dcdt + div - d["f"], 0.0, atol=1e-6)


def test_rates_examples():
    assert compute_rates([0.08211, 0.02804], [1 / 4, 1 / 8])[1] == pytest.approx(1.55, abs=0.005)
    assert compute_rates([0.3, 0.3], [0.5, 0.25])[1] == 0.0
    np.testing.assert_allclose(compute_rates([0.4, 0.2, 0.1], [1, 0.5, 0.25])[1:], 1.0)
    assert np.isnan(compute_rates([1.0, 0.5], [1, 0.5])[0])


def test_rates_zero_error_nan():
    r = compute_rates([0.1, 0.0], [0.5, 0.25])
    assert np.isnan(r[1])


def test_rates_need_decreasing_h():
    with pytest.raises(ValueError):
        compute_rates([0.1, 0.05], [0.25, 0.5])


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.1, 10.0), k=st.floats(0.5, 4.0), n=st.integers(2, 6))
def test_rates_recover_power_law(c, k, n):
    h = 0.5 ** np.arange(1, n + 1)
    rates = compute_rates(c * h**k, h)
    np.testing.assert_allclose(rates[1:], k, rtol=1e-9)


def test_convergence_table_roundtrip():
    t = ConvergenceTable("x")
    t.add(0.5, energy=0.4)
    t.add(0.25, energy=0.2)
    cols = t.columns()
    assert cols["h"] == [0.5, 0.25]
    assert cols["energy_rate"][1] == pytest.approx(1.0)


def test_case_spec_defaults_and_labels():
    s = CaseSpec("barrier")
    assert (s.n, s.dt, s.T, s.k_low) == (32, 0.01, 2, 1e-3)
    assert s.label == "CG(SD,1/2)"
    assert CaseSpec("barrier", averaging="harmonic", weights="wl2").label == "PP(SD,theta,wL2)"
    assert CaseSpec("wellpair", mode="wd").mode.value == "sd"
    assert CaseSpec("convergence-smooth", mode="rd").solver.tolerance == 1e-14


@pytest.mark.parametrize("kwargs", [dict(scenario="nope"), dict(scenario="barrier", n=0),
                                    dict(scenario="barrier", dt=-1.0), dict(scenario="barrier", sigma=0.0),
                                    dict(scenario="barrier", blocks=(((0.5, 0.4), (0, 1)),)),
                                    dict(scenario="barrier", weights="h1")])
def test_case_spec_validation(kwargs):
    with pytest.raises(ValueError):
        CaseSpec(**kwargs)


def test_scenario_ids():
    assert len(SCENARIOS) == 10
    for s in SCENARIOS:
        CaseSpec(s)


def test_barrier_area_matches_blocks():
    for n in (16, 32, 64):
        mesh, flow, _ = scenario_setup(CaseSpec("barrier", n=n))
        k = flow.K.tensors[:, 0, 0]
        (x0, x1), (y0, y1) = BARRIER_BLOCKS[0]
        area = mesh.element_areas[k == 1e-3].sum()
        assert area == pytest.approx((x1 - x0) * (y1 - y0), abs=1e-12)
        assert np.array_equal(k == 1e-3, barrier_mask(mesh))
        assert set(np.unique(k)) == {1e-3, 1.0}


def test_channel_is_connected_path():
    mesh, flow, tp = scenario_setup(CaseSpec("channel", n=32, k_low=1e-5))
    mask = channel_mask(mesh)
    assert np.array_equal(flow.K.tensors[:, 0, 0] == 1.0, mask)
    assert 0.2 < mesh.element_areas[mask].sum() < 0.6


def test_wellpair_compatible_sources():
    mesh, flow, _ = scenario_setup(CaseSpec("wellpair", n=32))
    q = integrate_cells(mesh, flow.q)
    assert abs(q.sum()) <= 1e-15
    assert q.max() == pytest.approx(100 / 1024)
    assert not flow.has_dirichlet


def test_consistency_rows_strong():
    row = run_consistency(CaseSpec("consistency-uniform1d"))
    assert row.residual_U == pytest.approx(np.sqrt(0.5), abs=1e-12)
    assert row.flux_error_U == pytest.approx(np.sqrt(2) * 0.25, abs=1e-12)
    assert row.residual_V <= 1e-12 and row.flux_error_V <= 1e-12
    assert row.line_integrals_V == pytest.approx({0.0: 0.0, 0.5: 1.0, 1.0: 2.0}, abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_strong_strip_closed_form(n):
    # one-sided boundary slopes are off by h, interior averages exact
    from consflux.mesh import build_cartesian
    mesh = build_cartesian(n, 1, bc_markers={"top": "neumann", "bottom": "neumann"})
    row = run_consistency(CaseSpec("consistency-uniform1d"), mesh)
    h = 1.0 / n
    assert row.flux_error_U == pytest.approx(np.sqrt(2) * h, abs=1e-12)
    assert row.residual_U == pytest.approx(np.sqrt(2 * h), abs=1e-12)


def test_weak_uniform2d_row():
    row = run_consistency(CaseSpec("consistency-uniform2d", mode="wd"))
    assert row.residual_U == pytest.approx(0.056, abs=1e-3)
    assert row.flux_error_U == pytest.approx(0.020, abs=1e-3)
    assert row.flux_error_V <= 1e-11


def test_consistency_grids():
    assert consistency_grid("consistency-nonmatching").num_elements == 10
    assert len(consistency_grid("consistency-nonmatching").hanging_nodes) == 4
    with pytest.raises(ValueError):
        consistency_grid("barrier")


def test_distorted_family_levels():
    base = distorted_base_grid()
    assert len(base.hanging_nodes) > 0
    spec = CaseSpec("convergence-distorted-family")
    mesh0, dt0, _ = convergence_level(spec, 0)
    mesh1, dt1, _ = convergence_level(spec, 1)
    assert mesh1.num_elements == 4 * mesh0.num_elements
    assert dt0 == pytest.approx(1 / 20) and dt1 == pytest.approx(1 / 80)


def test_smooth_first_level_values():
    t = run_convergence(CaseSpec("convergence-smooth", weights="l2"), 2)
    assert t.column("energy")[0] == pytest.approx(0.0941, abs=5e-5)
    assert t.column("flux_U")[1] == pytest.approx(0.02804, abs=1e-5)
    assert t.rates("flux_U")[1] == pytest.approx(1.55, abs=0.005)
    assert t.column("conc_exact")[0] == pytest.approx(0.09502, abs=5e-5)


def test_levels_must_be_two():
    with pytest.raises(ValueError):
        run_convergence(CaseSpec("convergence-smooth"), 1)


def test_barrier_rows():
    cg = run_scenario(CaseSpec("barrier", averaging="harmonic"))
    pp = run_scenario(CaseSpec("barrier", weights="l2"))
    assert cg.c_max.max() == pytest.approx(1.505, abs=0.1)
    assert pp.overshoot.max() <= 1e-12 and abs(pp.c_max.max() - 1.0) <= 1e-10
    assert pp.times[-1] == pytest.approx(2.0)
    assert len(pp.times) == 200


def test_snapshots_recorded():
    r = run_scenario(CaseSpec("barrier", n=8, T=0.2, snapshot_times=(0.1, 0.2)))
    assert sorted(r.snapshots) == [0.1, 0.2]
    np.testing.assert_array_equal(r.snapshots[0.2], r.concentration)


def test_breakthrough_ordering():
    coarse = run_scenario(CaseSpec("wellpair", averaging="harmonic", weights=WeightScheme.INVERSE_PERMEABILITY, n=16))
    fine = run_scenario(CaseSpec("wellpair", averaging="harmonic", weights="wl2", n=32))
    assert coarse.breakthrough_time() < fine.breakthrough_time()
    assert np.all(coarse.production <= 0)
