import math

import numpy as np
import pytest

from conftest import case_grid
from dcvoc.analysis import roa_sample, solve_equilibrium
from dcvoc.controllers import (
    DcvocParams,
    DvocParams,
    LvrtConfig,
    PllGflParams,
    dcvoc_rhs,
    omega_delta_from_xi,
)
from dcvoc.network import OMEGA_NOMINAL, GridEvent, GridModel, terminal_voltage
from dcvoc.simulation import (
    COLUMNS,
    Scenario,
    TimeSeries,
    gfl_equilibrium,
    initial_state_from_equilibrium,
    make_loop,
    rk4,
    simulate,
    snapped_schedule,
    step,
    ug_for_step,
)


def test_step_fixed_point_at_equilibrium():
    sc = Scenario("eq", DcvocParams(), case_grid(1))
    x0 = initial_state_from_equilibrium(sc)
    x1 = step(make_loop(sc), x0, 0, sc)
    assert max(abs(a - b) for a, b in zip(x0, x1)) < 1e-12


def test_case1_prefault_holds_still():
    sc = Scenario("hold", DcvocParams(), case_grid(1), None, 1.0, 1e-4, capture_stride=100)
    out = simulate(sc)
    x0 = initial_state_from_equilibrium(sc)
    assert max(abs(a - b) for a, b in zip(out.final_state, x0)) < 1e-6
    assert out.classification == "converged"


def test_infinite_bus_initial_state():
    x = initial_state_from_equilibrium(Scenario("ib", DcvocParams(), GridModel()))
    assert x == pytest.approx((1.0, 0.0, 0.0))


def test_event_snapping():
    g = GridModel(1.0, 0.05, 0.65, events=(GridEvent(1.00004, 2.0, 0.2),))
    sched = snapped_schedule(g, 1e-4)
    assert sched == [(10000, 20000, 0.2)]
    assert ug_for_step(9999, sched, 1.0) == 1.0
    assert ug_for_step(10000, sched, 1.0) == 0.2
    assert ug_for_step(20000, sched, 1.0) == 1.0


def test_step_across_event_uses_post_event_voltage():
    g = case_grid(1, sag=0.2)
    p = DcvocParams()
    sc = Scenario("ev", p, g, None, 3.0, 1e-4)
    loop = make_loop(sc)
    x0 = initial_state_from_equilibrium(sc)
    x1 = step(loop, x0, 10000, sc)
    # oracle: a plain RK4 step with u_g held at the sag value for every stage
    f = lambda s: tuple(p.omega_base * v for v in dcvoc_rhs(s, terminal_voltage(s[:2], g, ug=0.2), p))
    assert x1 == pytest.approx(rk4(f, tuple(x0), 1e-4), abs=1e-15)


def test_gfl_case2_initial_power():
    sc = Scenario("g", PllGflParams(), case_grid(2))
    out = simulate(Scenario("g", PllGflParams(), case_grid(2), None, 0.01, 1e-4, capture_stride=1))
    assert out.series["p"][0] == pytest.approx(1.0, abs=1e-6)
    assert initial_state_from_equilibrium(sc) is not None


def test_gfl_case2_settles_to_power_reference():
    p = PllGflParams()
    g = case_grid(2)
    eq = gfl_equilibrium(p, g, 1.0)
    # oracle: power flow along the locked angle gives p(i_s) = 1
    m = eq.i_s.norm()
    assert m * (math.sqrt(1 - (0.25 * m) ** 2) + 0.2 * m) == pytest.approx(1.0, abs=1e-12)
    sc = Scenario("g", p, g, None, 0.5, 1e-4, initial_state=(eq.theta + 0.1, eq.xi_pll, 0.8 * eq.xi_p))
    out = simulate(sc)
    assert abs(out.series["p"][-1] - 1.0) < 1e-3


def test_gfl_case1_has_no_operating_point():
    from dcvoc.analysis import NoEquilibriumError
    with pytest.raises(NoEquilibriumError):
        gfl_equilibrium(PllGflParams(), case_grid(1), 1.0)
    assert gfl_equilibrium(PllGflParams(), case_grid(1), 1.0, allow_saturated=True).saturated


def test_dcvoc_case12_converges_and_gfl_does_not():
    g = case_grid(1, sag=0.2)
    lv = LvrtConfig(p_min=0.5, signal="grid")
    dc = simulate(Scenario("d", DcvocParams(), g, lv))
    assert dc.classification == "converged"
    eq = solve_equilibrium(DcvocParams(), g)
    assert dc.series["p"][-1] == pytest.approx(eq.p_s, abs=1e-6)
    gfl = simulate(Scenario("g", PllGflParams(f_limit=0.1), g))
    assert gfl.classification != "converged"


def test_uncertified_config_is_not_converged():
    p = DcvocParams(p_ref=0.1)
    g = case_grid(2)
    eq = solve_equilibrium(p, g)
    out = simulate(Scenario("u", p, g, None, 2.0, 1e-4, initial_state=(1.01 * eq.i_s[0], eq.i_s[1], 0.0)))
    assert out.classification != "converged"


def test_divergence_cap():
    out = simulate(Scenario("d", DcvocParams(i_max=1e6), case_grid(2), None, 1.0, 1e-4,
                            initial_state=(5.0, 0.0, 50.0)))
    assert out.classification == "diverged" and out.series.truncated
    assert "# truncated: diverged" in out.series.to_csv()


def test_saturation_containment():
    g = case_grid(1, sag=0.5)
    out = simulate(Scenario("s", DcvocParams(i_max=0.9), g, LvrtConfig(i_max=0.9, p_min=0.5, signal="grid"),
                            capture_stride=1))
    s = out.series
    assert s["saturated"].any()
    assert np.max(s["i_mag"]) <= 0.9 + 1e-6


def test_grid_frequency_tracking():
    p = DcvocParams()
    wg = OMEGA_NOMINAL + 0.1
    g = GridModel(1.0, 0.05, 0.65, omega_g=wg)
    eq = solve_equilibrium(p, g)
    # integrator starts empty, so omega_delta starts at the frequency offset
    x0 = (eq.i_s[0], eq.i_s[1], omega_delta_from_xi(0.0, p, wg))
    out = simulate(Scenario("f", p, g, None, 3.0, 1e-4, initial_state=x0))
    x = out.final_state
    d = dcvoc_rhs(x, terminal_voltage(x[:2], g), p)
    # angular speed of i in the grid frame, back in rad/s
    rel = (x[0] * d[1] - x[1] * d[0]) / (x[0] ** 2 + x[1] ** 2) * p.omega_base
    assert abs(rel) < 1e-4


def test_determinism():
    sc = Scenario("det", DcvocParams(), case_grid(1, sag=0.2), LvrtConfig(p_min=0.5, signal="grid"))
    a = simulate(sc).series.to_csv(meta={"seed": 0})
    b = simulate(sc).series.to_csv(meta={"seed": 0})
    assert a == b


def test_roa_worker_count_does_not_matter():
    p, g = DcvocParams(), case_grid(1)
    a = roa_sample(p, g, 2, 2.0, seed=3, t_max=1.0)
    b = roa_sample(p, g, 2, 2.0, seed=3, t_max=1.0, workers=2)
    assert a.outcomes == b.outcomes


def test_csv_round_trip(tmp_path):
    out = simulate(Scenario("c", DcvocParams(), case_grid(2), None, 0.05, 1e-4))
    path = tmp_path / "c.csv"
    text = out.series.to_csv(path, {"scenario": "c", "dt": "0.0001"})
    lines = text.splitlines()
    assert lines[0] == "# scenario: c" and lines[2] == ",".join(COLUMNS)
    back = TimeSeries.from_csv(path)
    for c in COLUMNS:
        assert np.array_equal(back[c], out.series[c])
    assert np.all(np.diff(back["t"]) > 0)


def test_dvoc_demo_converges():
    g = GridModel(1.0, 0.2, 0.25, events=(GridEvent(1.0, 2.0, 0.8),))
    out = simulate(Scenario("v", DvocParams(), g))
    assert out.classification == "converged"


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=2e-3), dict(t_end=0.0), dict(capture_stride=0)])
def test_scenario_validation(kw):
    with pytest.raises(ValueError):
        Scenario("x", DcvocParams(), GridModel(), **kw)


def test_lvrt_only_for_dcvoc():
    with pytest.raises(ValueError):
        Scenario("x", PllGflParams(), GridModel(), LvrtConfig())
