"""dCVOC: current-forming virtual oscillator control, simulated against a PLL baseline."""

from .analysis import (
    EquilibriumResult,
    NoEquilibriumError,
    StabilityReport,
    check_stability_condition,
    decompose,
    lyapunov,
    lyapunov_decrease_scan,
    reduced_slow_rhs,
    roa_sample,
    solve_equilibrium,
    steady_power,
)
from .controllers import (
    DcvocParams,
    DcvocState,
    DegenerateCurrentError,
    DvocParams,
    LvrtConfig,
    PllGflParams,
    dcvoc_rhs,
    lvrt_refs,
)
from .frame import Mat2, Rot2, Vec2, apparent_power, rotate, rotated_power
from .network import GridEvent, GridModel, impedance_of, terminal_voltage, ug_at
from .simulation import Scenario, TimeSeries, simulate

__version__ = "0.1.0"
