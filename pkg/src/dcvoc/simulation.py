"""Fixed-step RK4 integration of controller + algebraic network closed loops."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy import optimize

from .analysis import NoEquilibriumError, solve_equilibrium
from .controllers import (
    DcvocParams,
    DcvocState,
    DegenerateCurrentError,
    DvocParams,
    DvocState,
    SAT_BAND,
    LvrtConfig,
    PllGflParams,
    PllGflState,
    clamp_current,
    dcvoc_rhs,
    dvoc_rhs,
    lvrt_refs,
    pll_gfl_rhs,
    saturate,
)
from .frame import Vec2, apparent_power
from .network import GridModel, terminal_voltage

COLUMNS = ("t", "i_alpha", "i_beta", "i_mag", "u_alpha", "u_beta", "u_mag", "p", "q",
           "omega_delta", "p_ref_active", "q_ref_active", "saturated", "in_lvrt")

DIVERGENCE_CAP = 1e3
SETTLE_WINDOW = 0.5
SETTLE_BAND = 1e-3
EQUILIBRIUM_BAND = 1e-2

ControllerParams = Union[DcvocParams, PllGflParams, DvocParams]


@dataclass
class Scenario:
    name: str
    controller: ControllerParams
    grid: GridModel
    lvrt: LvrtConfig | None = None
    t_end: float = 3.0
    dt: float = 1e-4
    initial_state: tuple | None = None
    capture_stride: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.dt <= 1e-3:
            raise ValueError("dt must lie in (0, 1e-3]")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.capture_stride < 1:
            raise ValueError("capture_stride must be at least 1")
        if self.lvrt is not None and not isinstance(self.controller, DcvocParams):
            raise ValueError("LVRT scheduling is only defined for the dCVOC controller")

    @property
    def kind(self) -> str:
        return controller_kind(self.controller)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def controller_kind(params) -> str:
    if isinstance(params, DcvocParams):
        return "dcvoc"
    if isinstance(params, PllGflParams):
        return "gfl"
    if isinstance(params, DvocParams):
        return "dvoc"
    raise TypeError(f"unsupported controller {type(params).__name__}")


@dataclass
class TimeSeries:
    columns: dict
    # grid voltage in force for the step starting at each sample (not part of the CSV)
    ug: np.ndarray
    truncated: bool = False

    def __getitem__(self, key):
        if key == "ug":
            return self.ug
        return self.columns[key]

    def __len__(self):
        return len(self.ug)

    def to_csv(self, path=None, meta: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (meta or {}).items():
            buf.write(f"# {k}: {v}\n")
        if self.truncated:
            buf.write("# truncated: diverged\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        cols = [self.columns[c] for c in COLUMNS]
        for k in range(len(self)):
            w.writerow([_fmt(col[k]) for col in cols])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        header, body = rows[0], rows[1:]
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        cols = {h: data[:, j] for j, h in enumerate(header)}
        for flag in ("saturated", "in_lvrt"):
            cols[flag] = cols[flag].astype(bool)
        return cls(cols, np.full(len(body), np.nan))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    return repr(float(x))


@dataclass
class RunOutcome:
    series: TimeSeries
    classification: str
    final_state: tuple
    settle_time: float
    equilibrium: object = None
    message: str = ""
    lvrt_steps: int = 0
    extra: dict = field(default_factory=dict)


def git_hash(text: str) -> str:
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


# ---------------------------------------------------------------------------
# Closed loops


class DcvocLoop:
    def __init__(self, params: DcvocParams, grid: GridModel, lvrt: LvrtConfig | None = None):
        self.params = params
        self.grid = grid
        self.lvrt = lvrt
        self.scale = params.omega_base
        self.refs = params.base_refs()
        self.in_lvrt = False

    def begin_step(self, x, ug):
        if self.lvrt is None:
            return
        if self.lvrt.signal == "grid":
            u_mag = ug
        else:
            u_mag = terminal_voltage((x[0], x[1]), self.grid, ug=ug).norm()
        p, q, self.in_lvrt = lvrt_refs(u_mag, self.lvrt, self.params.p_ref, self.params.q_ref,
                                       self.in_lvrt)
        self.refs = self.params.refs_for(p, q) if self.in_lvrt else self.params.base_refs()

    def deriv(self, x, ug):
        u = terminal_voltage((x[0], x[1]), self.grid, ug=ug)
        d = saturate(x, dcvoc_rhs(x, u, self.params, self.refs), self.params.i_max)
        s = self.scale
        return (s * d[0], s * d[1], s * d[2])

    def post(self, x):
        return clamp_current(x, self.params.i_max)

    def bounded(self, x) -> bool:
        return all(math.isfinite(v) and abs(v) <= DIVERGENCE_CAP for v in x)

    def observe(self, x, ug):
        i = (x[0], x[1])
        u = terminal_voltage(i, self.grid, ug=ug)
        p, q = apparent_power(u, i)
        imag = math.hypot(*i)
        return (imag, u, p, q, x[2], self.refs[0], self.refs[1],
                imag >= self.params.i_max * (1 - SAT_BAND), self.in_lvrt)

    def current(self, x):
        return (x[0], x[1])

    def equilibrium(self, ug):
        eq = solve_equilibrium(self.params, self.grid, ug=ug, refs=self.refs)
        return eq

    def distance(self, x, eq) -> float:
        return math.sqrt((x[0] - eq.i_s[0]) ** 2 + (x[1] - eq.i_s[1]) ** 2 + x[2] ** 2)

    def initial_state(self, ug):
        return DcvocState(*solve_equilibrium(self.params, self.grid, ug=ug).state())

    def wrap(self, x):
        return DcvocState(*x)


@dataclass(frozen=True)
class GflEquilibrium:
    i_s: Vec2
    theta: float
    xi_pll: float
    xi_p: float
    p_s: float
    saturated: bool


class GflLoop:
    def __init__(self, params: PllGflParams, grid: GridModel):
        self.params = params
        self.grid = grid
        self.scale = params.omega_base
        self.refs = (params.p_ref, 0.0, 0.0)
        self.in_lvrt = False

    def begin_step(self, x, ug):
        pass

    def command(self, x, ug) -> float:
        """Current magnitude closing the algebraic PI/network loop exactly."""
        pr = self.params
        c = math.cos(x[0])
        a = pr.kpp * self.grid.Rg
        b = 1.0 + pr.kpp * ug * c
        rhs = pr.kpp * pr.p_ref + pr.kpi * x[2]
        if a == 0.0:
            m = rhs / b
        else:
            disc = b * b + 4.0 * a * rhs
            if disc < 0.0:
                m = 0.0
            else:
                root = math.sqrt(disc)
                m = 2.0 * rhs / (b + root) if b + root > 0 else (-b + root) / (2.0 * a)
        return min(max(m, 0.0), pr.i_max)

    def _iu(self, x, ug):
        m = self.command(x, ug)
        i = (m * math.cos(x[0]), m * math.sin(x[0]))
        return i, terminal_voltage(i, self.grid, ug=ug)

    def deriv(self, x, ug):
        i, u = self._iu(x, ug)
        d, _ = pll_gfl_rhs(PllGflState(*x), u, self.params, self.grid.omega_g, i_command=i)
        s = self.scale
        return (s * d[0], s * d[1], s * d[2])

    def post(self, x):
        return x

    def bounded(self, x) -> bool:
        # the PLL angle is unwrapped and may slip without bound
        return math.isfinite(x[0]) and all(math.isfinite(v) and abs(v) <= DIVERGENCE_CAP for v in x[1:])

    def observe(self, x, ug):
        i, u = self._iu(x, ug)
        p, q = apparent_power(u, i)
        imag = math.hypot(*i)
        d, _ = pll_gfl_rhs(PllGflState(*x), u, self.params, self.grid.omega_g, i_command=i)
        # PLL frequency deviation from omega0, per unit
        freq = d[0] + (self.grid.omega_g - self.params.omega0) / self.params.omega_base
        return (imag, u, p, q, freq, self.params.p_ref, 0.0, imag >= self.params.i_max, False)

    def current(self, x):
        return self._iu(x, self._ug)[0]

    def equilibrium(self, ug):
        return gfl_equilibrium(self.params, self.grid, ug)

    def distance(self, x, eq) -> float:
        i, _ = self._iu(x, self._ug)
        return math.sqrt((i[0] - eq.i_s[0]) ** 2 + (i[1] - eq.i_s[1]) ** 2 + (x[1] - eq.xi_pll) ** 2)

    def initial_state(self, ug):
        eq = gfl_equilibrium(self.params, self.grid, ug, allow_saturated=True)
        return PllGflState(eq.theta, eq.xi_pll, eq.xi_p)

    def wrap(self, x):
        return PllGflState(*x)


def gfl_equilibrium(params: PllGflParams, grid: GridModel, ug: float,
                    allow_saturated: bool = False) -> GflEquilibrium:
    """Locked PLL (u_q = 0) with p = p_ref on the low-current branch.

    Falls back to the current-limited operating point when ``allow_saturated`` is set
    and p_ref cannot be delivered below i_max.
    """
    lg, rg = grid.Lg, grid.Rg
    i_lock = ug / lg if lg > 0 else math.inf

    def power(m):
        s = min(lg * m / ug, 1.0)
        return m * (ug * math.sqrt(1.0 - s * s) + rg * m)

    hi = min(i_lock, params.i_max)
    if math.isfinite(i_lock) and i_lock <= params.i_max:
        res = optimize.minimize_scalar(lambda m: -power(m), bounds=(0.0, i_lock), method="bounded",
                                       options={"xatol": 1e-12})
        hi = min(hi, res.x)
    xi_pll = -(params.omega0 - grid.omega_g) / (params.omega_base * params.kplli)
    if power(hi) >= params.p_ref:
        m = optimize.brentq(lambda m: power(m) - params.p_ref, 0.0, hi, xtol=1e-15, rtol=1e-15)
        saturated = False
        xi_p = m / params.kpi
    elif allow_saturated and ug > 0 and lg * params.i_max <= ug:
        m = params.i_max
        saturated = True
        xi_p = (m - params.kpp * (params.p_ref - power(m))) / params.kpi
    else:
        raise NoEquilibriumError(
            f"conventional GFL cannot deliver p_ref={params.p_ref} at ug={ug} within i_max={params.i_max}")
    theta = math.asin(lg * m / ug) if lg > 0 else 0.0
    i_s = Vec2(m * math.cos(theta), m * math.sin(theta))
    return GflEquilibrium(i_s, theta, xi_pll, xi_p, power(m), saturated)


class DvocLoop:
    def __init__(self, params: DvocParams, grid: GridModel):
        if grid.infinite_bus:
            raise ValueError("dVOC needs a nonzero line impedance")
        self.params = params
        self.grid = grid
        self.scale = params.omega_base
        self.refs = (params.p_ref, params.q_ref, params.u_ref)
        self.in_lvrt = False
        self._zinv = 1.0 / complex(grid.Rg, grid.Lg)

    def begin_step(self, x, ug):
        pass

    def line_current(self, x, ug) -> Vec2:
        i = (complex(x[0], x[1]) - ug) * self._zinv
        return Vec2(i.real, i.imag)

    def deriv(self, x, ug):
        d = dvoc_rhs(x, self.line_current(x, ug), self.params, self.grid.omega_g)
        s = self.scale
        return (s * d[0], s * d[1])

    def post(self, x):
        return x

    def bounded(self, x) -> bool:
        return all(math.isfinite(v) and abs(v) <= DIVERGENCE_CAP for v in x)

    def observe(self, x, ug):
        i = self.line_current(x, ug)
        p, q = apparent_power(x, i)
        d = dvoc_rhs(x, i, self.params, self.grid.omega_g)
        u2 = x[0] ** 2 + x[1] ** 2
        # angular speed of the voltage phasor, per unit
        freq = (x[0] * d[1] - x[1] * d[0]) / u2
        return (i.norm(), Vec2(*x), p, q, freq, self.params.p_ref, self.params.q_ref, False, False)

    def current(self, x):
        return self.line_current(x, self._ug)

    def equilibrium(self, ug):
        return dvoc_equilibrium(self.params, self.grid, ug)

    def distance(self, x, eq) -> float:
        return math.hypot(x[0] - eq[0], x[1] - eq[1])

    def initial_state(self, ug):
        return DvocState(*dvoc_equilibrium(self.params, self.grid, ug))

    def wrap(self, x):
        return DvocState(*x)


def dvoc_equilibrium(params: DvocParams, grid: GridModel, ug: float) -> Vec2:
    loop = DvocLoop.__new__(DvocLoop)
    loop.params, loop.grid = params, grid
    loop._zinv = 1.0 / complex(grid.Rg, grid.Lg)

    def f(v):
        return list(dvoc_rhs(v, loop.line_current(v, ug), params, grid.omega_g))

    sol, info, ier, msg = optimize.fsolve(f, [params.u_ref, 0.1], full_output=True, xtol=1e-13)
    if ier != 1 or max(abs(x) for x in f(sol)) > 1e-9:
        raise NoEquilibriumError(f"dVOC equilibrium solve failed: {msg}")
    return Vec2(float(sol[0]), float(sol[1]))


def make_loop(scenario: Scenario):
    kind = scenario.kind
    if kind == "dcvoc":
        return DcvocLoop(scenario.controller, scenario.grid, scenario.lvrt)
    if kind == "gfl":
        return GflLoop(scenario.controller, scenario.grid)
    return DvocLoop(scenario.controller, scenario.grid)


# ---------------------------------------------------------------------------
# Integration


def rk4(f, x, h):
    k1 = f(x)
    k2 = f(tuple(a + 0.5 * h * b for a, b in zip(x, k1)))
    k3 = f(tuple(a + 0.5 * h * b for a, b in zip(x, k2)))
    k4 = f(tuple(a + h * b for a, b in zip(x, k3)))
    return tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))


def snapped_schedule(grid: GridModel, dt: float):
    """Event windows as step-index ranges [k_start, k_end)."""
    return [(int(round(ev.t_start / dt)), int(round(ev.t_end / dt)), ev.ug_during) for ev in grid.events]


def ug_for_step(k: int, schedule, ug_nominal: float) -> float:
    for ks, ke, ug in schedule:
        if ks <= k < ke:
            return ug
    return ug_nominal


def step(loop, x, k: int, scenario: Scenario, schedule=None):
    """Advance one fixed step starting at step index ``k`` (t = k dt)."""
    if schedule is None:
        schedule = snapped_schedule(scenario.grid, scenario.dt)
    ug = ug_for_step(k, schedule, scenario.grid.ug_nominal)
    loop._ug = ug
    loop.begin_step(x, ug)
    x = rk4(lambda s: loop.deriv(s, ug), tuple(x), scenario.dt)
    return loop.wrap(loop.post(x))


def initial_state_from_equilibrium(scenario: Scenario):
    loop = make_loop(scenario)
    return loop.initial_state(scenario.grid.ug_nominal)


def simulate(scenario: Scenario) -> RunOutcome:
    loop = make_loop(scenario)
    grid = scenario.grid
    dt = scenario.dt
    schedule = snapped_schedule(grid, dt)
    x = scenario.initial_state
    if x is None:
        x = loop.initial_state(grid.ug_nominal)
    x = loop.wrap(x)
    n = scenario.n_steps
    stride = scenario.capture_stride
    rows = []
    ugs = []
    message = ""
    classification = None
    lvrt_steps = 0
    k = 0

    def record(k, x, ug):
        imag, u, p, q, w, pr, qr, sat, lv = loop.observe(x, ug)
        i = loop.current(x)
        rows.append((k * dt, i[0], i[1], imag, u[0], u[1], math.hypot(u[0], u[1]), p, q, w, pr, qr, sat, lv))
        ugs.append(ug)

    deriv = loop.deriv
    try:
        while True:
            ug = ug_for_step(k, schedule, grid.ug_nominal)
            loop._ug = ug
            loop.begin_step(x, ug)
            if k % stride == 0 or k == n:
                record(k, x, ug)
            if k == n:
                break
            lvrt_steps += loop.in_lvrt
            x = rk4(lambda s: deriv(s, ug), x, dt)
            x = loop.post(x)
            k += 1
            if not loop.bounded(x):
                classification = "diverged"
                message = f"state left the {DIVERGENCE_CAP:g} pu box at t={k * dt:.4f}s"
                break
    except DegenerateCurrentError as exc:
        classification = "floor_violation"
        message = f"t={k * dt:.4f}s: {exc}"
    except (OverflowError, ValueError) as exc:
        classification = "diverged"
        message = f"t={k * dt:.4f}s: {exc}"

    cols = {c: np.array([r[j] for r in rows], dtype=bool if c in ("saturated", "in_lvrt") else float)
            for j, c in enumerate(COLUMNS)}
    series = TimeSeries(cols, np.array(ugs, dtype=float), truncated=classification == "diverged")
    eq = None
    settle = float("nan")
    if classification is None:
        ug_end = ug_for_step(n, schedule, grid.ug_nominal)
        try:
            eq = loop.equilibrium(ug_end)
        except NoEquilibriumError as exc:
            message = str(exc)
        classification, settle = classify(series, eq, grid, dt, scenario)
    return RunOutcome(series, classification, tuple(x), settle, eq, message, lvrt_steps)


def _eq_current(eq):
    if eq is None:
        return None
    return getattr(eq, "i_s", None)


def classify(series: TimeSeries, eq, grid: GridModel, dt: float, scenario: Scenario):
    t = series["t"]
    win = t >= t[-1] - SETTLE_WINDOW - 1e-12
    keys = ("i_alpha", "i_beta", "u_mag", "p", "q", "omega_delta")
    means = {key: float(np.mean(series[key][win])) for key in keys}
    settled = all(np.max(np.abs(series[key][win] - means[key])) <= SETTLE_BAND for key in keys)
    at_eq = False
    if eq is not None:
        if scenario.kind == "dvoc":
            ua = float(np.mean(series["u_alpha"][win]))
            ub = float(np.mean(series["u_beta"][win]))
            at_eq = math.hypot(ua - eq[0], ub - eq[1]) <= EQUILIBRIUM_BAND
        else:
            i_s = _eq_current(eq)
            at_eq = math.hypot(means["i_alpha"] - i_s[0], means["i_beta"] - i_s[1]) <= EQUILIBRIUM_BAND
            if scenario.kind == "dcvoc":
                at_eq = at_eq and abs(means["omega_delta"]) <= EQUILIBRIUM_BAND
            else:
                at_eq = at_eq and not getattr(eq, "saturated", False)
    if settled and at_eq:
        return "converged", settle_time(series, grid, EQUILIBRIUM_BAND)
    if settled:
        return "stalled", float("nan")
    return "oscillatory", float("nan")


def settle_time(series: TimeSeries, grid: GridModel, band: float) -> float:
    """Seconds after the last grid event until |i - i_final| stays within ``band``."""
    t = series["t"]
    ia, ib = series["i_alpha"], series["i_beta"]
    dev = np.hypot(ia - ia[-1], ib - ib[-1])
    t_ref = max([0.0] + [x for x in grid.event_times() if x <= t[-1]])
    outside = np.flatnonzero(dev > band)
    t_in = t[outside[-1] + 1] if len(outside) else t[0]
    return float(max(t_in - t_ref, 0.0))


# ---------------------------------------------------------------------------
# Convergence runs used for region-of-attraction sampling


def convergence_run(job):
    """Integrate one sampled initial condition until it holds within ``tol`` of equilibrium.

    ``job`` = (index, params, grid, |i0|, angle0, w0, t_max, dt, tol, hold). For the
    GFL baseline the sample is mapped to (theta, xi_pll, xi_p) = (angle0, w0/kplli, |i0|/kpi).
    """
    idx, params, grid, mag, ang, w, t_max, dt, tol, hold = job
    scen = Scenario(f"roa{idx}", params, grid.without_events(), None, t_max, dt)
    loop = make_loop(scen)
    ug = grid.ug_nominal
    loop._ug = ug
    eq = loop.equilibrium(ug)
    if scen.kind == "dcvoc":
        x = (mag * math.cos(ang), mag * math.sin(ang), w)
    elif scen.kind == "gfl":
        x = (ang, w / params.kplli, mag / params.kpi)
    else:
        x = (mag * math.cos(ang), mag * math.sin(ang))
    need = int(round(hold / dt))
    run = 0
    n = int(round(t_max / dt))
    deriv = loop.deriv
    dist = loop.distance(x, eq)
    try:
        for k in range(n):
            x = loop.post(rk4(lambda s: deriv(s, ug), x, dt))
            dist = loop.distance(x, eq)
            if not math.isfinite(dist) or dist > DIVERGENCE_CAP:
                return (idx, mag, ang, w, False, float("nan"), float("inf"))
            run = run + 1 if dist < tol else 0
            if run >= need:
                return (idx, mag, ang, w, True, (k + 1 - need) * dt, dist)
    except DegenerateCurrentError:
        return (idx, mag, ang, w, False, float("nan"), float("nan"))
    return (idx, mag, ang, w, False, float("nan"), dist)
