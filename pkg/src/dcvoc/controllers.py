"""Controller vector fields.

Every ``*_rhs`` returns derivatives with respect to per-unit time
t' = omega_base * t. The simulation engine multiplies by ``omega_base``.
Frequencies (omega0, omega_g) are physical rad/s and enter only through
their per-unit difference (omega0 - omega_g) / omega_base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .frame import Vec2, apparent_power, rotated_power
from .network import OMEGA_NOMINAL

I_FLOOR = 1e-3


class DegenerateCurrentError(ArithmeticError):
    """The current magnitude fell below the floor guarding the 1/i^2 terms."""


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dCVOC


@dataclass(frozen=True)
class DcvocParams:
    kp: float = 20.0
    kplli: float = 20.0
    phi: float = math.pi / 2
    p_ref: float = 1.0
    q_ref: float = 0.0
    i_ref: float = 1.0
    i_max: float = 1.2
    omega0: float = OMEGA_NOMINAL
    omega_base: float = OMEGA_NOMINAL
    i_floor: float = I_FLOOR
    # during LVRT rescheduling, i_ref follows |p_ref + j q_ref|
    track_i_ref: bool = True

    def __post_init__(self):
        if not self.kp > 0:
            raise ConfigError("kp must be positive")
        if not self.kplli >= 0:
            raise ConfigError("kplli must be non-negative")
        if not self.i_ref > 0:
            raise ConfigError("i_ref must be positive")
        if not self.i_max > 0:
            raise ConfigError("i_max must be positive")
        if not self.omega_base > 0:
            raise ConfigError("omega_base must be positive")

    @property
    def eps(self) -> float:
        return self.kplli / self.kp**2

    def refs_for(self, p_ref: float, q_ref: float) -> tuple[float, float, float]:
        """(p_ref, q_ref, i_ref) for rescheduled power references."""
        i_ref = math.hypot(p_ref, q_ref) if self.track_i_ref else self.i_ref
        return p_ref, q_ref, i_ref

    def base_refs(self) -> tuple[float, float, float]:
        return self.p_ref, self.q_ref, self.i_ref


class DcvocState(NamedTuple):
    i_a: float
    i_b: float
    omega_delta: float

    @property
    def i(self) -> Vec2:
        return Vec2(self.i_a, self.i_b)


def rotated_refs(params, refs: tuple[float, float, float] | None = None) -> tuple[float, float]:
    p_ref, q_ref, i_ref = refs if refs is not None else params.base_refs()
    return rotated_power(p_ref, q_ref, params.phi, i_ref * i_ref)


def _check_floor(i2: float, params) -> None:
    if not i2 >= params.i_floor * params.i_floor:
        raise DegenerateCurrentError(
            f"|i| = {math.sqrt(i2) if i2 >= 0 else float('nan'):.3g} below floor {params.i_floor}")


def dcvoc_rhs(state: DcvocState, u, params: DcvocParams,
              refs: tuple[float, float, float] | None = None) -> DcvocState:
    """alpha-beta closed form: di/dt' = kp (e^{J(pi/2-phi)} u - S_ref_delta i)."""
    ia, ib, wd = state
    i2 = ia * ia + ib * ib
    _check_floor(i2, params)
    pr, qr = rotated_refs(params, refs)
    c, s = math.cos(math.pi / 2 - params.phi), math.sin(math.pi / 2 - params.phi)
    ura = c * u[0] - s * u[1]
    urb = s * u[0] + c * u[1]
    qd = qr - wd
    kp = params.kp
    dia = kp * (ura - (pr * ia - qd * ib))
    dib = kp * (urb - (qd * ia + pr * ib))
    p, q = apparent_power(u, (ia, ib))
    _, q_phi = rotated_power(p, q, params.phi, i2)
    dwd = params.kplli / kp * math.sqrt(i2) * (q_phi - qr)
    return DcvocState(dia, dib, dwd)


def omega_delta_from_xi(xi: float, params: DcvocParams, omega_g: float) -> float:
    return (params.kplli * xi + (params.omega0 - omega_g) / params.omega_base) / params.kp


def xi_from_omega_delta(omega_delta: float, params: DcvocParams, omega_g: float) -> float:
    if params.kplli == 0:
        raise ZeroDivisionError("no integrator state when kplli = 0")
    return (params.kp * omega_delta - (params.omega0 - omega_g) / params.omega_base) / params.kplli


def dcvoc_rhs_polar(delta_i: float, i_mag: float, xi: float, u, params: DcvocParams,
                    omega_g: float, refs: tuple[float, float, float] | None = None):
    """Polar form with explicit integrator xi' = i (q_phi - q_ref_phi).

    ``delta_i`` is the current angle relative to the grid voltage. Returns
    (d delta_i, d i_mag, d xi) per unit time.
    """
    if not i_mag >= params.i_floor:
        raise DegenerateCurrentError(f"|i| = {i_mag:.3g} below floor {params.i_floor}")
    pr, qr = rotated_refs(params, refs)
    i_vec = (i_mag * math.cos(delta_i), i_mag * math.sin(delta_i))
    p, q = apparent_power(u, i_vec)
    p_phi, q_phi = rotated_power(p, q, params.phi, i_mag * i_mag)
    d_theta = params.omega0 / params.omega_base + params.kp * (q_phi - qr) + params.kplli * xi
    d_delta = d_theta - omega_g / params.omega_base
    d_mag = params.kp * (p_phi - pr) * i_mag
    d_xi = i_mag * (q_phi - qr)
    return d_delta, d_mag, d_xi


def _like(obj, values):
    cls = type(obj)
    return cls(values) if cls is tuple else cls(*values)


SAT_BAND = 1e-9


def saturate(state, rhs, i_max: float):
    """Drop the outward radial part of di/dt on the current limit circle."""
    ia, ib = state[0], state[1]
    r = math.hypot(ia, ib)
    # a relative band so rounding just inside the circle still counts as on it
    if r < i_max * (1.0 - SAT_BAND):
        return rhs
    ea, eb = ia / r, ib / r
    radial = rhs[0] * ea + rhs[1] * eb
    if radial <= 0.0:
        return rhs
    return _like(rhs, (rhs[0] - radial * ea, rhs[1] - radial * eb, *rhs[2:]))


def clamp_current(state, i_max: float):
    """Project the current back onto |i| <= i_max (state-level saturation)."""
    r = math.hypot(state[0], state[1])
    if r <= i_max:
        return state
    k = i_max / r
    return _like(state, (state[0] * k, state[1] * k, *state[2:]))


# ---------------------------------------------------------------------------
# LVRT reference schedule


@dataclass(frozen=True)
class LvrtConfig:
    u_threshold: float = 0.9
    kl: float = 2.0
    p_min: float = 0.0
    i_max: float = 1.2
    hysteresis: float = 0.02
    u_floor: float = 0.1
    cap_after_scaling: bool = False
    # voltage fed to the schedule: "terminal" (|u| at the converter) or "grid" (u_g)
    signal: str = "terminal"

    def __post_init__(self):
        if self.signal not in ("terminal", "grid"):
            raise ConfigError(f"unknown LVRT signal {self.signal!r}")
        if self.i_max < self.p_min:
            raise ConfigError("LVRT i_max must be at least p_min")
        if not 0 < self.u_floor < self.u_threshold <= 1:
            raise ConfigError("need 0 < u_floor < u_threshold <= 1")
        if self.kl < 0 or self.p_min < 0 or self.hysteresis < 0:
            raise ConfigError("kl, p_min and hysteresis must be non-negative")


def lvrt_schedule(u_mag: float, cfg: LvrtConfig) -> tuple[float, float]:
    """(p_ref, q_ref) commanded while riding through at terminal voltage u_mag."""
    ks = 1.0 / max(u_mag, cfg.u_floor)
    demand = cfg.kl * max(cfg.u_threshold - u_mag, 0.0)
    cap = math.sqrt(cfg.i_max**2 - cfg.p_min**2)
    if cfg.cap_after_scaling:
        q_ref = min(ks * demand, cap)
    else:
        q_ref = ks * min(demand, cap)
    p_ref = max(ks * cfg.p_min, math.sqrt(max((ks * cfg.i_max) ** 2 - q_ref**2, 0.0)))
    return p_ref, q_ref


def lvrt_refs(u_mag: float, cfg: LvrtConfig, base_p_ref: float, base_q_ref: float,
              in_lvrt: bool) -> tuple[float, float, bool]:
    if u_mag < 0:
        raise ValueError("voltage magnitude must be non-negative")
    if in_lvrt:
        active = u_mag <= cfg.u_threshold + cfg.hysteresis
    else:
        active = u_mag <= cfg.u_threshold
    if not active:
        return base_p_ref, base_q_ref, False
    p_ref, q_ref = lvrt_schedule(u_mag, cfg)
    return p_ref, q_ref, True


# ---------------------------------------------------------------------------
# Conventional PLL-based grid-following control


@dataclass(frozen=True)
class PllGflParams:
    kpllp: float = 0.5
    kplli: float = 20.0
    kpp: float = 0.5
    kpi: float = 20.0
    p_ref: float = 1.0
    i_max: float = 1.2
    omega0: float = OMEGA_NOMINAL
    omega_base: float = OMEGA_NOMINAL
    # optional bound on the PLL frequency deviation (pu); None keeps the plain PI-PLL
    f_limit: float | None = None

    def __post_init__(self):
        if min(self.kpllp, self.kplli, self.kpp, self.kpi) <= 0:
            raise ConfigError("all GFL gains must be positive")
        if not self.i_max > 0:
            raise ConfigError("i_max must be positive")
        if self.f_limit is not None and not self.f_limit > 0:
            raise ConfigError("f_limit must be positive")


class PllGflState(NamedTuple):
    # PLL angle measured from the grid voltage angle
    theta_i: float
    xi_pll: float
    xi_p: float


def pll_uq(theta: float, u) -> float:
    return -u[0] * math.sin(theta) + u[1] * math.cos(theta)


def gfl_current_magnitude(state: PllGflState, params: PllGflParams, p: float) -> tuple[float, int]:
    """Clamped PI output; second value is +1/-1 when held at the upper/lower limit."""
    raw = params.kpp * (params.p_ref - p) + params.kpi * state.xi_p
    if raw >= params.i_max:
        return params.i_max, 1
    if raw <= 0.0:
        return 0.0, -1
    return raw, 0


def gfl_command_from_voltage(state: PllGflState, u, params: PllGflParams) -> tuple[Vec2, int]:
    """Current command consistent with a measured terminal voltage ``u``.

    With p = i u_d the PI law i = kpp (p_ref - i u_d) + kpi xi_p is solved for i.
    """
    c, s = math.cos(state.theta_i), math.sin(state.theta_i)
    u_d = u[0] * c + u[1] * s
    raw = (params.kpp * params.p_ref + params.kpi * state.xi_p) / (1.0 + params.kpp * u_d)
    if raw >= params.i_max:
        m, flag = params.i_max, 1
    elif raw <= 0.0:
        m, flag = 0.0, -1
    else:
        m, flag = raw, 0
    return Vec2(m * c, m * s), flag


def pll_gfl_rhs(state: PllGflState, u, params: PllGflParams, omega_g: float,
                i_command=None) -> tuple[PllGflState, Vec2]:
    if i_command is None:
        i_command, flag = gfl_command_from_voltage(state, u, params)
    else:
        m = math.hypot(i_command[0], i_command[1])
        flag = 1 if m >= params.i_max else (-1 if m <= 0.0 else 0)
    uq = pll_uq(state.theta_i, u)
    p, _ = apparent_power(u, i_command)
    err = params.p_ref - p
    # conditional anti-windup
    if (flag == 1 and err > 0) or (flag == -1 and err < 0):
        dxi_p = 0.0
    else:
        dxi_p = err
    dev = params.kpllp * uq + params.kplli * state.xi_pll
    dxi_pll = uq
    lim = params.f_limit
    if lim is not None and abs(dev) >= lim:
        dev = math.copysign(lim, dev)
        if dev * uq > 0:
            dxi_pll = 0.0
    d_theta = (params.omega0 - omega_g) / params.omega_base + dev
    # both integrators run on physical seconds
    w = params.omega_base
    return PllGflState(d_theta, dxi_pll / w, dxi_p / w), Vec2(*i_command)


# ---------------------------------------------------------------------------
# dVOC (grid-forming reference for the duality check)


@dataclass(frozen=True)
class DvocParams:
    kp: float = 20.0
    kv: float = 1.0
    phi: float = math.pi / 2
    p_ref: float = 1.0
    q_ref: float = 0.0
    u_ref: float = 1.0
    omega0: float = OMEGA_NOMINAL
    omega_base: float = OMEGA_NOMINAL
    u_floor: float = I_FLOOR

    def __post_init__(self):
        if not self.kv >= 0:
            raise ConfigError("kv must be non-negative")
        if not self.u_ref > 0:
            raise ConfigError("u_ref must be positive")


class DvocState(NamedTuple):
    u_a: float
    u_b: float


def dvoc_rhs(state: DvocState, i_measured, params: DvocParams, omega_g: float | None = None) -> DvocState:
    """theta_u' = w0 + kp (p_ref_phi - p_phi); u'/u = kp (q_ref_phi - q_phi) + kv (u_ref^2 - u^2)/u_ref^2."""
    ua, ub = state
    u2 = ua * ua + ub * ub
    if not u2 >= params.u_floor**2:
        raise DegenerateCurrentError("terminal voltage collapsed to zero")
    p, q = apparent_power((ua, ub), i_measured)
    p_phi, q_phi = rotated_power(p, q, params.phi, u2)
    pr, qr = rotated_power(params.p_ref, params.q_ref, params.phi, params.u_ref**2)
    if omega_g is None:
        omega_g = params.omega0
    radial = params.kp * (qr - q_phi) + params.kv * (params.u_ref**2 - u2) / params.u_ref**2
    angular = params.kp * (pr - p_phi) + (params.omega0 - omega_g) / params.omega_base
    return DvocState(radial * ua - angular * ub, radial * ub + angular * ua)


# ---------------------------------------------------------------------------
# Droop grid-forming control


@dataclass(frozen=True)
class DroopGfmParams:
    kp: float = 0.05
    kv: float = 1.0
    p_ref: float = 1.0
    q_ref: float = 0.0
    u_ref: float = 1.0
    omega0: float = 1.0

    def __post_init__(self):
        if not self.kv > 0:
            raise ConfigError("kv must be positive")


class DroopGfmState(NamedTuple):
    theta_u: float
    u: float


def droop_gfm_rhs(state: DroopGfmState, i_measured, params: DroopGfmParams) -> DroopGfmState:
    if not state.u > 0:
        raise DegenerateCurrentError("droop voltage magnitude must stay positive")
    u_vec = (state.u * math.cos(state.theta_u), state.u * math.sin(state.theta_u))
    p, q = apparent_power(u_vec, i_measured)
    return DroopGfmState(params.omega0 + params.kp * (params.p_ref - p),
                         params.kp * (params.q_ref - q) + params.kv * (params.u_ref - state.u))
