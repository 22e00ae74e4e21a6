"""Equilibrium, stability certificate, slow/fast decomposition and Lyapunov checks for dCVOC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .controllers import DcvocParams, DcvocState, dcvoc_rhs, rotated_refs
from .frame import Mat2, Rot2, Vec2, apparent_power, mat_from_complex, rotate
from .network import GridModel, impedance_of, terminal_voltage


class NoEquilibriumError(ArithmeticError):
    """i_ref^2 (Rg + jLg) == p_ref + j q_ref: the equilibrium matrix is singular."""


def _kv_block(obj) -> str:
    lines = []
    for k, v in asdict(obj).items():
        if isinstance(v, (tuple, list)):
            v = " ".join(f"{x:.12g}" for x in v)
        elif isinstance(v, float):
            v = f"{v:.12g}"
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EquilibriumResult:
    i_s: Vec2
    omega_delta_s: float
    u_s: Vec2
    p_s: float
    q_s: float
    i_mag_s: float
    det: float
    residual: float

    def state(self) -> DcvocState:
        return DcvocState(self.i_s[0], self.i_s[1], self.omega_delta_s)

    def to_text(self) -> str:
        return _kv_block(self)


@dataclass(frozen=True)
class StabilityReport:
    equilibrium_exists: bool
    eq14_margin: float
    eq11_lhs: float
    eq11_rhs: float
    eq11_margin: float
    eps: float
    # p_ref_phi - Zg cos(pi/2 + phi_g - phi): decay rate of the boundary layer
    damping_margin: float
    condition_holds: bool

    def to_text(self) -> str:
        return _kv_block(self)


def _refs(params: DcvocParams, refs):
    return refs if refs is not None else params.base_refs()


def eq14_margin(params: DcvocParams, grid: GridModel, refs=None) -> float:
    p_ref, q_ref, i_ref = _refs(params, refs)
    return abs(complex(i_ref**2 * grid.Rg, i_ref**2 * grid.Lg) - complex(p_ref, q_ref))


def solve_equilibrium(params: DcvocParams, grid: GridModel, ug: float | None = None,
                      refs=None) -> EquilibriumResult:
    """i_s = -(Z e^{J phi_g} - S_ref)^{-1} [ug, 0], omega_delta_s = 0."""
    if ug is None:
        ug = grid.ug_nominal
    p_ref, q_ref, i_ref = _refs(params, refs)
    s_ref = mat_from_complex(complex(p_ref, q_ref) / i_ref**2)
    z_line = Mat2(grid.Rg, -grid.Lg, grid.Lg, grid.Rg)
    m = z_line - s_ref
    det = m.det()
    if eq14_margin(params, grid, refs) == 0.0 or det == 0.0:
        raise NoEquilibriumError(
            f"i_ref^2 (Rg + jLg) = p_ref + j q_ref for Rg={grid.Rg}, Lg={grid.Lg}, "
            f"p_ref={p_ref}, q_ref={q_ref}, i_ref={i_ref}: no equilibrium")
    i_s = -m.solve((ug, 0.0))
    u_s = terminal_voltage(i_s, grid, ug=ug)
    p_s, q_s = apparent_power(u_s, i_s)
    state = DcvocState(i_s[0], i_s[1], 0.0)
    if i_s.norm() >= params.i_floor:
        d = dcvoc_rhs(state, u_s, params, (p_ref, q_ref, i_ref))
        res = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
    else:
        res = 0.0 if ug == 0 else float("nan")
    return EquilibriumResult(i_s, 0.0, u_s, p_s, q_s, i_s.norm(), det, res)


def steady_power(u_mag_s: float, p_ref: float, q_ref: float, i_ref: float) -> tuple[float, float, float]:
    s2 = p_ref**2 + q_ref**2
    if not s2 > 0:
        raise ValueError("steady power needs a nonzero reference power")
    k = u_mag_s**2 * i_ref**2 / s2
    return k * p_ref, k * q_ref, u_mag_s * i_ref**2 / math.sqrt(s2)


def check_stability_condition(params: DcvocParams, grid: GridModel, refs=None) -> StabilityReport:
    p_ref, q_ref, i_ref = _refs(params, refs)
    zg, phig = impedance_of(grid)
    lhs = math.hypot(p_ref, q_ref) * math.cos(math.pi / 2 - params.phi)
    rhs = i_ref**2 * zg * math.cos(math.pi / 2 + phig - params.phi)
    m14 = eq14_margin(params, grid, refs)
    pr, _ = rotated_refs(params, (p_ref, q_ref, i_ref))
    damping = pr - zg * math.cos(math.pi / 2 + phig - params.phi)
    exists = m14 > 0.0
    eps = params.eps
    return StabilityReport(exists, m14, lhs, rhs, lhs - rhs, eps, damping,
                           bool(lhs > rhs and exists and eps > 0))


# ---------------------------------------------------------------------------
# Singular-perturbation decomposition


@dataclass(frozen=True)
class SlowFastDecomposition:
    a: float
    b: float
    tau_scale: float
    eps: float
    phi: float
    kp: float
    kplli: float


def decompose(params: DcvocParams, grid: GridModel, refs=None) -> SlowFastDecomposition:
    zg, phig = impedance_of(grid)
    pr, qr = rotated_refs(params, refs)
    ang = math.pi / 2 + phig - params.phi
    return SlowFastDecomposition(
        a=zg * math.cos(ang) - pr,
        b=zg * math.sin(ang) - qr,
        tau_scale=params.kplli / params.kp,
        eps=params.eps,
        phi=params.phi,
        kp=params.kp,
        kplli=params.kplli,
    )


def _denominator(x: float, d: SlowFastDecomposition) -> float:
    den = d.a**2 + (d.b + x) ** 2
    if den == 0.0:
        raise ZeroDivisionError("a = 0 and b + x = 0: boundary layer has no equilibrium")
    return den


def boundary_layer_current(x: float, d: SlowFastDecomposition, ug: float) -> Vec2:
    """Quasi-steady current z_0 u_{g,phi} for frozen frequency deviation x."""
    den = _denominator(x, d)
    return rotate(Rot2(math.pi / 2 - d.phi), Vec2(-d.a, d.b + x).scale(ug / den))


def quasi_steady_zs(x: float, d: SlowFastDecomposition, ug: float, i_s) -> Vec2:
    return boundary_layer_current(x, d, ug) - i_s


def dzs_dx(x: float, d: SlowFastDecomposition, ug: float) -> Vec2:
    """Analytic x-derivative of the quasi-steady current."""
    den = _denominator(x, d)
    bx = d.b + x
    return rotate(Rot2(math.pi / 2 - d.phi), Vec2(2 * d.a * bx, d.a**2 - bx**2).scale(ug / den**2))


def slow_rhs(x: float, z, d: SlowFastDecomposition, ug: float, i_s) -> float:
    """dx/dtau = |i| (Im(u_{g,phi} conj(i)) / |i|^2 + b) with i = z + i_s."""
    i = Vec2(z[0] + i_s[0], z[1] + i_s[1])
    ugp = rotate(Rot2(math.pi / 2 - d.phi), (ug, 0.0))
    im = ugp[1] * i[0] - ugp[0] * i[1]
    n = i.norm()
    return n * (im / (n * n) + d.b)


def reduced_slow_rhs(x: float, d: SlowFastDecomposition, ug: float) -> float:
    """f_s(x) = -|z_0 u_{g,phi}| x = -ug x / sqrt(a^2 + (b + x)^2)."""
    return -ug * x / math.sqrt(_denominator(x, d))


def lyapunov(state, eq: EquilibriumResult, d: SlowFastDecomposition, ug: float) -> tuple[float, float, float]:
    x = state[2] - eq.omega_delta_s
    z = Vec2(state[0] - eq.i_s[0], state[1] - eq.i_s[1])
    y = z - quasi_steady_zs(x, d, ug, eq.i_s)
    w = d.kp / (2.0 * d.kplli)
    v1 = w * x * x
    v2 = w * d.eps * y.dot(y)
    return v1, v2, v1 + v2


@dataclass
class LyapunovScan:
    n_checked: int
    n_decreasing: int
    n_violations: int
    max_increase: float
    first_violation_t: float
    v_final: float
    segments: int
    skipped: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.n_violations == 0

    @property
    def decrease_fraction(self) -> float:
        return self.n_decreasing / self.n_checked if self.n_checked else 1.0


def lyapunov_series(series, params: DcvocParams, grid: GridModel, ug_series=None):
    """V along a captured dCVOC series, relative to the equilibrium of the active references.

    Returns (V, segment_id, admissible) arrays; samples where the equilibrium changes
    from the previous sample start a new segment. A segment is admissible when the
    certificate holds for its references and |i_s| stays within i_max.
    """
    t = series["t"]
    n = len(t)
    if ug_series is None:
        ug_series = series["ug"]
    v = np.empty(n)
    seg = np.empty(n, dtype=int)
    ok = np.empty(n, dtype=bool)
    key = None
    sid = -1
    cache = None
    for k in range(n):
        refs = params.refs_for(float(series["p_ref_active"][k]), float(series["q_ref_active"][k]))
        if not series["in_lvrt"][k]:
            refs = params.base_refs()
        kk = (refs, float(ug_series[k]))
        if kk != key:
            key = kk
            sid += 1
            eq = solve_equilibrium(params, grid, ug=kk[1], refs=refs)
            dec = decompose(params, grid, refs)
            good = (check_stability_condition(params, grid, refs).condition_holds
                    and eq.i_mag_s <= params.i_max)
            cache = (eq, dec, kk[1], good)
        eq, dec, ug, good = cache
        st = (series["i_alpha"][k], series["i_beta"][k], series["omega_delta"][k])
        v[k] = lyapunov(st, eq, dec, ug)[2]
        seg[k] = sid
        ok[k] = good
    return v, seg, ok


def lyapunov_decrease_scan(series, params: DcvocParams, grid: GridModel, tol: float = 1e-8,
                           skip_lvrt: bool = False, admissible_only: bool = True) -> LyapunovScan:
    """Check V is non-increasing between consecutive samples sharing an equilibrium.

    ``admissible_only`` skips segments whose equilibrium is not certified or lies
    outside the current limit (V has no reachable minimum there). ``skip_lvrt``
    additionally skips every sample taken under rescheduled LVRT references.
    """
    t = np.asarray(series["t"])
    if len(t) < 2:
        raise ValueError("trajectory needs at least two samples")
    v, seg, ok = lyapunov_series(series, params, grid)
    lv = np.asarray(series["in_lvrt"], dtype=bool)
    dv = np.diff(v)
    same = seg[1:] == seg[:-1]
    if admissible_only:
        same &= ok[1:]
    if skip_lvrt:
        same &= ~lv[1:] & ~lv[:-1]
    checked = dv[same]
    viol = np.flatnonzero(same & (dv > tol))
    return LyapunovScan(
        n_checked=int(same.sum()),
        n_decreasing=int((checked < 0).sum()),
        n_violations=int(len(viol)),
        max_increase=float(checked.max()) if len(checked) else 0.0,
        first_violation_t=float(t[viol[0] + 1]) if len(viol) else float("nan"),
        v_final=float(v[-1]),
        segments=int(seg[-1] + 1),
        skipped=int((~same).sum()),
        tolerance=tol,
    )


# ---------------------------------------------------------------------------
# Empirical region of attraction


@dataclass
class RoaResult:
    fraction_converged: float
    outcomes: list  # (index, |i0|, delta0, omega0, converged, time_to_converge, final_distance)
    worst_index: int


def roa_initial_states(n: int, radius: float, seed: int, i_floor: float):
    rng = np.random.default_rng(seed)
    mag = rng.uniform(i_floor, radius, n)
    ang = rng.uniform(-math.pi, math.pi, n)
    w = rng.uniform(-radius, radius, n)
    return mag, ang, w


def roa_sample(params, grid: GridModel, n: int, radius: float, seed: int = 0,
               t_max: float = 10.0, dt: float = 1e-4, tol: float = 1e-4, hold: float = 0.1,
               workers: int = 1) -> RoaResult:
    """Fraction of random initial states that reach the equilibrium within ``t_max``."""
    from .simulation import convergence_run  # local import: simulation depends on analysis

    if n < 1:
        raise ValueError("n must be at least 1")
    floor = getattr(params, "i_floor", 1e-3)
    mag, ang, w = roa_initial_states(n, radius, seed, floor)
    jobs = [(k, params, grid, float(mag[k]), float(ang[k]), float(w[k]), t_max, dt, tol, hold)
            for k in range(n)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(convergence_run, jobs))
    else:
        rows = [convergence_run(j) for j in jobs]
    conv = [r[4] for r in rows]
    worst = max(range(n), key=lambda k: (not rows[k][4], rows[k][5] if rows[k][4] else rows[k][6]))
    return RoaResult(sum(conv) / n, rows, worst)
