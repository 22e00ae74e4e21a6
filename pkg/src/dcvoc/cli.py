"""Batch front end: run / certify / campaign / roa.

Exit codes: 0 ran, 2 stability certificate failed, 1 operational error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import NoEquilibriumError, check_stability_condition, roa_sample
from .config import ConfigParseError, bundled_configs, dump_scenario, load_scenario
from .controllers import ConfigError, DcvocParams
from .simulation import Scenario, git_hash, simulate

log = logging.getLogger("dcvoc")

WORKERS_ENV = "DCVOC_WORKERS"
PLOT_EVERY = 10


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def scenario_meta(sc: Scenario) -> dict:
    return {"scenario": sc.name, "dt": repr(sc.dt), "seed": sc.seed,
            "config_hash": git_hash(dump_scenario(sc))}


def _f(x) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.10g}"


def lvrt_metrics(outcome, window: float = 0.1) -> dict:
    """Reactive tracking in the last ``window`` seconds of each LVRT interval.

    Target is the scheduled q_ref scaled by u^2, the steady-state relation between
    reference and delivered power.
    """
    s = outcome.series
    lv = np.asarray(s["in_lvrt"], dtype=bool)
    if not lv.any():
        return {}
    t = s["t"]
    idx = np.flatnonzero(lv)
    t_end = t[idx[-1]]
    win = lv & (t >= t_end - window)
    target = s["u_mag"][win] ** 2 * s["q_ref_active"][win]
    q = s["q"][win]
    rel = float(np.max(np.abs(q - target) / np.maximum(np.abs(target), 1e-12)))
    return {"lvrt_time": float(lv.sum() * (t[1] - t[0])), "lvrt_q_mean": float(np.mean(q)),
            "lvrt_q_target": float(np.mean(target)), "lvrt_q_rel_error": rel}


def summary_report(sc: Scenario, outcome) -> str:
    lines = [f"scenario = {sc.name}", f"controller = {sc.kind}",
             f"classification = {outcome.classification}",
             f"settle_time = {_f(outcome.settle_time)}"]
    if outcome.message:
        lines.append(f"message = {outcome.message}")
    s = outcome.series
    lines += [f"p_end = {_f(float(s['p'][-1]))}", f"q_end = {_f(float(s['q'][-1]))}",
              f"u_end = {_f(float(s['u_mag'][-1]))}", f"i_end = {_f(float(s['i_mag'][-1]))}",
              f"i_peak = {_f(float(np.max(s['i_mag'])))}"]
    if isinstance(sc.controller, DcvocParams):
        rep = check_stability_condition(sc.controller, sc.grid)
        lines.append("[certificate]")
        lines.append(rep.to_text().rstrip())
    eq = outcome.equilibrium
    if eq is not None and hasattr(eq, "to_text"):
        lines.append("[equilibrium]")
        lines.append(eq.to_text().rstrip())
    m = lvrt_metrics(outcome)
    if m:
        lines.append("[lvrt]")
        lines += [f"{k} = {_f(v)}" for k, v in m.items()]
    return "\n".join(lines) + "\n"


def plotdata(outcome) -> str:
    s = outcome.series
    buf = io.StringIO()
    buf.write("# t p q u_mag\n")
    for k in range(0, len(s), PLOT_EVERY):
        buf.write(f"{s['t'][k]:.6g} {s['p'][k]:.8g} {s['q'][k]:.8g} {s['u_mag'][k]:.8g}\n")
    return buf.getvalue()


def run_scenario(sc: Scenario, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    log.debug("%s: %d steps of %g s", sc.name, sc.n_steps, sc.dt)
    outcome = simulate(sc)
    outcome.series.to_csv(out_dir / f"{sc.name}.csv", scenario_meta(sc))
    (out_dir / f"{sc.name}.report.txt").write_text(summary_report(sc, outcome))
    (out_dir / f"{sc.name}.plotdata").write_text(plotdata(outcome))
    return outcome


def _check_equilibrium(sc: Scenario):
    # fail fast with a clear message rather than deep inside the integrator
    if isinstance(sc.controller, DcvocParams):
        rep = check_stability_condition(sc.controller, sc.grid)
        if not rep.equilibrium_exists:
            raise NoEquilibriumError(
                f"{sc.name}: i_ref^2 (Rg + jLg) equals p_ref + j q_ref, no equilibrium exists")


def cmd_run(args) -> int:
    sc = load_scenario(args.config)
    _check_equilibrium(sc)
    outcome = run_scenario(sc, Path(args.out))
    print(f"{sc.name}: {outcome.classification}")
    return 0


def cmd_certify(args) -> int:
    sc = load_scenario(args.config)
    if not isinstance(sc.controller, DcvocParams):
        raise ConfigError("certify applies to dcvoc controllers only")
    rep = check_stability_condition(sc.controller, sc.grid)
    sys.stdout.write(rep.to_text())
    return 0 if rep.condition_holds else 2


def _campaign_job(path: str):
    sc = load_scenario(path)
    out = simulate(sc)
    return sc, out


def cmd_campaign(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [str(p) for p in bundled_configs()]
    scenarios = [load_scenario(p) for p in paths]
    for sc in scenarios:
        if isinstance(sc.controller, DcvocParams):
            rep = check_stability_condition(sc.controller, sc.grid)
            if not rep.condition_holds:
                raise ConfigError(f"bundled config {sc.name} fails its stability certificate")
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_campaign_job, paths))
    else:
        results = [_campaign_job(p) for p in paths]
    rows = []
    for sc, outcome in results:
        outcome.series.to_csv(out_dir / f"{sc.name}.csv", scenario_meta(sc))
        (out_dir / f"{sc.name}.report.txt").write_text(summary_report(sc, outcome))
        (out_dir / f"{sc.name}.plotdata").write_text(plotdata(outcome))
        rows.append((sc.name, sc.kind, outcome.classification, outcome.settle_time,
                     float(outcome.series["p"][-1]), float(outcome.series["q"][-1])))
    header = ("scenario", "controller", "classification", "settle_time", "p_end", "q_end")
    with open(out_dir / "campaign.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0], r[1], r[2], _f(r[3]), _f(r[4]), _f(r[5])])
    text = [f"{'scenario':<14} {'controller':<6} {'classification':<16} {'settle_s':>9} {'p_end':>8} {'q_end':>8}"]
    for r in rows:
        text.append(f"{r[0]:<14} {r[1]:<6} {r[2]:<16} {_f(r[3]):>9} {r[4]:>8.4f} {r[5]:>8.4f}")
    body = "\n".join(text) + "\n"
    (out_dir / "campaign.txt").write_text(body)
    sys.stdout.write(body)
    return 0


def cmd_roa(args) -> int:
    if args.n < 1:
        print("usage: roa needs -n >= 1", file=sys.stderr)
        return 1
    sc = load_scenario(args.config)
    try:
        res = roa_sample(sc.controller, sc.grid, args.n, args.radius, args.seed, workers=worker_count())
    except NoEquilibriumError as exc:
        print(f"{sc.name}: no equilibrium to converge to ({exc}); fraction_converged = 0.00")
        return 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{sc.name}.roa.csv", "w", newline="") as fh:
        fh.write(f"# scenario: {sc.name}\n# n: {args.n}\n# radius: {args.radius!r}\n# seed: {args.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "i0_mag", "delta0", "omega0", "converged", "t_converge", "final_distance"))
        for r in res.outcomes:
            w.writerow((r[0], repr(r[1]), repr(r[2]), repr(r[3]), int(r[4]), _f(r[5]), _f(r[6])))
    print(f"fraction_converged = {res.fraction_converged:.2f}")
    print(f"worst_trajectory = {res.worst_index}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcvoc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="simulate one scenario config")
    p.add_argument("config")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="check the global stability condition")
    p.add_argument("config")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("campaign", help="run all bundled scenarios")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("roa", help="Monte-Carlo region-of-attraction estimate")
    p.add_argument("config")
    p.add_argument("-n", type=int, required=True, help="number of samples")
    p.add_argument("-r", "--radius", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default=".", help="directory for the per-sample CSV")
    p.set_defaults(func=cmd_roa)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigParseError, ConfigError, NoEquilibriumError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
