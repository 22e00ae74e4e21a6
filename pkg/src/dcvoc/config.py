"""Strict TOML scenario configs: [controller], [grid], [events], [lvrt], [sim]."""

from __future__ import annotations

import re
from dataclasses import fields
from pathlib import Path

import tomli
import tomli_w

from .controllers import ConfigError, DcvocParams, DvocParams, LvrtConfig, PllGflParams
from .network import GridEvent, GridModel
from .simulation import Scenario, controller_kind

SECTIONS = ("controller", "grid", "events", "lvrt", "sim")
CONTROLLERS = {"dcvoc": DcvocParams, "gfl": PllGflParams, "dvoc": DvocParams}
GRID_KEYS = ("ug_nominal", "Rg", "Lg", "omega_g")
EVENT_KEYS = ("t_start", "t_end", "ug_during")
SIM_KEYS = ("name", "t_end", "dt", "capture_stride", "seed")

BUNDLED_DIR = Path(__file__).with_name("scenarios")


class ConfigParseError(ConfigError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """Best-effort line number of ``key`` inside ``[section]`` (or of the header)."""
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[\[?\s*([A-Za-z0-9_.]+)\s*\]\]?", line)
        if m:
            current = m.group(1).split(".")[0]
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", line):
            return n
    return None


def _field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _check_keys(table: dict, allowed, section: str, text: str):
    for k in table:
        if k not in allowed:
            raise ConfigParseError(f"unknown key {k!r} in [{section}]", _line_of(text, section, k))


def _number(v, key, section, text):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigParseError(f"{section}.{key} must be a number", _line_of(text, section, key))
    return float(v)


def _build(cls, table: dict, section: str, text: str, skip=()):
    kw = {}
    types = {f.name: f.type for f in fields(cls)}
    for k, v in table.items():
        if k in skip:
            continue
        t = str(types[k])
        if "bool" in t:
            if not isinstance(v, bool):
                raise ConfigParseError(f"{section}.{k} must be true or false", _line_of(text, section, k))
            kw[k] = v
        elif t.startswith("str"):
            if not isinstance(v, str):
                raise ConfigParseError(f"{section}.{k} must be a string", _line_of(text, section, k))
            kw[k] = v
        else:
            kw[k] = _number(v, k, section, text)
    try:
        return cls(**kw)
    except ConfigError as exc:
        raise ConfigParseError(f"[{section}] {exc}", _line_of(text, section)) from None


def parse_scenario(text: str, default_name: str = "scenario") -> Scenario:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigParseError(f"malformed config: {exc}", int(m.group(1)) if m else None) from None
    for sec in doc:
        if sec not in SECTIONS:
            raise ConfigParseError(f"unknown section [{sec}]", _line_of(text, sec))
        if not isinstance(doc[sec], dict):
            raise ConfigParseError(f"{sec} must be a table", _line_of(text, sec))
    if "controller" not in doc:
        raise ConfigParseError("missing [controller] section")

    ctl = dict(doc["controller"])
    kind = ctl.get("kind")
    if kind not in CONTROLLERS:
        raise ConfigParseError(f"controller.kind must be one of {sorted(CONTROLLERS)}",
                               _line_of(text, "controller", "kind"))
    cls = CONTROLLERS[kind]
    _check_keys(ctl, ["kind"] + _field_names(cls), "controller", text)
    controller = _build(cls, ctl, "controller", text, skip=("kind",))

    grid_tab = doc.get("grid", {})
    _check_keys(grid_tab, GRID_KEYS, "grid", text)
    ev_tab = doc.get("events", {})
    _check_keys(ev_tab, ("sag",), "events", text)
    events = []
    for ev in ev_tab.get("sag", []):
        if not isinstance(ev, dict):
            raise ConfigParseError("events.sag entries must be tables", _line_of(text, "events"))
        _check_keys(ev, EVENT_KEYS, "events", text)
        missing = [k for k in EVENT_KEYS if k not in ev]
        if missing:
            raise ConfigParseError(f"event missing {missing}", _line_of(text, "events"))
        try:
            events.append(GridEvent(*(_number(ev[k], k, "events", text) for k in EVENT_KEYS)))
        except ValueError as exc:
            raise ConfigParseError(str(exc), _line_of(text, "events")) from None
    try:
        grid = GridModel(**{k: _number(v, k, "grid", text) for k, v in grid_tab.items()},
                         events=tuple(events))
    except ValueError as exc:
        raise ConfigParseError(f"[grid] {exc}", _line_of(text, "grid")) from None

    lvrt = None
    if "lvrt" in doc:
        lv = dict(doc["lvrt"])
        _check_keys(lv, ["enabled"] + _field_names(LvrtConfig), "lvrt", text)
        enabled = lv.pop("enabled", True)
        if not isinstance(enabled, bool):
            raise ConfigParseError("lvrt.enabled must be true or false", _line_of(text, "lvrt", "enabled"))
        if enabled:
            lvrt = _build(LvrtConfig, lv, "lvrt", text)

    sim = doc.get("sim", {})
    _check_keys(sim, SIM_KEYS, "sim", text)
    name = sim.get("name", default_name)
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise ConfigParseError("sim.name must be a plain file-name string", _line_of(text, "sim", "name"))
    kw = {}
    for k in ("t_end", "dt"):
        if k in sim:
            kw[k] = _number(sim[k], k, "sim", text)
    for k in ("capture_stride", "seed"):
        if k in sim:
            if isinstance(sim[k], bool) or not isinstance(sim[k], int):
                raise ConfigParseError(f"sim.{k} must be an integer", _line_of(text, "sim", k))
            kw[k] = sim[k]
    try:
        return Scenario(name, controller, grid, lvrt, **kw)
    except ValueError as exc:
        raise ConfigParseError(str(exc), _line_of(text, "sim")) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), default_name=path.stem)


def scenario_to_dict(sc: Scenario) -> dict:
    ctl = {"kind": controller_kind(sc.controller)}
    for f in fields(sc.controller):
        v = getattr(sc.controller, f.name)
        if v is not None:
            ctl[f.name] = v
    g = sc.grid
    doc = {
        "controller": ctl,
        "grid": {k: getattr(g, k) for k in GRID_KEYS},
        "events": {"sag": [{k: getattr(ev, k) for k in EVENT_KEYS} for ev in g.events]},
    }
    if sc.lvrt is not None:
        doc["lvrt"] = {"enabled": True, **{f.name: getattr(sc.lvrt, f.name) for f in fields(sc.lvrt)}}
    doc["sim"] = {"name": sc.name, "t_end": sc.t_end, "dt": sc.dt,
                  "capture_stride": sc.capture_stride, "seed": sc.seed}
    return doc


def dump_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def bundled_configs() -> list[Path]:
    return sorted(BUNDLED_DIR.glob("*.toml"))
