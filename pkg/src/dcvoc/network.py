"""Algebraic single-line grid model: u = u_g + Z_g e^{J phi_g} i."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .frame import Rot2, Vec2, rotate

OMEGA_NOMINAL = 2.0 * math.pi * 50.0


@dataclass(frozen=True)
class GridEvent:
    t_start: float
    t_end: float
    ug_during: float

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"event needs t_start < t_end, got [{self.t_start}, {self.t_end})")
        if self.ug_during < 0:
            raise ValueError("ug_during must be non-negative")


class Impedance(NamedTuple):
    Zg: float
    phig: float


@dataclass(frozen=True)
class GridModel:
    ug_nominal: float = 1.0
    Rg: float = 0.0
    Lg: float = 0.0
    omega_g: float = OMEGA_NOMINAL
    events: tuple[GridEvent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.Rg < 0 or self.Lg < 0:
            raise ValueError("line resistance and reactance must be non-negative")
        if not self.ug_nominal > 0:
            raise ValueError("ug_nominal must be positive")
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        for a, b in zip(events, events[1:]):
            if b.t_start < a.t_end:
                raise ValueError("grid events must be sorted and non-overlapping")

    @property
    def infinite_bus(self) -> bool:
        return self.Rg == 0.0 and self.Lg == 0.0

    def event_times(self) -> list[float]:
        out = []
        for ev in self.events:
            out.extend((ev.t_start, ev.t_end))
        return out

    def without_events(self) -> "GridModel":
        return GridModel(self.ug_nominal, self.Rg, self.Lg, self.omega_g, ())


def impedance_of(grid: GridModel) -> Impedance:
    return Impedance(math.hypot(grid.Rg, grid.Lg), math.atan2(grid.Lg, grid.Rg))


def ug_at(grid: GridModel, t: float) -> float:
    for ev in grid.events:
        if ev.t_start <= t < ev.t_end:
            return ev.ug_during
    return grid.ug_nominal


def terminal_voltage(i, grid: GridModel, t: float = 0.0, ug: float | None = None) -> Vec2:
    """Terminal voltage for injected current ``i``; ``ug`` overrides the schedule."""
    if ug is None:
        ug = ug_at(grid, t)
    # Z e^{J phi_g} i == [[Rg, -Lg], [Lg, Rg]] i
    return Vec2(ug + grid.Rg * i[0] - grid.Lg * i[1], grid.Lg * i[0] + grid.Rg * i[1])


def line_drop(i, grid: GridModel) -> Vec2:
    imp = impedance_of(grid)
    return rotate(Rot2(imp.phig), i).scale(imp.Zg)
