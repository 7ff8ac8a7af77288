"""Quasi-static phasor model of the microgrid.

Buses, lines, breakers, loads and voltage sources are solved algebraically at
every control step.  Voltage sources (the utility "grid emulator" and
grid-forming inverters) are folded in as Norton equivalents; grid-following
inverters enter as current injections; constant-power loads are resolved with
a damped fixed-point iteration on their injected current.

All impedances and powers here are in system per-unit.  Phasors live in a
common reference frame rotating at the nominal frequency; off-nominal
frequencies show up as slow rotation of source EMF phasors.

An open breaker removes every line between its bus pair (the breaker is in
series with those lines).  Islands without any voltage source are reported as
de-energized and their buses held at zero volts; this is a normal state (it is
how blackout and black-start scenarios begin), not an abort.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .events import BreakerSet, LoadStep, SourceFreq, SourceUnbalance
from .frames import TWO_PI, Phasor


class UnknownElementError(KeyError):
    """An event referenced a network element that does not exist."""


class NonConvergenceError(RuntimeError):
    """The constant-power load fixed point failed to converge."""

    def __init__(self, message: str, iterations: int = 0):
        super().__init__(message)
        self.iterations = iterations


CP_MAX_ITERS = 50
CP_TOL = 1e-10
CP_DAMPING = 0.7


@dataclass(slots=True)
class Line:
    from_bus: str
    to_bus: str
    r: float
    x: float

    def __post_init__(self) -> None:
        if self.from_bus == self.to_bus:
            raise ValueError(f"line endpoints must differ ({self.from_bus})")
        if self.r < 0:
            raise ValueError("line resistance must be >= 0")
        if self.r == 0 and self.x == 0:
            raise ValueError("line impedance must be nonzero")

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)


@dataclass(slots=True)
class Breaker:
    id: str
    from_bus: str
    to_bus: str
    closed: bool = True


@dataclass(slots=True)
class GridSource:
    """Utility source: EMF behind a source impedance, at a set frequency."""

    id: str
    bus: str
    e: complex
    z_s: complex
    f_grid: float = 60.0
    rating: float = 30000.0
    e_neg: complex = 0.0

    def __post_init__(self) -> None:
        if self.rating <= 0:
            raise ValueError("source rating must be positive")
        if abs(self.e) > 1.2:
            raise ValueError("source EMF magnitude outside [0, 1.2] pu")
        if self.z_s == 0:
            raise ValueError("source impedance must be nonzero")


@dataclass(slots=True)
class ConstantImpedanceLoad:
    id: str
    bus: str
    z: complex

    def __post_init__(self) -> None:
        if self.z == 0:
            raise ValueError("constant-impedance load must have z != 0")


@dataclass(slots=True)
class ConstantPowerLoad:
    id: str
    bus: str
    p: float
    q: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError("constant-power load must be finite")


Load = ConstantImpedanceLoad | ConstantPowerLoad


def build_ybus(
    buses: list[str],
    lines: list[Line],
    breakers: list[Breaker] = (),
) -> np.ndarray:
    """Nodal admittance matrix of the line network (no shunt elements).

    Lines between a bus pair spanned by an open breaker are excluded.
    Isolated buses produce a zero row; callers decide how to treat them.
    """
    idx = {b: i for i, b in enumerate(buses)}
    open_pairs = {
        frozenset((br.from_bus, br.to_bus)) for br in breakers if not br.closed
    }
    n = len(buses)
    y = np.zeros((n, n), dtype=complex)
    for ln in lines:
        if frozenset((ln.from_bus, ln.to_bus)) in open_pairs:
            continue
        i, j = idx[ln.from_bus], idx[ln.to_bus]
        yl = 1.0 / ln.z
        y[i, i] += yl
        y[j, j] += yl
        y[i, j] -= yl
        y[j, i] -= yl
    return y


def branch_power(v_from: complex, v_to: complex, z: complex) -> complex:
    """Complex power entering a branch at the from end: S = V conj((Vf-Vt)/z)."""
    if z == 0:
        raise ValueError("branch impedance must be nonzero")
    i = (v_from - v_to) / z
    return v_from * i.conjugate()


@dataclass(slots=True)
class SolveReport:
    cp_iterations: int = 0
    residual: float = 0.0
    de_energized: list[list[str]] = field(default_factory=list)
    de_energized_with_load: list[list[str]] = field(default_factory=list)


class NetworkState:
    """Solved bus voltages and branch currents at one instant."""

    __slots__ = ("t", "buses", "_idx", "v_pos", "v_neg", "branch_currents",
                 "former_currents", "cp_currents")

    def __init__(self, t, buses, idx, v_pos, v_neg, branch_currents,
                 former_currents, cp_currents):
        self.t = t
        self.buses = buses
        self._idx = idx
        self.v_pos = v_pos
        self.v_neg = v_neg
        self.branch_currents = branch_currents
        self.former_currents = former_currents
        self.cp_currents = cp_currents

    def v(self, bus: str) -> complex:
        return complex(self.v_pos[self._idx[bus]])

    def vneg(self, bus: str) -> complex:
        if self.v_neg is None:
            return 0j
        return complex(self.v_neg[self._idx[bus]])

    def voltage(self, bus: str) -> Phasor:
        return Phasor.from_complex(self.v(bus))


class Network:
    """Mutable microgrid model solved once per control step."""

    def __init__(
        self,
        buses: list[str],
        lines: list[Line],
        breakers: list[Breaker] = (),
        grid_sources: list[GridSource] = (),
        loads: list[Load] = (),
    ):
        if len(set(buses)) != len(buses):
            raise ValueError("duplicate bus ids")
        self.buses = list(buses)
        self.bus_index = {b: i for i, b in enumerate(self.buses)}
        for ln in lines:
            self._check_bus(ln.from_bus)
            self._check_bus(ln.to_bus)
        for br in breakers:
            self._check_bus(br.from_bus)
            self._check_bus(br.to_bus)
        self.lines = list(lines)
        self.breakers = {br.id: br for br in breakers}
        self.grid_sources = {}
        for src in grid_sources:
            self._check_bus(src.bus)
            self.grid_sources[src.id] = src
        self.loads = {}
        for ld in loads:
            self._check_bus(ld.bus)
            self.loads[ld.id] = ld
        # grid-forming couplings registered by the runner: key -> (bus, z)
        self.formers: dict[str, tuple[str, complex]] = {}
        self._version = 0
        self._cache_version = -1
        self._cache: dict = {}
        self._v_warm: np.ndarray | None = None

    def _check_bus(self, bus: str) -> None:
        if bus not in self.bus_index:
            raise UnknownElementError(f"unknown bus {bus!r}")

    # -- mutation ----------------------------------------------------------

    def register_former(self, key: str, bus: str, z: complex) -> None:
        self._check_bus(bus)
        if z == 0:
            raise ValueError("former coupling impedance must be nonzero")
        self.formers[key] = (bus, z)
        self._version += 1

    def unregister_former(self, key: str) -> None:
        if self.formers.pop(key, None) is not None:
            self._version += 1

    def set_breaker(self, breaker_id: str, closed: bool) -> None:
        br = self.breakers.get(breaker_id)
        if br is None:
            raise UnknownElementError(f"unknown breaker {breaker_id!r}")
        if br.closed != closed:
            br.closed = closed
            self._version += 1

    def step_load(self, load_id: str, dp: float, dq: float) -> None:
        ld = self.loads.get(load_id)
        if ld is None:
            raise UnknownElementError(f"unknown load {load_id!r}")
        if isinstance(ld, ConstantPowerLoad):
            ld.p += dp
            ld.q += dq
        else:
            # add a parallel admittance drawing (dp, dq) at 1 pu voltage
            y_new = 1.0 / ld.z + complex(dp, -dq)
            if y_new == 0:
                raise ValueError(f"load step would open-circuit load {load_id!r}")
            ld.z = 1.0 / y_new
            self._version += 1

    def set_source_freq(self, source_id: str, f: float) -> None:
        src = self.grid_sources.get(source_id)
        if src is None:
            raise UnknownElementError(f"unknown grid source {source_id!r}")
        src.f_grid = f

    def set_source_unbalance(self, source_id: str, mag: float, angle: float) -> None:
        src = self.grid_sources.get(source_id)
        if src is None:
            raise UnknownElementError(f"unknown grid source {source_id!r}")
        src.e_neg = mag * cmath.exp(1j * angle)

    def advance_sources(self, dt: float, f_nom: float) -> None:
        """Rotate source EMFs by their off-nominal frequency for one step."""
        for src in self.grid_sources.values():
            df = src.f_grid - f_nom
            if df != 0.0:
                rot = cmath.exp(1j * TWO_PI * df * dt)
                src.e *= rot
                src.e_neg *= rot

    # -- topology ----------------------------------------------------------

    def effective_lines(self) -> list[Line]:
        open_pairs = {
            frozenset((br.from_bus, br.to_bus))
            for br in self.breakers.values()
            if not br.closed
        }
        return [
            ln
            for ln in self.lines
            if frozenset((ln.from_bus, ln.to_bus)) not in open_pairs
        ]

    def islands(self) -> list[list[str]]:
        """Connected components of the bus graph under current breaker states."""
        parent = list(range(len(self.buses)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for ln in self.effective_lines():
            a = find(self.bus_index[ln.from_bus])
            b = find(self.bus_index[ln.to_bus])
            if a != b:
                parent[a] = b
        groups: dict[int, list[str]] = {}
        for i, bus in enumerate(self.buses):
            groups.setdefault(find(i), []).append(bus)
        return list(groups.values())

    def partition(self) -> tuple[list[list[str]], dict[str, int], list[bool]]:
        """(islands, island index per bus, island-has-voltage-source flags)."""
        if self._cache_version != self._version:
            self._refresh_cache()
        c = self._cache
        return c["islands"], c["island_of"], c["island_sources"]

    # -- solve -------------------------------------------------------------

    def _refresh_cache(self) -> None:
        islands = self.islands()
        source_buses = {src.bus for src in self.grid_sources.values()}
        source_buses.update(bus for bus, _ in self.formers.values())
        energized: list[str] = []
        de_energized: list[list[str]] = []
        island_of: dict[str, int] = {}
        island_sources: list[bool] = []
        for k, isl in enumerate(islands):
            has_src = any(b in source_buses for b in isl)
            island_sources.append(has_src)
            for b in isl:
                island_of[b] = k
            if has_src:
                energized.extend(isl)
            else:
                de_energized.append(isl)
        energized.sort(key=self.bus_index.get)
        eidx = {b: i for i, b in enumerate(energized)}

        n = len(energized)
        y = np.zeros((n, n), dtype=complex)
        eff_lines = self.effective_lines()
        for ln in eff_lines:
            if ln.from_bus not in eidx:
                continue
            i, j = eidx[ln.from_bus], eidx[ln.to_bus]
            yl = 1.0 / ln.z
            y[i, i] += yl
            y[j, j] += yl
            y[i, j] -= yl
            y[j, i] -= yl
        for src in self.grid_sources.values():
            if src.bus in eidx:
                y[eidx[src.bus], eidx[src.bus]] += 1.0 / src.z_s
        for bus, z in self.formers.values():
            y[eidx[bus], eidx[bus]] += 1.0 / z
        for ld in self.loads.values():
            if isinstance(ld, ConstantImpedanceLoad) and ld.bus in eidx:
                y[eidx[ld.bus], eidx[ld.bus]] += 1.0 / ld.z

        line_from = np.array(
            [self.bus_index[ln.from_bus] for ln in eff_lines], dtype=np.intp
        )
        line_to = np.array(
            [self.bus_index[ln.to_bus] for ln in eff_lines], dtype=np.intp
        )
        line_y = np.array([1.0 / ln.z for ln in eff_lines], dtype=complex)
        line_z = np.array([ln.z for ln in eff_lines], dtype=complex)
        self._cache = {
            "islands": islands,
            "island_of": island_of,
            "island_sources": island_sources,
            "energized": energized,
            "eidx": eidx,
            "y": y,
            "yinv": np.linalg.inv(y) if n else np.zeros((0, 0), dtype=complex),
            "eff_lines": eff_lines,
            "line_from": line_from,
            "line_to": line_to,
            "line_y": line_y,
            "line_z": line_z,
            "cp_loads": [
                ld
                for ld in self.loads.values()
                if isinstance(ld, ConstantPowerLoad) and ld.bus in eidx
            ],
            "de_energized": de_energized,
        }
        self._cache_version = self._version
        self._v_warm = None

    def solve(
        self,
        t: float,
        former_emfs: dict[str, complex] | None = None,
        injections: dict[str, complex] | None = None,
    ) -> tuple[NetworkState, SolveReport]:
        """Solve the network; see module docstring for the device models.

        ``former_emfs`` maps registered former keys to their EMF phasors
        (grid sources supply their own).  ``injections`` maps buses to
        grid-following current phasors.
        """
        if self._cache_version != self._version:
            self._refresh_cache()
        c = self._cache
        eidx: dict[str, int] = c["eidx"]
        y: np.ndarray = c["y"]
        yinv: np.ndarray = c["yinv"]
        n = len(c["energized"])
        former_emfs = former_emfs or {}
        injections = injections or {}

        i_base = np.zeros(n, dtype=complex)
        for src in self.grid_sources.values():
            k = eidx.get(src.bus)
            if k is not None:
                i_base[k] += src.e / src.z_s
        for key, (bus, z) in self.formers.items():
            i_base[eidx[bus]] += former_emfs.get(key, 0j) / z
        for bus, inj in injections.items():
            k = eidx.get(bus)
            if k is not None:
                i_base[k] += inj

        cp_loads: list[ConstantPowerLoad] = c["cp_loads"]
        cp_currents: dict[str, complex] = {}
        iterations = 0
        residual = 0.0
        if not cp_loads:
            v = yinv @ i_base
            if n:
                # one refinement pass; the pre-refinement residual bounds the
                # returned solution's residual from above
                r = i_base - y @ v
                residual = float(np.max(np.abs(r)))
                v += yinv @ r
        else:
            v = self._v_warm if self._v_warm is not None else yinv @ i_base
            i_cp = np.zeros(n, dtype=complex)
            for it in range(1, CP_MAX_ITERS + 1):
                iterations = it
                target = np.zeros(n, dtype=complex)
                for ld in cp_loads:
                    k = eidx[ld.bus]
                    vb = v[k]
                    vm = abs(vb)
                    if vm < 1e-3:
                        vb = vb / vm * 1e-3 if vm > 0 else 1e-3 + 0j
                    target[k] -= complex(ld.p, ld.q).conjugate() / vb.conjugate()
                i_cp = i_cp + CP_DAMPING * (target - i_cp)
                v_new = yinv @ (i_base + i_cp)
                dv = float(np.max(np.abs(v_new - v))) if n else 0.0
                v = v_new
                if dv <= CP_TOL:
                    break
            else:
                raise NonConvergenceError(
                    "constant-power load iteration exceeded "
                    f"{CP_MAX_ITERS} iterations (last dv={dv:.3e})",
                    iterations,
                )
            r = (i_base + i_cp) - y @ v
            residual = float(np.max(np.abs(r))) if n else 0.0
            v += yinv @ r
            for ld in cp_loads:
                cp_currents[ld.id] = complex(i_cp[eidx[ld.bus]])
            self._v_warm = v.copy()

        # negative-sequence pass shares the same admittance matrix
        v_neg = None
        if any(src.e_neg != 0 for src in self.grid_sources.values()):
            i_neg = np.zeros(n, dtype=complex)
            for src in self.grid_sources.values():
                k = eidx.get(src.bus)
                if k is not None and src.e_neg != 0:
                    i_neg[k] += src.e_neg / src.z_s
            vn = yinv @ i_neg
            v_neg_full = np.zeros(len(self.buses), dtype=complex)
            for b, k in eidx.items():
                v_neg_full[self.bus_index[b]] = vn[k]
            v_neg = v_neg_full

        v_full = np.zeros(len(self.buses), dtype=complex)
        for b, k in eidx.items():
            v_full[self.bus_index[b]] = v[k]

        branch_currents = (v_full[c["line_from"]] - v_full[c["line_to"]]) * c["line_y"]

        former_currents: dict[str, complex] = {}
        for src in self.grid_sources.values():
            vb = complex(v_full[self.bus_index[src.bus]])
            former_currents[src.id] = (src.e - vb) / src.z_s if src.bus in eidx else 0j
        for key, (bus, z) in self.formers.items():
            vb = complex(v_full[self.bus_index[bus]])
            former_currents[key] = (former_emfs.get(key, 0j) - vb) / z

        state = NetworkState(
            t, self.buses, self.bus_index, v_full, v_neg,
            branch_currents, former_currents, cp_currents,
        )
        loaded = {ld.bus for ld in self.loads.values()}
        report = SolveReport(
            cp_iterations=iterations,
            residual=residual,
            de_energized=c["de_energized"],
            de_energized_with_load=[
                isl for isl in c["de_energized"] if any(b in loaded for b in isl)
            ],
        )
        return state, report

    def power_balance_residual(
        self,
        state: NetworkState,
        former_emfs: dict[str, complex] | None = None,
        injections: dict[str, complex] | None = None,
    ) -> float:
        """|sum(sources) - sum(loads) - sum(losses)| for the solved state."""
        former_emfs = former_emfs or {}
        injections = injections or {}
        s_src = 0j
        s_loss = 0j
        for src in self.grid_sources.values():
            i = state.former_currents.get(src.id, 0j)
            s_src += src.e * i.conjugate()
            s_loss += abs(i) ** 2 * src.z_s
        for key, (bus, z) in self.formers.items():
            i = state.former_currents.get(key, 0j)
            s_src += former_emfs.get(key, 0j) * i.conjugate()
            s_loss += abs(i) ** 2 * z
        for bus, inj in injections.items():
            s_src += state.v(bus) * inj.conjugate()
        s_load = 0j
        for ld in self.loads.values():
            vb = state.v(ld.bus)
            if isinstance(ld, ConstantImpedanceLoad):
                s_load += abs(vb) ** 2 * (1.0 / ld.z).conjugate()
            else:
                i_cp = state.cp_currents.get(ld.id)
                if i_cp is not None:
                    s_load += vb * (-i_cp).conjugate()
        ib = state.branch_currents
        if len(ib):
            s_loss += complex(np.dot(np.abs(ib) ** 2, self._cache["line_z"]))
        return abs(s_src - s_load - s_loss)


def apply_event(net: Network, event) -> None:
    """Apply a network-level event in place. Raises UnknownElementError."""
    if isinstance(event, BreakerSet):
        net.set_breaker(event.target, event.closed)
    elif isinstance(event, LoadStep):
        net.step_load(event.target, event.dp, event.dq)
    elif isinstance(event, SourceFreq):
        net.set_source_freq(event.target, event.f)
    elif isinstance(event, SourceUnbalance):
        net.set_source_unbalance(event.target, event.mag, event.angle)
    else:
        raise TypeError(f"not a network event: {event!r}")
