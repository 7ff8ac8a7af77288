"""Fixed-step scenario simulation.

Per control step: apply due events (setpoints pass the guard) -> solve the
phasor network -> synthesize waveforms and take local measurements -> step the
following and forming paths -> supervisor shadow-sync and transitions ->
detectors and autonomous actions -> record.

Everything is deterministic: identical config and seed give byte-identical
output files.  The optional seed only feeds measurement-noise injection on
the detector inputs (off by default).

Angle bookkeeping: phasors live in a frame rotating at the nominal frequency;
controller angles are absolute (include the nominal ramp), so frame angles
are ``theta - omega_nom * t``.  Forming inverters enter the solve as EMFs
behind their coupling impedance; following inverters as current injections
computed from the previous step's references (the idealized inner current
loop acts within one control step).
"""

from __future__ import annotations

import cmath
import copy
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .detect import IslandingDetector, ReconnectionMonitor
from .droop import (
    UV_CLAMP,
    DroopState,
    VirtualImpedance,
    black_start_ramp,
    droop_step,
    power_filter_step,
    restoration_step,
    virtual_impedance_step,
)
from .events import (
    BreakerSet,
    LoadStep,
    ModeCommand,
    PlugIn,
    PulseLoad,
    SetpointEvent,
    SourceFreq,
    SourceUnbalance,
    TimedEvent,
)
from .frames import A_OP, A_OP2, AbcSample, DqFrame, wrap_angle
from .guard import Setpoint, validate_setpoint
from .network import Network, NonConvergenceError, apply_event
from .pll import (
    PllState,
    UnderVoltageError,
    current_refs_from_pq,
    gfl_injection,
    init_locked,
    pll_step,
)
from .scenario import InverterConfig, ScenarioConfig, resolved_dict
from .supervisor import Mode, PathMeasurements, Supervisor, shadow_follow


@dataclass(slots=True)
class TransitionRecord:
    t: float
    step: int
    inverter: str
    from_mode: str
    to_mode: str
    accepted: bool
    reason: str
    phase_jump_deg: float | None = None
    mag_jump_pu: float | None = None


@dataclass(slots=True)
class GuardAuditRecord:
    t: float
    inverter: str
    source_id: str
    accepted: bool
    reason: str
    predicted_f: float
    predicted_v: float


class _Inverter:
    """Runtime state of one inverter inside a simulation."""

    __slots__ = (
        "cfg", "id", "bus", "rating_pu", "z_c_sys", "params", "pll", "droop",
        "vz", "sup", "det", "recon", "plugged", "inj", "emf", "i_sys", "s_inv",
        "pending_mode", "pending_source", "uv_suspended", "reconnect_pending",
    )

    def __init__(self, cfg: InverterConfig, s_base: float, f_nom: float, dt: float):
        self.cfg = cfg
        self.id = cfg.id
        self.bus = cfg.bus
        self.rating_pu = cfg.rating / s_base
        self.z_c_sys = cfg.z_c / self.rating_pu
        self.params = replace(cfg.droop)  # runtime setpoints mutate this copy
        self.pll = PllState()
        self.droop = DroopState(v_gfm=cfg.droop.v_nom)
        self.vz = VirtualImpedance(
            r_v=cfg.vz.r_v, x_v=cfg.vz.x_v, x_v_min=cfg.vz.x_v_min,
            x_v_max=cfg.vz.x_v_max, k_adapt=cfg.vz.k_adapt,
        )
        self.sup = Supervisor(cfg.mode, cfg.thresholds, f_nom)
        self.det = IslandingDetector(cfg.detector, dt)
        self.recon = (
            ReconnectionMonitor(cfg.detector) if cfg.pcc_breaker else None
        )
        self.plugged = cfg.plugged
        self.inj = 0j          # commanded GFL current, system pu, network frame
        self.emf = 0j          # post-virtual-impedance EMF, network frame
        self.i_sys = 0j        # solved terminal current, system pu
        self.s_inv = 0j        # terminal power, inverter pu
        self.pending_mode: Mode | None = None
        self.pending_source = ""
        self.uv_suspended = False
        self.reconnect_pending = False

    @property
    def mode(self) -> Mode:
        return self.sup.mode

    def z_v_sys(self) -> complex:
        return complex(self.vz.r_v, self.vz.x_v) / self.rating_pu


@dataclass(slots=True)
class SimResult:
    cfg: ScenarioConfig
    t: np.ndarray
    bus_mag: np.ndarray
    bus_ang: np.ndarray
    inv_ids: list[str]
    f: np.ndarray
    p: np.ndarray
    q: np.ndarray
    mode: np.ndarray
    lock: np.ndarray
    island: np.ndarray
    recon: np.ndarray
    residual: np.ndarray
    transitions: list[TransitionRecord]
    guard_audit: list[GuardAuditRecord]
    events_log: list[tuple[float, str, str, str]]
    metrics: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""
    abort_step: int = -1
    wall_time_s: float = 0.0

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual)) if self.residual.size else 0.0


class Simulation:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.f_nom = cfg.base.f_nom
        self.w0 = cfg.base.omega_base
        self.dt = cfg.dt
        # the network and controllers mutate their elements; run on copies so
        # the same config object can be run again byte-identically
        self.net = Network(
            cfg.buses,
            copy.deepcopy(cfg.lines),
            copy.deepcopy(cfg.breakers),
            copy.deepcopy(cfg.grid_sources),
            copy.deepcopy(cfg.loads),
        )
        self.invs = [
            _Inverter(ic, cfg.base.s_base, self.f_nom, cfg.dt)
            for ic in cfg.inverters
        ]
        self.events: list[TimedEvent] = self._expand_events(cfg.events)
        self.events_log: list[tuple[float, str, str, str]] = []
        self.transitions: list[TransitionRecord] = []
        self.guard_audit: list[GuardAuditRecord] = []
        self.rng = np.random.default_rng(cfg.seed)
        self.noise_std = cfg.output.noise_std
        self._dead_seen: set = set()
        self._by_id = {inv.id: inv for inv in self.invs}
        for inv in self.invs:
            if inv.plugged and inv.mode is Mode.GFM:
                self.net.register_former(inv.id, inv.bus, inv.z_c_sys)
        self._initialize()

    @staticmethod
    def _expand_events(events: list[TimedEvent]) -> list[TimedEvent]:
        out: list[TimedEvent] = []
        for te in events:
            ev = te.event
            if isinstance(ev, PulseLoad):
                out.append(TimedEvent(te.t, LoadStep(ev.target, ev.dp, ev.dq)))
                out.append(
                    TimedEvent(te.t + ev.duration, LoadStep(ev.target, -ev.dp, -ev.dq))
                )
            else:
                out.append(te)
        out.sort(key=lambda te: te.t)
        return out

    # -- initialization ------------------------------------------------------

    def _initialize(self) -> None:
        """Find a self-consistent operating point so an event-free scenario
        stays numerically flat from the first step."""
        for inv in self.invs:
            if inv.cfg.black_start is not None and inv.mode is Mode.GFM:
                inv.droop.v_gfm = 0.0
                inv.droop.ramp_active = True
                inv.droop.ramp_target = inv.params.v_nom

        state = None
        for round_idx in range(80):
            emfs = {}
            injections: dict[str, complex] = {}
            for inv in self.invs:
                if not inv.plugged:
                    continue
                if inv.mode is Mode.GFM:
                    v_ref = inv.droop.v_gfm * cmath.exp(1j * inv.droop.theta_gfm)
                    emfs[inv.id] = v_ref - inv.z_v_sys() * inv.i_sys
                    inv.emf = emfs[inv.id]
                elif state is not None:
                    vb = state.v(inv.bus)
                    if abs(vb) >= 0.05:
                        s_sys = complex(
                            inv.params.p_set, inv.params.q_set
                        ) * inv.rating_pu
                        i = (s_sys / vb).conjugate()
                        i_max = 1.2 * inv.rating_pu
                        if abs(i) > i_max:
                            i *= i_max / abs(i)
                        inv.inj = i
                        injections[inv.bus] = injections.get(inv.bus, 0j) + i
                    else:
                        inv.inj = 0j
            state, _ = self.net.solve(0.0, emfs, injections)
            converged = round_idx >= 2
            for inv in self.invs:
                if not inv.plugged:
                    continue
                vb = state.v(inv.bus)
                if inv.mode is Mode.GFM:
                    i = state.former_currents.get(inv.id, 0j)
                else:
                    i = inv.inj
                inv.i_sys = i
                s = vb * i.conjugate() / inv.rating_pu
                d = inv.droop
                if abs(s.real - d.p_f) > 1e-12 or abs(s.imag - d.q_f) > 1e-12:
                    converged = False
                d.p_f, d.q_f = s.real, s.imag
                inv.s_inv = s
                if inv.mode is Mode.GFM and not d.ramp_active and inv.params.k_v > 0:
                    # nudge the EMF toward holding the bus at v_nom
                    dv = inv.params.v_nom - abs(vb)
                    if abs(dv) > 1e-13:
                        converged = False
                    d.v_gfm = min(max(d.v_gfm + 0.5 * dv, 0.0), 1.2)

            # steer forming EMF angles toward the droop-consistent power
            # split of each island, with equal restoration offsets, so the
            # scenario starts at the true equilibrium operating point
            _, island_of, _ = self.net.partition()
            groups: dict[int, list[_Inverter]] = {}
            for inv in self.invs:
                if inv.plugged and inv.mode is Mode.GFM and not inv.droop.ramp_active:
                    groups.setdefault(island_of[inv.bus], []).append(inv)
            for isl_idx, members in groups.items():
                grid_tied = any(
                    island_of[src.bus] == isl_idx
                    for src in self.net.grid_sources.values()
                )
                if grid_tied:
                    delta = 0.0
                else:
                    total = sum(m.droop.p_f for m in members)
                    p_sets = sum(m.params.p_set for m in members)
                    inv_sum = sum(1.0 / m.params.m_p for m in members)
                    delta = (total - p_sets) / inv_sum
                for m in members:
                    dp = m.params
                    p_target = dp.p_set + delta / dp.m_p
                    err = p_target - m.droop.p_f
                    if abs(err) > 1e-11:
                        converged = False
                    gain = 0.5 * abs(m.z_c_sys.imag * m.rating_pu) or 0.02
                    m.droop.theta_gfm += gain * err
                    m.droop.u = min(max(delta, -0.05), 0.05) if dp.k_r > 0 else 0.0
            if converged:
                break

        _, island_of, energized = self.net.partition()
        freqs = self._island_frequencies(island_of)
        for inv in self.invs:
            d = inv.droop
            dp = inv.cfg.droop
            if inv.mode is Mode.GFM and not d.ramp_active:
                if dp.k_v > 0:
                    d.u_v = min(
                        max(d.v_gfm - (dp.v_nom - dp.n_q * (d.q_f - dp.q_set)),
                            -UV_CLAMP),
                        UV_CLAMP,
                    )
                d.omega = 1.0 - dp.m_p * (d.p_f - dp.p_set) + d.u
            # PLL starts locked on whatever voltage it follows
            follow_bus = self._pll_bus(inv)
            vb = state.v(follow_bus) if state is not None else 0j
            isl = island_of[follow_bus]
            omega = 2 * math.pi * freqs[isl] if energized[isl] else self.w0
            if abs(vb) >= 0.05:
                init_locked(inv.pll, vb, omega, self.w0, self.dt, inv.cfg.pll.sogi_k)
            else:
                inv.pll.omega_est = self.w0
                inv.pll.omega_locked = self.w0

    # -- per-step helpers ------------------------------------------------------

    def _pll_bus(self, inv: _Inverter) -> str:
        """The bus whose voltage the following path tracks this step."""
        if inv.mode is Mode.GFM and inv.cfg.pcc_breaker is not None:
            # utility side of the watched breaker (config convention: 'from')
            return self.net.breakers[inv.cfg.pcc_breaker].from_bus
        return inv.bus

    def _island_frequencies(self, island_of: dict[str, int]) -> list[float]:
        """Per-island frequency: rating-weighted grid sources when present,
        else delivered-power-weighted forming-inverter internal frequencies."""
        modes = tuple(
            inv.plugged and inv.sup.mode is Mode.GFM for inv in self.invs
        )
        key = (self.net._version, modes)
        if getattr(self, "_ifreq_key", None) != key:
            n_islands = 1 + max(island_of.values()) if island_of else 0
            grid_members = [[] for _ in range(n_islands)]
            for src in self.net.grid_sources.values():
                grid_members[island_of[src.bus]].append(src)
            gfm_members = [[] for _ in range(n_islands)]
            for inv in self.invs:
                if inv.plugged and inv.sup.mode is Mode.GFM:
                    gfm_members[island_of[inv.bus]].append(inv)
            self._ifreq_key = key
            self._ifreq_members = (grid_members, gfm_members)
        grid_members, gfm_members = self._ifreq_members
        freqs = []
        for grid, gfm in zip(grid_members, gfm_members):
            if grid:
                wsum = sum(src.rating for src in grid)
                freqs.append(sum(src.rating * src.f_grid for src in grid) / wsum)
            elif gfm:
                wsum = acc = 0.0
                for inv in gfm:
                    w = abs(inv.s_inv) * inv.rating_pu + 1e-6
                    wsum += w
                    acc += w * inv.droop.omega * self.f_nom
                freqs.append(acc / wsum)
            else:
                freqs.append(self.f_nom)
        return freqs

    def _log(self, t: float, kind: str, target: str, detail: str) -> None:
        self.events_log.append((t, kind, target, detail))

    def _apply_setpoint(self, t: float, ev: SetpointEvent, inv: _Inverter) -> None:
        sp = Setpoint(
            p_set=ev.p_set, q_set=ev.q_set, v_nom=ev.v_nom,
            mode_cmd=ev.mode, t_issued=t, source_id=ev.source_id,
        )
        verdict = validate_setpoint(
            sp, inv.params, inv.droop, inv.droop.p_f, inv.droop.q_f,
            inv.cfg.guard, self.f_nom,
        )
        self.guard_audit.append(GuardAuditRecord(
            t, inv.id, ev.source_id, verdict.accepted, verdict.reason,
            verdict.predicted_f, verdict.predicted_v,
        ))
        self._log(
            t, "setpoint", inv.id,
            f"source={ev.source_id} accepted={verdict.accepted} "
            f"reason={verdict.reason} f_pred={verdict.predicted_f:.3f}",
        )
        if not verdict.accepted:
            return
        if ev.p_set is not None:
            inv.params.p_set = ev.p_set
        if ev.q_set is not None:
            inv.params.q_set = ev.q_set
        if ev.v_nom is not None:
            inv.params.v_nom = ev.v_nom
        if ev.mode is not None:
            inv.pending_mode = Mode[ev.mode.upper()]
            inv.pending_source = f"setpoint:{ev.source_id}"

    def _apply_event(self, t: float, te: TimedEvent) -> None:
        ev = te.event
        by_id = self._by_id
        if isinstance(ev, (LoadStep, BreakerSet, SourceFreq, SourceUnbalance)):
            apply_event(self.net, ev)
            self._log(t, type(ev).__name__, ev.target, _event_detail(ev))
            if isinstance(ev, BreakerSet):
                for inv in self.invs:
                    if inv.cfg.pcc_breaker == ev.target:
                        inv.sup.status.holds_since = None
                        # a reclose makes a forming watcher eligible to hand
                        # back to the following path; an opening revokes it
                        inv.reconnect_pending = ev.closed and inv.mode is Mode.GFM
        elif isinstance(ev, SetpointEvent):
            self._apply_setpoint(t, ev, by_id[ev.target])
        elif isinstance(ev, ModeCommand):
            inv = by_id[ev.target]
            inv.pending_mode = Mode[ev.mode.upper()]
            inv.pending_source = "command"
            self._log(t, "ModeCommand", ev.target, f"mode={ev.mode}")
        elif isinstance(ev, PlugIn):
            inv = by_id[ev.target]
            if not inv.plugged:
                inv.plugged = True
                if inv.mode is Mode.GFM:
                    self.net.register_former(inv.id, inv.bus, inv.z_c_sys)
                    # connect at the measured bus state: zero initial current
                    inv.emf = inv.droop.v_gfm * cmath.exp(
                        1j * (inv.droop.theta_gfm - self.w0 * t)
                    )
                    if inv.droop.v_gfm < 0.5 * inv.params.v_nom:
                        inv.droop.ramp_active = True
                        inv.droop.ramp_target = inv.params.v_nom
                self._log(t, "PlugIn", ev.target, "")

    def _switch_mode(self, inv: _Inverter, target: Mode, t: float,
                     v_bus: complex) -> None:
        """Handover bookkeeping once the supervisor accepted the transition."""
        if target is Mode.GFM:
            self.net.register_former(inv.id, inv.bus, inv.z_c_sys)
            # choose the internal EMF that keeps the present current flowing;
            # theta must land so that after this step's frame advance the EMF
            # phasor sits on v_ref rotated one step at the measured frequency
            i = inv.i_sys
            v_ref = v_bus + (inv.z_c_sys + inv.z_v_sys()) * i
            d = inv.droop
            if abs(v_ref) > 1e-9:
                frame_next = (
                    inv.pll.theta_est - self.w0 * t - inv.pll.omega_est * self.dt
                )
                d.theta_gfm = inv.pll.theta_est + wrap_angle(
                    cmath.phase(v_ref) - frame_next
                )
                d.v_gfm = min(abs(v_ref), 1.2)
            if d.v_gfm < 0.5 * inv.params.v_nom:
                # energizing a dead or collapsed bus: soft-start ramp
                d.ramp_active = True
                d.ramp_target = inv.params.v_nom
            inv.inj = 0j
        else:
            self.net.unregister_former(inv.id)
            # export continuity: the following path takes over the present P,Q
            inv.params.p_set = inv.s_inv.real
            inv.params.q_set = inv.s_inv.imag
            inv.emf = 0j
            inv.reconnect_pending = False

    # -- main loop -------------------------------------------------------------

    def run(self) -> SimResult:
        t_start = time.perf_counter()
        cfg = self.cfg
        n_steps = int(round(cfg.t_end / self.dt))
        rows = n_steps + 1
        nb = len(cfg.buses)
        ni = len(self.invs)
        t_arr = np.empty(rows)
        bus_mag = np.empty((rows, nb))
        bus_ang = np.empty((rows, nb))
        f_arr = np.empty((rows, ni))
        p_arr = np.empty((rows, ni))
        q_arr = np.empty((rows, ni))
        mode_arr = np.empty((rows, ni), dtype=np.int8)
        lock_arr = np.empty((rows, ni), dtype=np.int8)
        isl_arr = np.empty((rows, ni), dtype=np.int8)
        rec_arr = np.empty((rows, ni), dtype=np.int8)
        res_arr = np.empty(rows)

        ev_idx = 0
        aborted = False
        abort_reason = ""
        k = 0
        pending_jump: list[tuple[int, TransitionRecord]] = []
        try:
            for k in range(rows):
                t = k * self.dt
                # 1. due events
                while ev_idx < len(self.events) and self.events[ev_idx].t <= t + 1e-12:
                    self._apply_event(t, self.events[ev_idx])
                    ev_idx += 1

                # 2. network solve with the references computed last step
                emfs = {
                    inv.id: inv.emf
                    for inv in self.invs
                    if inv.plugged and inv.mode is Mode.GFM
                }
                injections: dict[str, complex] = {}
                for inv in self.invs:
                    if inv.plugged and inv.mode is Mode.GFL and inv.inj != 0j:
                        injections[inv.bus] = injections.get(inv.bus, 0j) + inv.inj
                state, report = self.net.solve(t, emfs, injections)
                _, island_of, energized = self.net.partition()
                freqs = self._island_frequencies(island_of)
                for isl in report.de_energized_with_load:
                    key = ",".join(isl)
                    if key not in self._dead_seen:
                        self._dead_seen.add(key)
                        self._log(t, "island_deenergized", key, "no source in island")

                # 3. record
                t_arr[k] = t
                np.absolute(state.v_pos, out=bus_mag[k])
                bus_ang[k] = np.angle(state.v_pos)
                res_arr[k] = self.net.power_balance_residual(state, emfs, injections)

                # resolve one-step transition discontinuity metrics
                if pending_jump:
                    remaining = []
                    for step0, rec in pending_jump:
                        if k == step0 + 1:
                            bidx = cfg.buses.index(
                                next(i.bus for i in self.invs if i.id == rec.inverter)
                            )
                            m0, m1 = bus_mag[step0, bidx], bus_mag[k, bidx]
                            rec.mag_jump_pu = float(abs(m1 - m0))
                            if min(m0, m1) >= 0.05:
                                rec.phase_jump_deg = float(abs(math.degrees(
                                    wrap_angle(
                                        bus_ang[k, bidx] - bus_ang[step0, bidx]
                                    )
                                )))
                            else:
                                rec.phase_jump_deg = 0.0
                        else:
                            remaining.append((step0, rec))
                    pending_jump = remaining

                # 4..7 controllers, supervisor, detectors per inverter
                for i, inv in enumerate(self.invs):
                    self._step_inverter(
                        inv, i, k, t, state, island_of, energized, freqs,
                        pending_jump,
                        f_arr, p_arr, q_arr, mode_arr, lock_arr, isl_arr, rec_arr,
                    )

                # rotate off-nominal source EMF phasors toward the next step
                self.net.advance_sources(self.dt, self.f_nom)
        except NonConvergenceError as exc:
            aborted = True
            abort_reason = f"NonConvergence at step {k} (t={k * self.dt:.6f}): {exc}"
            self._log(k * self.dt, "abort", "simulation", abort_reason)
            rows = k  # rows completed before the failing solve
        wall = time.perf_counter() - t_start

        result = SimResult(
            cfg=cfg,
            t=t_arr[:rows],
            bus_mag=bus_mag[:rows],
            bus_ang=bus_ang[:rows],
            inv_ids=[inv.id for inv in self.invs],
            f=f_arr[:rows],
            p=p_arr[:rows],
            q=q_arr[:rows],
            mode=mode_arr[:rows],
            lock=lock_arr[:rows],
            island=isl_arr[:rows],
            recon=rec_arr[:rows],
            residual=res_arr[:rows],
            transitions=self.transitions,
            guard_audit=self.guard_audit,
            events_log=self.events_log,
            aborted=aborted,
            abort_reason=abort_reason,
            abort_step=k if aborted else -1,
            wall_time_s=wall,
        )
        from .metrics import compute_metrics

        result.metrics = compute_metrics(result)
        result.metrics["wall_time_s"] = wall
        return result

    def _step_inverter(
        self, inv, i, k, t, state, island_of, energized, freqs, pending_jump,
        f_arr, p_arr, q_arr, mode_arr, lock_arr, isl_arr, rec_arr,
    ) -> None:
        cfg = self.cfg
        dt = self.dt
        mode = inv.sup.mode
        v_bus = state.v(inv.bus)
        v_bus_mag = abs(v_bus)
        own_energized = energized[island_of[inv.bus]]

        # terminal current and power (inverter base)
        if inv.plugged:
            if mode is Mode.GFM:
                inv.i_sys = state.former_currents.get(inv.id, 0j)
            else:
                inv.i_sys = inv.inj if own_energized else 0j
        else:
            inv.i_sys = 0j
        inv.s_inv = v_bus * inv.i_sys.conjugate() / inv.rating_pu

        # following path: PLL on the followed bus waveform (each phase is the
        # real part of its phase phasor rotated by the synthesis angle)
        follow_bus = self._pll_bus(inv)
        v_follow = state.v(follow_bus)
        v_follow_neg = state.vneg(follow_bus)
        rot = cmath.exp(1j * (self.w0 * t))
        za = (v_follow + v_follow_neg) * rot
        zb = (A_OP2 * v_follow + A_OP * v_follow_neg) * rot
        zc = (A_OP * v_follow + A_OP2 * v_follow_neg) * rot
        sample = AbcSample(za.real, zb.real, zc.real, t)
        pll_step(sample, dt, inv.pll, inv.cfg.pll)
        follow_energized = energized[island_of[follow_bus]]

        # forming path
        d = inv.droop
        dp = inv.params
        power_filter_step(inv.s_inv.real, inv.s_inv.imag, dt, d, dp.omega_c)
        if mode is Mode.GFM and d.ramp_active:
            rate = (
                inv.cfg.black_start.ramp_rate
                if inv.cfg.black_start is not None
                else 0.5
            )
            black_start_ramp(d, dt, rate, d.ramp_target)
            if not d.ramp_active:
                # hand the ramp output to the droop voltage law without a step
                d.u_v = min(max(
                    d.v_gfm - (dp.v_nom - dp.n_q * (d.q_f - dp.q_set)),
                    -UV_CLAMP), UV_CLAMP)
        elif mode is Mode.GFM and dp.k_v > 0:
            d.u_v += dt * dp.k_v * (dp.v_nom - v_bus_mag)
            d.u_v = min(max(d.u_v, -UV_CLAMP), UV_CLAMP)
        droop_step(dp, d, dt, self.w0)
        if mode is Mode.GFM:
            restoration_step(dp, d, dt)

        # supervisor: shadow sync, then any pending transition request
        omega_meas_pu = inv.pll.omega_est / self.w0
        meas = PathMeasurements(
            theta=inv.pll.theta_est,
            v=inv.pll.v_pos,
            omega_pu=omega_meas_pu,
            p=inv.s_inv.real,
            q=inv.s_inv.imag,
            v_own=v_bus_mag,
            followed_energized=follow_energized,
        )
        if inv.plugged:
            inv.sup.shadow_sync_step(meas, inv.pll, d, dp, t)
        else:
            # a parked unit listens through its following path so it can
            # later connect at the measured bus state, whatever its mode
            shadow_follow(meas, d, dp)

        # autonomous actions
        if inv.cfg.auto and inv.plugged:
            if mode is Mode.GFL and inv.det.tripped and inv.pending_mode is None:
                inv.pending_mode = Mode.GFM
                inv.pending_source = "auto:islanding"
            if (
                mode is Mode.GFM
                and inv.reconnect_pending
                and inv.cfg.pcc_breaker is not None
                and inv.pending_mode is None
            ):
                br = self.net.breakers[inv.cfg.pcc_breaker]
                grid_here = any(
                    island_of[src.bus] == island_of[inv.bus]
                    for src in self.net.grid_sources.values()
                )
                if br.closed and grid_here:
                    inv.pending_mode = Mode.GFL
                    inv.pending_source = "auto:grid-restored"

        if inv.pending_mode is not None and inv.plugged:
            target = inv.pending_mode
            if target is not mode:
                ok, reason = inv.sup.request_transition(target, t)
                rec = TransitionRecord(
                    t, k, inv.id,
                    "gfm" if target is Mode.GFL else "gfl",
                    target.name.lower(), ok, reason,
                )
                if ok:
                    self._switch_mode(inv, target, t, v_bus)
                    mode = target
                    self.transitions.append(rec)
                    pending_jump.append((k, rec))
                    self._log(
                        t, "transition", inv.id,
                        f"{rec.from_mode}->{rec.to_mode} source={inv.pending_source}",
                    )
                    inv.pending_mode = None
                elif inv.pending_source == "command" or inv.pending_source.startswith("setpoint"):
                    # scripted commands report a single denial and drop
                    self.transitions.append(rec)
                    self._log(
                        t, "transition_denied", inv.id,
                        f"target={target.name.lower()} reason={reason}",
                    )
                    inv.pending_mode = None
                # autonomous requests stay pending and retry next step
            else:
                inv.pending_mode = None

        # detectors
        f_local = (
            d.omega * self.f_nom if mode is Mode.GFM
            else inv.pll.omega_est / (2 * math.pi)
        )
        v_meas_det = v_bus_mag
        f_meas_det = f_local
        if self.noise_std > 0.0:
            f_meas_det += self.rng.normal(0.0, self.noise_std)
            v_meas_det += self.rng.normal(0.0, self.noise_std)
        was_tripped = inv.det.tripped
        inv.det.push(t, f_meas_det, v_meas_det)
        if inv.det.tripped != was_tripped:
            self._log(
                t, "islanding_detector", inv.id,
                "tripped" if inv.det.tripped else "cleared",
            )

        recon_ready = False
        if inv.recon is not None:
            br = self.net.breakers[inv.cfg.pcc_breaker]
            if br.closed:
                inv.recon.holds_since = None
                inv.recon.ready = False
            else:
                k_from = island_of[br.from_bus]
                k_to = island_of[br.to_bus]
                was_ready = inv.recon.ready
                inv.recon.update(
                    t,
                    state.v(br.to_bus), freqs[k_to], energized[k_to],
                    state.v(br.from_bus), freqs[k_from], energized[k_from],
                )
                if inv.recon.ready and not was_ready:
                    self._log(t, "reconnection_ready", inv.id, f"breaker={br.id}")
                if inv.recon.ready and inv.cfg.auto:
                    self.net.set_breaker(br.id, True)
                    self._log(t, "breaker_close", br.id, f"auto by {inv.id}")
                    # the network just changed: re-qualify sync before any
                    # mode change
                    inv.sup.status.holds_since = None
                    inv.reconnect_pending = True
            recon_ready = inv.recon.ready

        # references for the next step's solve; the same frame angle is used
        # to measure v_dq and to rotate the references back, so the delivered
        # power reproduces the setpoint exactly regardless of PLL bias
        if inv.plugged and mode is Mode.GFL:
            frame = inv.pll.theta_est - self.w0 * (t + dt)
            vdq_c = v_bus * cmath.exp(-1j * frame)
            try:
                i_d, i_q = current_refs_from_pq(
                    dp.p_set, dp.q_set, DqFrame(vdq_c.real, vdq_c.imag)
                )
                if inv.uv_suspended:
                    inv.uv_suspended = False
                    self._log(t, "gfl_injection", inv.id, "resumed")
                inv.inj = gfl_injection(i_d, i_q, frame) * inv.rating_pu
            except UnderVoltageError:
                if not inv.uv_suspended:
                    inv.uv_suspended = True
                    self._log(t, "gfl_injection", inv.id, "suspended: undervoltage")
                inv.inj = 0j
        elif inv.plugged and mode is Mode.GFM:
            v_ref = d.v_gfm * cmath.exp(1j * (d.theta_gfm - self.w0 * (t + dt)))
            i_inv = inv.i_sys / inv.rating_pu
            inv.emf = virtual_impedance_step(v_ref, i_inv, inv.vz, dt)

        f_arr[k, i] = f_local
        p_arr[k, i] = inv.s_inv.real
        q_arr[k, i] = inv.s_inv.imag
        mode_arr[k, i] = 1 if mode is Mode.GFM else 0
        lock_arr[k, i] = 1 if inv.pll.lock else 0
        isl_arr[k, i] = 1 if inv.det.tripped else 0
        rec_arr[k, i] = 1 if recon_ready else 0


def _event_detail(ev) -> str:
    fields = [
        f"{name}={getattr(ev, name)!r}"
        for name in ev.__dataclass_fields__
        if name != "target"
    ]
    return " ".join(fields)


# -- output files ---------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def write_outputs(result: SimResult, out_dir: str | Path) -> None:
    """Write timeseries.csv, events.csv, metrics.json and the resolved config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.cfg

    header = ["t"]
    for b in cfg.buses:
        header += [f"v_mag_{b}", f"v_ang_{b}"]
    for inv_id in result.inv_ids:
        header += [
            f"f_{inv_id}", f"p_{inv_id}", f"q_{inv_id}", f"mode_{inv_id}",
            f"lock_{inv_id}", f"island_{inv_id}", f"recon_{inv_id}",
        ]
    dec = max(1, cfg.output.decimate)
    idx = range(0, result.t.size, dec)
    lines = [",".join(header)]
    for k in idx:
        row = [_fmt(result.t[k])]
        for b in range(len(cfg.buses)):
            row.append(_fmt(result.bus_mag[k, b]))
            row.append(_fmt(result.bus_ang[k, b]))
        for i in range(len(result.inv_ids)):
            row += [
                _fmt(result.f[k, i]), _fmt(result.p[k, i]), _fmt(result.q[k, i]),
                str(int(result.mode[k, i])), str(int(result.lock[k, i])),
                str(int(result.island[k, i])), str(int(result.recon[k, i])),
            ]
        lines.append(",".join(row))
    (out / "timeseries.csv").write_text("\n".join(lines) + "\n")

    ev_lines = ["t,type,target,detail"]
    for t, kind, target, detail in result.events_log:
        detail_csv = detail.replace('"', "'")
        ev_lines.append(f'{_fmt(t)},{kind},{target},"{detail_csv}"')
    (out / "events.csv").write_text("\n".join(ev_lines) + "\n")

    (out / "metrics.json").write_text(
        json.dumps(result.metrics, indent=2, sort_keys=True) + "\n"
    )
    (out / "config.resolved.yaml").write_text(
        yaml.safe_dump(resolved_dict(cfg), sort_keys=False)
    )


def run(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> SimResult:
    """Build, run and optionally persist one scenario."""
    sim = Simulation(cfg)
    result = sim.run()
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result
