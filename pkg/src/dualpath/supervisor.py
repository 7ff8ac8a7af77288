"""Per-inverter mode manager for the dual control paths.

Exactly one path drives the inverter at a time; the other is kept perfectly
synchronized in the background so a mode change never produces a reference
discontinuity:

* while grid-following, the grid-forming state is overwritten every step with
  the measured bus angle/magnitude/powers (and the restoration offsets are
  back-solved so the droop law would reproduce the measured operating point);
* while grid-forming, the PLL keeps running -- on the utility side of the
  watched breaker when one is configured, else on the inverter's own bus --
  so the following path stays locked and ready.

Transitions are accepted only when the two paths' references have agreed
within thresholds for a hold time.  Switching to the forming path is always
possible once held (the shadow copy makes the mismatch identically zero,
including on a dead bus, which is how a collapsed island gets re-energized);
switching to the following path additionally requires a live, locked PLL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .droop import U_CLAMP, UV_CLAMP, DroopParams, DroopState
from .frames import TWO_PI, wrap_angle
from .pll import PllState


class Mode(Enum):
    GFL = 0
    GFM = 1


@dataclass(frozen=True, slots=True)
class TransitionThresholds:
    eps_theta: float = math.radians(5.0)  # rad
    eps_v: float = 0.03                   # pu
    eps_f: float = 0.1                    # Hz
    hold: float = 0.2                     # s


@dataclass(slots=True)
class SyncStatus:
    d_theta: float = 0.0   # rad, wrapped difference between path angles
    d_v: float = 0.0       # pu
    d_f: float = 0.0       # Hz
    holds_since: float | None = None
    stale: bool = False    # followed voltage dead or PLL unlocked


@dataclass(frozen=True, slots=True)
class PathMeasurements:
    """Local measurements feeding the shadow synchronization for one step."""

    theta: float            # positive-sequence angle estimate (PLL), rad
    v: float                # magnitude of the followed voltage, pu
    omega_pu: float         # measured frequency, pu
    p: float                # terminal active power, inverter pu
    q: float                # terminal reactive power, inverter pu
    v_own: float            # own-terminal voltage magnitude, pu
    followed_energized: bool = True


def _clamp(x: float, lim: float) -> float:
    return lim if x > lim else (-lim if x < -lim else x)


def shadow_follow(
    meas: PathMeasurements, gfm: DroopState, params: DroopParams
) -> None:
    """Overwrite the forming path with the measured operating point.

    The restoration offsets are back-solved so the droop law evaluated at the
    copied state reproduces the measured frequency and voltage exactly; with
    a restoration integrator disabled its offset is pinned at zero instead
    (a nonzero offset would never wash out and would distort droop sharing
    permanently).
    """
    gfm.theta_gfm = meas.theta
    gfm.v_gfm = meas.v
    gfm.p_f = meas.p
    gfm.q_f = meas.q
    gfm.omega = meas.omega_pu
    if params.k_r > 0:
        gfm.u = _clamp(
            meas.omega_pu - 1.0 + params.m_p * (meas.p - params.p_set), U_CLAMP
        )
    else:
        gfm.u = 0.0
    if params.k_v > 0:
        gfm.u_v = _clamp(
            meas.v - (params.v_nom - params.n_q * (meas.q - params.q_set)),
            UV_CLAMP,
        )
    else:
        gfm.u_v = 0.0
    gfm.ramp_active = False


class Supervisor:
    """Mode state machine for one inverter."""

    def __init__(self, mode: Mode, thresholds: TransitionThresholds, f_nom: float):
        self.mode = mode
        self.thresholds = thresholds
        self.f_nom = f_nom
        self.status = SyncStatus()
        self.last_denial: str | None = None

    def shadow_sync_step(
        self,
        meas: PathMeasurements,
        gfl: PllState,
        gfm: DroopState,
        params: DroopParams,
        t: float,
    ) -> SyncStatus:
        st = self.status
        if self.mode is Mode.GFL:
            # overwrite the inactive forming path with the measured state
            shadow_follow(meas, gfm, params)
            st.d_theta = 0.0
            st.d_v = 0.0
            st.d_f = 0.0
            st.stale = False
        else:
            st.d_theta = wrap_angle(gfl.theta_est - gfm.theta_gfm)
            st.d_v = abs(meas.v - meas.v_own)
            st.d_f = abs(
                gfl.omega_est / TWO_PI - gfm.omega * self.f_nom
            )
            st.stale = (not meas.followed_energized) or (not gfl.lock)

        th = self.thresholds
        within = (
            not st.stale
            and abs(st.d_theta) <= th.eps_theta
            and st.d_v <= th.eps_v
            and st.d_f <= th.eps_f
        ) if self.mode is Mode.GFM else True
        if within:
            if st.holds_since is None:
                st.holds_since = t
        else:
            st.holds_since = None
        return st

    def request_transition(self, target: Mode, t: float) -> tuple[bool, str]:
        """Gate a mode change on the synchronization status.

        Returns (accepted, reason); denial is a normal outcome, not an error.
        """
        if target is self.mode:
            raise ValueError("transition target equals current mode")
        st = self.status
        th = self.thresholds
        if target is Mode.GFL and st.stale:
            self.last_denial = "stale"
            return False, "stale"
        if abs(st.d_theta) > th.eps_theta:
            self.last_denial = "angle"
            return False, "angle"
        if st.d_v > th.eps_v:
            self.last_denial = "voltage"
            return False, "voltage"
        if st.d_f > th.eps_f:
            self.last_denial = "frequency"
            return False, "frequency"
        if st.holds_since is None or (t - st.holds_since) < th.hold:
            self.last_denial = "hold"
            return False, "hold"
        self.mode = target
        self.status.holds_since = None
        self.last_denial = None
        return True, "none"


def active_reference(
    mode: Mode, gfl: PllState, gfm: DroopState
) -> tuple[float, float]:
    """(theta, v) pair of whichever path currently drives the inverter."""
    if mode is Mode.GFM:
        return gfm.theta_gfm, gfm.v_gfm
    return gfl.theta_est, gfl.v_pos
