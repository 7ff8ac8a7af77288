"""Grid-following control path.

A dual second-order-generalized-integrator (SOGI) positive-sequence extractor
feeds a synchronous-frame PLL.  The PLL output pair (theta, measured
positive-sequence magnitude) is the GFL voltage reference; active/reactive
power tracking is achieved by inverting the per-unit power relations into dq
current references, clamped to the converter rating.

The estimated angle is kept unwrapped; the loop integrates at the estimated
frequency when the input collapses (under-voltage freeze) so that the angle
reference stays usable for ride-through and shadow synchronization.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .frames import TWO_PI, AbcSample, DqFrame, clarke


class UnderVoltageError(ValueError):
    """Voltage too low to convert a PQ setpoint into current references."""


@dataclass(frozen=True, slots=True)
class PllParams:
    """SRF-PLL gains from (zeta, natural frequency); SOGI gain k."""

    f_nom: float = 60.0
    zeta: float = 0.7071067811865476
    f_n: float = 20.0          # loop natural frequency, Hz
    sogi_k: float = math.sqrt(2.0)
    uv_threshold: float = 0.05  # pu, input collapse level
    uv_time: float = 0.1        # s of collapse before freezing
    capture_v: float = 0.8      # pu, minimum voltage to refresh omega_locked
    lock_q_threshold: float = 0.02  # pu filtered q error for lock
    lock_time: float = 0.1      # s the q error must stay small
    q_filter_cutoff: float = TWO_PI * 10.0

    @property
    def omega_nom(self) -> float:
        return TWO_PI * self.f_nom

    @property
    def kp(self) -> float:
        return 2.0 * self.zeta * TWO_PI * self.f_n

    @property
    def ki(self) -> float:
        return (TWO_PI * self.f_n) ** 2


@dataclass(slots=True)
class PllState:
    theta_est: float = 0.0       # rad, unwrapped
    omega_est: float = TWO_PI * 60.0  # rad/s
    pi_integrator: float = 0.0   # rad/s above nominal
    # SOGI states: direct and quadrature signals for the alpha and beta axes
    x1a: float = 0.0
    x2a: float = 0.0
    x1b: float = 0.0
    x2b: float = 0.0
    lock: bool = False
    v_pos: float = 0.0           # measured positive-sequence magnitude, pu
    q_filt: float = 0.0
    uv_timer: float = 0.0
    lock_timer: float = 0.0
    omega_locked: float = TWO_PI * 60.0  # last frequency seen while locked


def init_locked(
    state: PllState,
    v_pos: complex,
    omega: float,
    omega_nom: float,
    dt: float,
    sogi_k: float = math.sqrt(2.0),
) -> None:
    """Initialize the PLL at exact lock on a positive-sequence phasor.

    Seeds the *discrete* steady state of the trapezoidal SOGI pair so that an
    equilibrium operating point stays numerically flat from the first step.
    """
    state.theta_est = cmath.phase(v_pos)
    state.omega_est = omega
    state.pi_integrator = omega - omega_nom
    # discrete steady state: X = dt * (z(I-hA) - (I+hA))^-1 B U per axis
    h = 0.5 * dt
    z = cmath.exp(1j * omega * dt)
    a11, a12, a21 = -omega * sogi_k, -omega, omega
    m11 = z * (1 - h * a11) - (1 + h * a11)
    m12 = -h * a12 * (z + 1)
    m21 = -h * a21 * (z + 1)
    m22 = z - 1.0
    det = m11 * m22 - m12 * m21
    b1 = dt * omega * sogi_k
    for u, x1_attr, x2_attr in ((v_pos, "x1a", "x2a"), (-1j * v_pos, "x1b", "x2b")):
        rhs1 = b1 * u
        x1 = m22 * rhs1 / det
        x2 = -m21 * rhs1 / det
        setattr(state, x1_attr, x1.real)
        setattr(state, x2_attr, x2.real)
    # place theta on the loop's discrete fixed point (zero phase-detector
    # error), which sits a fraction of a millidegree off the ideal angle
    va_p = 0.5 * (state.x1a - state.x2b)
    vb_p = 0.5 * (state.x2a + state.x1b)
    if abs(v_pos) > 0.0:
        state.theta_est = math.atan2(vb_p, va_p) + 0.5 * omega * dt
    state.v_pos = abs(v_pos)
    state.omega_locked = omega
    state.lock = abs(v_pos) >= 0.05
    state.q_filt = 0.0
    state.uv_timer = 0.0
    state.lock_timer = 0.2 if state.lock else 0.0


def pll_step(v: AbcSample, dt: float, state: PllState, params: PllParams) -> PllState:
    """Advance the DSOGI + SRF-PLL by one control step.

    The SOGI resonators are discretized trapezoidally (a forward-Euler
    resonator at a 10 kHz step carries enough phase error to break the
    0.1-degree tracking contract); the slow loop states use forward Euler.
    The half-sample lag of the sampled input chain is compensated inside the
    phase detector so ``theta_est`` tracks the true instantaneous angle.
    """
    alpha, beta = clarke(v)

    # phase detector from the pre-update states (everything at sample time),
    # with half-sample delay compensation
    va_p = 0.5 * (state.x1a - state.x2b)
    vb_p = 0.5 * (state.x2a + state.x1b)
    state.v_pos = math.hypot(va_p, vb_p)

    theta_cmp = state.theta_est - 0.5 * state.omega_est * dt
    e_q = -va_p * math.sin(theta_cmp) + vb_p * math.cos(theta_cmp)

    # trapezoidal update of both SOGI pairs at the adapted center frequency
    w = state.omega_est
    if w < 0.1 * params.omega_nom:
        w = 0.1 * params.omega_nom
    k = params.sogi_k
    h = 0.5 * dt
    hw = h * w
    hwk = hw * k
    det = 1.0 + hwk + hw * hw
    du = dt * w * k
    r1 = (1.0 - hwk) * state.x1a - hw * state.x2a + du * alpha
    r2 = hw * state.x1a + state.x2a
    state.x1a = (r1 - hw * r2) / det
    state.x2a = (hw * r1 + (1.0 + hwk) * r2) / det
    r1 = (1.0 - hwk) * state.x1b - hw * state.x2b + du * beta
    r2 = hw * state.x1b + state.x2b
    state.x1b = (r1 - hw * r2) / det
    state.x2b = (hw * r1 + (1.0 + hwk) * r2) / det

    if state.v_pos < params.uv_threshold:
        # input collapse: freeze the loop at the last locked frequency and
        # keep rotating the angle reference; declare lock lost after uv_time
        state.uv_timer += dt
        state.lock_timer = 0.0
        if state.uv_timer > params.uv_time:
            state.lock = False
        state.omega_est = state.omega_locked
        state.pi_integrator = state.omega_locked - params.omega_nom
        state.theta_est += state.omega_est * dt
        return state
    state.uv_timer = 0.0

    state.pi_integrator += params.ki * e_q * dt
    limit = 0.2 * params.omega_nom
    if state.pi_integrator > limit:
        state.pi_integrator = limit
    elif state.pi_integrator < -limit:
        state.pi_integrator = -limit
    state.omega_est = params.omega_nom + state.pi_integrator + params.kp * e_q
    state.theta_est += state.omega_est * dt

    state.q_filt += dt * params.q_filter_cutoff * (abs(e_q) - state.q_filt)
    if state.q_filt < params.lock_q_threshold:
        state.lock_timer += dt
    else:
        state.lock_timer = 0.0
        state.lock = False
    if state.lock_timer >= params.lock_time:
        state.lock = True
    # remember the frequency only while tracking a healthy voltage, so a
    # collapse freezes at the pre-event value rather than mid-decay garbage
    if (
        state.lock
        and state.q_filt < params.lock_q_threshold
        and state.v_pos >= params.capture_v
    ):
        state.omega_locked = params.omega_nom + state.pi_integrator
    return state


def current_refs_from_pq(
    p_set: float, q_set: float, v: DqFrame, i_max: float = 1.2
) -> tuple[float, float]:
    """Invert p = vd*id + vq*iq, q = vq*id - vd*iq for the current references.

    The result is clamped to ``i_max`` magnitude preserving the P:Q ratio.
    Raises UnderVoltageError below 0.05 pu voltage (injection suspended).
    """
    det = v.d * v.d + v.q * v.q
    if det < 0.05 * 0.05:
        raise UnderVoltageError(f"voltage magnitude {math.sqrt(det):.4f} pu too low")
    i_d = (p_set * v.d + q_set * v.q) / det
    i_q = (p_set * v.q - q_set * v.d) / det
    mag = math.hypot(i_d, i_q)
    if mag > i_max:
        scale = i_max / mag
        i_d *= scale
        i_q *= scale
    return i_d, i_q


def gfl_injection(i_d: float, i_q: float, theta: float) -> complex:
    """Rotate dq current references into the network phasor frame."""
    return complex(i_d, i_q) * cmath.exp(1j * theta)
