"""Hysteresis mode supervision, dual-mode sliding-mode control, and PID.

The supervisor keeps the polarity mode fixed while the pressure stays
inside a deadband around the reference, so neither controller can chatter
the selector valve near the setpoint.  Within a mode, the sliding-mode law
inverts the channel dynamics to command a spool fraction, then maps it to a
PWM duty through the calibrated valve map; the PID baseline acts directly
in duty per kilopascal of error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from . import plant as plant_mod
from .plant import Mode, PlantParams
from .valvemap import SpoolMap, invert_spool

# Relative threshold on |g_m| below which the control law falls back to a
# saturated command instead of dividing by a near-zero input gain.
GAIN_GUARD_REL = 1e-3


@dataclass(frozen=True)
class SupervisorConfig:
    """Hysteresis half-band around the reference, Pa."""

    h: float

    def __post_init__(self) -> None:
        if not self.h > 0.0:
            raise ValueError("hysteresis half-band h must be positive")


@dataclass(frozen=True)
class SmcGains:
    """Per-mode sliding-mode gains.

    lam scales the error in the sliding variable and sets the reaching rate;
    eta is the constant reaching drive, mu the boundary-layer half-width of
    the sliding variable, and k_i the integral gain.
    """

    lam: float
    eta: float
    mu: float
    k_i: float

    def __post_init__(self) -> None:
        if self.lam <= 0.0 or self.eta <= 0.0 or self.mu <= 0.0:
            raise ValueError("lam, eta, and mu must be positive")
        if self.k_i < 0.0:
            raise ValueError("k_i must be non-negative")


@dataclass(frozen=True)
class PidGains:
    """Per-mode PID gains, duty percent per kPa of error (and its int/diff)."""

    k_p: float
    k_i: float
    k_d: float

    def __post_init__(self) -> None:
        for name in ("k_p", "k_i", "k_d"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative")


@dataclass(frozen=True)
class ControllerState:
    """Value-semantics controller memory carried between ticks."""

    mode: Mode
    e_int: float = 0.0          # integrated error; Pa*s for SMC, kPa*s for PID
    e_prev: Optional[float] = None
    u_prev: float = 0.0
    s: float = 0.0              # last sliding-variable value, Pa
    x_star: float = 0.0         # last commanded spool fraction after clipping
    gain_guard: bool = False    # last update hit the near-zero-gain fallback


def select_mode(p: float, p_ref: float, cfg: SupervisorConfig, m_prev: Mode) -> Mode:
    """Hysteresis mode selection: switch only when p leaves the deadband."""
    if p <= p_ref - cfg.h:
        return Mode.INFLATION
    if p >= p_ref + cfg.h:
        return Mode.DEFLATION
    return m_prev


def sat(z: float) -> float:
    """Identity-slope saturation: z inside [-1, 1], its sign outside."""
    if z > 1.0:
        return 1.0
    if z < -1.0:
        return -1.0
    return z


def _gain_guard_threshold(m: Mode, params: PlantParams) -> float:
    """Guard level: a small fraction of |g_m| at the mode's mid driving pressure."""
    if m == Mode.INFLATION:
        p_mid = 0.5 * (params.p_atm + params.p_pos)
    else:
        p_mid = 0.5 * (params.p_neg + params.p_atm)
    return GAIN_GUARD_REL * abs(plant_mod.gain(p_mid, m, params))


def smc_update(
    state: ControllerState,
    p: float,
    p_ref: float,
    p_ref_rate: float,
    gains: tuple[SmcGains, SmcGains],
    params: PlantParams,
    maps: tuple[SpoolMap, SpoolMap],
    cfg: SupervisorConfig,
    dt: float,
    reset_integral_on_switch: bool = False,
) -> tuple[float, ControllerState]:
    """One sliding-mode control tick; returns the PWM duty and the new state.

    The sliding variable is s = lam*e + k_i*int(e).  Matching its required
    rate -lam*s - eta*sat(s/mu) against the model dynamics and solving for
    the spool fraction gives the command, which is clipped to [0, 1] and
    pushed through the active mode's inverse valve map.

    The error integral only advances while the sliding variable sits inside
    the boundary layer and the command is unsaturated, so large transients
    cannot wind it up.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mode = select_mode(p, p_ref, cfg, state.mode)
    e_int = state.e_int
    if reset_integral_on_switch and mode != state.mode:
        e_int = 0.0
    g = gains[mode]
    spool_map = maps[mode]

    e = p - p_ref
    e_int_next = e_int + e * dt
    s = g.lam * e + g.k_i * e_int_next
    if abs(s) > g.mu:
        # Outside the boundary layer: hold the integral and keep s consistent.
        e_int_next = e_int
        s = g.lam * e + g.k_i * e_int_next

    # Noisy measurements can land outside the physical rails; clamp for the
    # model-inversion terms only (the error keeps the raw measurement).
    p_model = min(max(p, params.p_neg), params.p_pos)
    f = plant_mod.drift(p_model, params)
    g_m = plant_mod.gain(p_model, mode, params)
    numerator = -f + p_ref_rate - s - (g.eta / g.lam) * sat(s / g.mu) - (g.k_i / g.lam) * e

    guard = False
    if abs(g_m) < _gain_guard_threshold(mode, params):
        guard = True
        # Sign of the gain is unreliable here; open fully if the demanded
        # rate points the way this mode can push, otherwise close.
        g_sign = 1.0 if mode == Mode.INFLATION else -1.0
        x_raw = math.inf if numerator * g_sign > 0.0 else 0.0
    else:
        x_raw = numerator / g_m

    x_star = min(1.0, max(0.0, x_raw))
    if x_raw < 0.0 or x_raw > 1.0:
        e_int_next = e_int
    u = invert_spool(x_star, spool_map)
    new_state = ControllerState(
        mode=mode,
        e_int=e_int_next,
        e_prev=e,
        u_prev=u,
        s=s,
        x_star=x_star,
        gain_guard=guard,
    )
    return u, new_state


@dataclass(frozen=True)
class PidState:
    """State of the two mode-dependent PID controllers.

    Each mode keeps its own integral and previous error, indexed by mode
    value; integrals persist while the other controller is engaged.
    """

    mode: Mode
    e_int: tuple[float, float] = (0.0, 0.0)
    e_prev: tuple[Optional[float], Optional[float]] = (None, None)
    u_prev: float = 0.0


def pid_update(
    state: PidState,
    p: float,
    p_ref: float,
    gains: tuple[PidGains, PidGains],
    cfg: SupervisorConfig,
    dt: float,
) -> tuple[float, PidState]:
    """One PID tick of the active mode's controller; returns duty in [0, 100].

    The error is polarity-corrected so positive error always means "open the
    valve harder": (p_ref - p) in inflation, (p - p_ref) in deflation, in
    kPa.  The derivative is an unfiltered first difference; the integral
    freezes while it would push the output deeper into saturation.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    mode = select_mode(p, p_ref, cfg, state.mode)
    g = gains[mode]
    e = (p_ref - p) / 1000.0 if mode == Mode.INFLATION else (p - p_ref) / 1000.0
    e_prev = state.e_prev[mode]
    de = 0.0 if e_prev is None else (e - e_prev) / dt
    e_int = state.e_int[mode]
    u_raw = g.k_p * e + g.k_i * e_int + g.k_d * de
    u = min(100.0, max(0.0, u_raw))
    winds_deeper = (u_raw > 100.0 and e > 0.0) or (u_raw < 0.0 and e < 0.0)
    if not winds_deeper:
        e_int = e_int + e * dt

    e_ints = list(state.e_int)
    e_prevs = list(state.e_prev)
    e_ints[mode] = e_int
    e_prevs[mode] = e
    new_state = PidState(
        mode=mode,
        e_int=(e_ints[0], e_ints[1]),
        e_prev=(e_prevs[0], e_prevs[1]),
        u_prev=u,
    )
    return u, new_state
