"""Closed-loop scenario execution, reference generation, and benchmark metrics.

The simulation advances the plant on a fine fixed substep; a sensor samples
the true pressure at its own rate with seeded Gaussian noise, and the
controller reads the latest held sample at the control rate (zero-order
hold everywhere).  Logged trajectories feed the stage- or period-windowed
metrics used to compare controllers.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from . import mpc as mpc_mod
from . import plant as plant_mod
from .control import (
    ControllerState,
    PidGains,
    PidState,
    SmcGains,
    SupervisorConfig,
    pid_update,
    select_mode,
    smc_update,
)
from .plant import LoadModel, Mode, PlantParams, PlantState
from .valvemap import SpoolMap, eval_spool


class ScenarioEnd(ValueError):
    """Reference queried past the end of the scenario."""


@dataclass(frozen=True)
class Reference:
    """Pressure reference: a multi-step stage list or a sinusoid.

    Levels and amplitude are gauge kPa; :func:`reference_at` converts to
    absolute pascals.
    """

    kind: str
    stages: tuple[tuple[float, float], ...] = ()
    amplitude_kpa: float = 50.0
    frequency_hz: float = 0.5
    cycles: int = 3

    def __post_init__(self) -> None:
        if self.kind == "multi-step":
            if not self.stages:
                raise ValueError("multi-step reference needs at least one stage")
            for level, hold in self.stages:
                if hold <= 0.0:
                    raise ValueError("stage hold must be positive")
        elif self.kind == "sinusoid":
            if self.frequency_hz <= 0.0:
                raise ValueError("sinusoid frequency must be positive")
            if self.cycles < 1:
                raise ValueError("sinusoid needs at least one cycle")
        else:
            raise ValueError(f"unknown reference kind {self.kind!r}")

    @classmethod
    def multi_step(cls, stages: list[tuple[float, float]]) -> "Reference":
        return cls(kind="multi-step", stages=tuple((float(l), float(h)) for l, h in stages))

    @classmethod
    def sinusoid(cls, amplitude_kpa: float, frequency_hz: float, cycles: int) -> "Reference":
        return cls(
            kind="sinusoid",
            amplitude_kpa=float(amplitude_kpa),
            frequency_hz=float(frequency_hz),
            cycles=int(cycles),
        )

    @property
    def duration(self) -> float:
        if self.kind == "multi-step":
            return sum(hold for _, hold in self.stages)
        return self.cycles / self.frequency_hz

    def window_edges(self) -> list[float]:
        """Window boundaries for metrics: stage starts or period starts, plus the end."""
        if self.kind == "multi-step":
            edges = [0.0]
            for _, hold in self.stages:
                edges.append(edges[-1] + hold)
            return edges
        period = 1.0 / self.frequency_hz
        return [i * period for i in range(self.cycles + 1)]


def reference_at(ref: Reference, t: float, p_atm: float) -> tuple[float, float]:
    """Reference pressure (absolute Pa) and its rate (Pa/s) at time ``t``."""
    if t < 0.0:
        raise ValueError("time must be non-negative")
    if t > ref.duration * (1.0 + 1e-12):
        raise ScenarioEnd(f"t={t!r} beyond scenario end {ref.duration!r}")
    if ref.kind == "multi-step":
        acc = 0.0
        for level, hold in ref.stages:
            acc += hold
            if t < acc:
                return p_atm + 1000.0 * level, 0.0
        return p_atm + 1000.0 * ref.stages[-1][0], 0.0
    w = 2.0 * math.pi * ref.frequency_hz
    p_ref = p_atm + 1000.0 * ref.amplitude_kpa * math.sin(w * t)
    rate = 1000.0 * ref.amplitude_kpa * w * math.cos(w * t)
    return p_ref, rate


@dataclass(frozen=True)
class TimingConfig:
    """Rates, duration, sensor noise, and the RNG seed of one scenario run."""

    control_rate: float = 100.0
    sensor_rate: float = 60.0
    sim_substep: float = 1000.0
    duration: Optional[float] = None
    noise_sigma: float = 500.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.sim_substep >= self.control_rate >= 1.0):
            raise ValueError("rates must satisfy sim_substep >= control_rate >= 1")
        if self.sensor_rate <= 0.0:
            raise ValueError("sensor_rate must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.duration is not None and self.duration <= 0.0:
            raise ValueError("duration must be positive")


@dataclass
class Trajectory:
    """Control-tick log of one closed-loop run.  Pressures are absolute Pa."""

    t: np.ndarray
    p_ref: np.ndarray
    p_true: np.ndarray
    p_meas: np.ndarray
    u: np.ndarray
    mode: np.ndarray
    ct: np.ndarray                       # controller compute time per tick, s
    s: np.ndarray                        # sliding variable (NaN for non-SMC)
    x_star: np.ndarray                   # commanded spool fraction (NaN if n/a)
    flags: list[str] = field(default_factory=list)


class ControllerLoop(Protocol):
    def update(self, t: float, p_meas: float, p_ref: float, p_ref_rate: float) -> tuple[float, Mode]:
        """Return (duty %, active mode) for this tick."""

    @property
    def diagnostics(self) -> dict:
        """Extras from the latest update (sliding variable, flags, ...)."""


class DmSmcLoop:
    """Dual-mode sliding-mode controller bound to one scenario loop."""

    name = "dm-smc"

    def __init__(
        self,
        params: PlantParams,
        maps: tuple[SpoolMap, SpoolMap],
        gains: tuple[SmcGains, SmcGains],
        supervisor: SupervisorConfig,
        dt: float,
        initial_mode: Mode = Mode.INFLATION,
    ):
        self._params = params
        self._maps = maps
        self._gains = gains
        self._sup = supervisor
        self._dt = dt
        self.state = ControllerState(mode=initial_mode)

    def update(self, t, p_meas, p_ref, p_ref_rate):
        u, self.state = smc_update(
            self.state, p_meas, p_ref, p_ref_rate,
            self._gains, self._params, self._maps, self._sup, self._dt,
        )
        return u, self.state.mode

    @property
    def diagnostics(self) -> dict:
        return {
            "s": self.state.s,
            "x_star": self.state.x_star,
            "flag": "gain-guard" if self.state.gain_guard else "",
        }


class PidLoop:
    """Mode-gated PID controller bound to one scenario loop."""

    name = "pid"

    def __init__(
        self,
        gains: tuple[PidGains, PidGains],
        supervisor: SupervisorConfig,
        dt: float,
        initial_mode: Mode = Mode.INFLATION,
    ):
        self._gains = gains
        self._sup = supervisor
        self._dt = dt
        self.state = PidState(mode=initial_mode)

    def update(self, t, p_meas, p_ref, p_ref_rate):
        u, self.state = pid_update(self.state, p_meas, p_ref, self._gains, self._sup, self._dt)
        return u, self.state.mode

    @property
    def diagnostics(self) -> dict:
        return {"s": math.nan, "x_star": math.nan, "flag": ""}


class NmpcLoop:
    """Receding-horizon NMPC under the hysteresis-selected mode."""

    name = "nmpc"

    def __init__(
        self,
        params: PlantParams,
        maps: tuple[SpoolMap, SpoolMap],
        load: LoadModel,
        cfg: mpc_mod.MpcConfig,
        supervisor: SupervisorConfig,
        ref: Reference,
        initial_mode: Mode = Mode.INFLATION,
    ):
        self._params = params
        self._maps = maps
        self._load = load
        self._cfg = cfg
        self._sup = supervisor
        self._ref = ref
        self._mode = initial_mode
        self._prev_u: Optional[tuple[float, ...]] = None
        self._last_flag = ""

    def _horizon_refs(self, t: float) -> list[float]:
        t_last = self._ref.duration
        refs = []
        for k in range(self._cfg.horizon_steps):
            tq = min(t + (k + 1) * self._cfg.dt_pred, t_last)
            refs.append(reference_at(self._ref, tq, self._params.p_atm)[0])
        return refs

    def update(self, t, p_meas, p_ref, p_ref_rate):
        self._mode = select_mode(p_meas, p_ref, self._sup, self._mode)
        warm = None
        if self._prev_u is not None:
            warm = self._prev_u[1:] + self._prev_u[-1:]
        sol = mpc_mod.nmpc_solve(
            p_meas, self._horizon_refs(t), self._mode,
            self._cfg, self._params, self._maps, self._load, u_init=warm,
        )
        self._prev_u = tuple(sol.u_seq)
        self._last_flag = "iter-cap" if sol.hit_iter_cap else ""
        return sol.u_seq[0], self._mode

    @property
    def diagnostics(self) -> dict:
        return {"s": math.nan, "x_star": math.nan, "flag": self._last_flag}


class MinmpcLoop:
    """Receding-horizon MPC optimizing mode sequence and duty jointly."""

    name = "mi-nmpc"

    def __init__(
        self,
        params: PlantParams,
        maps: tuple[SpoolMap, SpoolMap],
        load: LoadModel,
        cfg: mpc_mod.MpcConfig,
        ref: Reference,
        initial_mode: Mode = Mode.INFLATION,
    ):
        self._params = params
        self._maps = maps
        self._load = load
        self._cfg = cfg
        self._ref = ref
        self._mode = initial_mode
        self._last_flag = ""

    def _horizon_refs(self, t: float) -> list[float]:
        t_last = self._ref.duration
        return [
            reference_at(self._ref, min(t + (k + 1) * self._cfg.dt_pred, t_last), self._params.p_atm)[0]
            for k in range(self._cfg.horizon_steps)
        ]

    def update(self, t, p_meas, p_ref, p_ref_rate):
        sol = mpc_mod.minmpc_solve(
            p_meas, self._horizon_refs(t), self._cfg, self._params, self._maps, self._load,
        )
        self._mode = sol.m_seq[0]
        self._last_flag = "iter-cap" if sol.hit_iter_cap else ""
        return sol.u_seq[0], self._mode

    @property
    def diagnostics(self) -> dict:
        return {"s": math.nan, "x_star": math.nan, "flag": self._last_flag}


def run_scenario(
    ref: Reference,
    controller: ControllerLoop,
    timing: TimingConfig,
    params: PlantParams,
    maps: tuple[SpoolMap, SpoolMap],
    load: Optional[LoadModel] = None,
    p_init: Optional[float] = None,
) -> Trajectory:
    """Execute one closed-loop scenario and log every control tick.

    Deterministic for a fixed seed: the plant substep, sensor schedule, and
    noise draws are all derived from the timing config alone.
    """
    duration = timing.duration if timing.duration is not None else ref.duration
    duration = min(duration, ref.duration)
    rng = np.random.default_rng(timing.seed)
    dt_sub = 1.0 / timing.sim_substep
    dt_ctrl = 1.0 / timing.control_rate
    n_sub = int(round(duration * timing.sim_substep))
    eps = 0.5 * dt_sub

    p0 = reference_at(ref, 0.0, params.p_atm)[0] if p_init is None else p_init
    state = PlantState(p_out=p0, t=0.0)

    held = p0
    k_sensor = 0
    k_ctrl = 0
    x_bar = 0.0
    mode = Mode.INFLATION

    rows_t, rows_ref, rows_true, rows_meas = [], [], [], []
    rows_u, rows_mode, rows_ct, rows_s, rows_x = [], [], [], [], []
    flags: list[str] = []

    for j in range(n_sub):
        t = j / timing.sim_substep
        if t + eps >= k_sensor / timing.sensor_rate:
            noise = rng.normal(0.0, timing.noise_sigma) if timing.noise_sigma > 0.0 else 0.0
            held = state.p_out + noise
            k_sensor += 1
        if t + eps >= k_ctrl / timing.control_rate:
            p_ref, p_rate = reference_at(ref, t, params.p_atm)
            t0 = time.perf_counter()
            u, mode = controller.update(t, held, p_ref, p_rate)
            ct = time.perf_counter() - t0
            x_bar = eval_spool(u, maps[mode])
            diag = controller.diagnostics
            rows_t.append(t)
            rows_ref.append(p_ref)
            rows_true.append(state.p_out)
            rows_meas.append(held)
            rows_u.append(u)
            rows_mode.append(int(mode))
            rows_ct.append(ct)
            rows_s.append(diag.get("s", math.nan))
            rows_x.append(diag.get("x_star", math.nan))
            flags.append(diag.get("flag", ""))
            k_ctrl += 1
        state = plant_mod.step(state, x_bar, mode, dt_sub, params, load)

    return Trajectory(
        t=np.asarray(rows_t),
        p_ref=np.asarray(rows_ref),
        p_true=np.asarray(rows_true),
        p_meas=np.asarray(rows_meas),
        u=np.asarray(rows_u),
        mode=np.asarray(rows_mode, dtype=int),
        ct=np.asarray(rows_ct),
        s=np.asarray(rows_s),
        x_star=np.asarray(rows_x),
        flags=flags,
    )


@dataclass
class MetricsReport:
    """Window-averaged tracking metrics in gauge kPa (duty in %, times in s)."""

    e_ss: float
    ae: float
    itae: float
    pwm_e: float
    switches: float
    max_abs_e: float
    ct_mean: float
    per_window: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "e_ss_kpa": self.e_ss,
            "ae_kpa": self.ae,
            "itae_kpa_s2": self.itae,
            "pwm_e_pct_s": self.pwm_e,
            "switches": self.switches,
            "max_abs_e_kpa": self.max_abs_e,
            "ct_mean_s": self.ct_mean,
            "per_window": self.per_window,
        }


def compute_metrics(traj: Trajectory, ref: Reference, window_policy: str = "auto") -> MetricsReport:
    """Per-window metrics averaged across stage or period windows.

    Errors use the true pressure.  Integrals use the rectangle rule on the
    control grid; the ITAE time origin resets at each window start, and the
    steady-state error averages |e| over the final 20% of each window.
    """
    if window_policy == "auto":
        window_policy = "stage" if ref.kind == "multi-step" else "period"
    if window_policy not in ("stage", "period"):
        raise ValueError(f"unknown window policy {window_policy!r}")

    edges = ref.window_edges()
    t = traj.t
    if len(t) < 2:
        raise ValueError("trajectory too short for metrics")
    dt = float(t[1] - t[0])
    e_kpa = (traj.p_true - traj.p_ref) / 1000.0
    abs_e = np.abs(e_kpa)

    per: dict[str, list[float]] = {
        "ae": [], "itae": [], "pwm_e": [], "switches": [], "e_ss": [], "max_abs_e": [],
    }
    eps = 0.25 * dt
    for w0, w1 in zip(edges[:-1], edges[1:]):
        idx = np.nonzero((t >= w0 - eps) & (t < w1 - eps))[0]
        if idx.size == 0:
            raise ValueError(f"no samples in window [{w0}, {w1}); check rates and duration")
        ew = abs_e[idx]
        tw = t[idx] - w0
        per["ae"].append(float(np.mean(ew)))
        per["itae"].append(float(np.sum(tw * ew) * dt))
        per["pwm_e"].append(float(np.sum(np.abs(traj.u[idx])) * dt))
        prev = traj.mode[idx - 1] if idx[0] > 0 else np.concatenate(([traj.mode[idx[0]]], traj.mode[idx[:-1]]))
        per["switches"].append(int(np.sum(traj.mode[idx] != prev)))
        ss_mask = tw >= 0.8 * (w1 - w0)
        per["e_ss"].append(float(np.mean(ew[ss_mask])) if np.any(ss_mask) else float(ew[-1]))
        per["max_abs_e"].append(float(np.max(ew)))

    return MetricsReport(
        e_ss=float(np.mean(per["e_ss"])),
        ae=float(np.mean(per["ae"])),
        itae=float(np.mean(per["itae"])),
        pwm_e=float(np.mean(per["pwm_e"])),
        switches=float(np.mean(per["switches"])),
        max_abs_e=float(np.max(per["max_abs_e"])),
        ct_mean=float(np.mean(traj.ct)),
        per_window=per,
    )


def write_trajectory_csv(traj: Trajectory, path, p_atm: float) -> None:
    """Write the control-tick log as CSV with pressures in gauge kPa."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_s,pref_kpa,ptrue_kpa,pmeas_kpa,u_pct,mode,ct_us\n")
        for i in range(len(traj.t)):
            fh.write(
                f"{traj.t[i]:.4f},"
                f"{(traj.p_ref[i] - p_atm) / 1000.0:.6f},"
                f"{(traj.p_true[i] - p_atm) / 1000.0:.6f},"
                f"{(traj.p_meas[i] - p_atm) / 1000.0:.6f},"
                f"{traj.u[i]:.4f},"
                f"{int(traj.mode[i])},"
                f"{int(round(traj.ct[i] * 1e6))}\n"
            )
