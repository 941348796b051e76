"""Identification of branch conductances and the duty-to-spool calibration.

The procedure works per mode from constant-input step responses:

1. a passive leakage segment (delivery valve closed) isolates the
   atmospheric branch and fixes its conductance;
2. a fully-open segment isolates the source branch and fixes its
   conductance;
3. with conductances fixed, each constant-duty segment yields one
   least-squares spool-fraction estimate, and a cubic fit of the
   (duty, spool) pairs gives the calibration map.

Every fit is a one-dimensional bracketed minimization of the mismatch
between the measured pressures and a model trajectory integrated at the
trace's own sample times.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import plant as plant_mod
from .optim import golden_section
from .plant import Conductances, LoadModel, Mode, PlantParams, PlantState
from .valvemap import SpoolMap, eval_spool


class TraceDataError(ValueError):
    """Trace does not carry the information the requested fit needs."""


# Bracket for conductance fits, m^3 s^-1 Pa^-1 (searched in log space).
CONDUCTANCE_BRACKET = (1e-13, 1e-8)
# Search interval for per-segment spool fractions.
SPOOL_BRACKET = (1e-3, 1.0 - 1e-3)
# A trace must move at least this far (Pa) to be considered informative.
MIN_TRACE_SPAN = 200.0
# Minimum initial offset from atmosphere for a decay fit, Pa.
MIN_DECAY_OFFSET = 2000.0


@dataclass(frozen=True)
class StepTrace:
    """One constant-input segment of the identification protocol."""

    t: np.ndarray          # sample times, s, strictly increasing
    p: np.ndarray          # measured outlet pressure, absolute Pa
    u1: float              # polarity-selector duty, % (100 inflation, 0 deflation)
    u2: float              # delivery-valve duty, %
    kind: str              # "rise" (driven) or "decay" (passive leakage)

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        if t.ndim != 1 or p.shape != t.shape:
            raise ValueError("t and p must be 1-D arrays of equal length")
        if len(t) < 10:
            raise ValueError("a segment needs at least 10 samples")
        if not np.all(np.diff(t) > 0.0):
            raise ValueError("timestamps must be strictly increasing")
        if self.kind not in ("rise", "decay"):
            raise ValueError(f"unknown segment kind {self.kind!r}")

    @property
    def mode(self) -> Mode:
        return Mode.INFLATION if self.u1 >= 50.0 else Mode.DEFLATION

    @property
    def span(self) -> float:
        return float(np.max(self.p) - np.min(self.p))


@dataclass(frozen=True)
class IdResult:
    value: float
    residual: float        # RMS pressure mismatch at the optimum, Pa
    iterations: int

    def to_dict(self) -> dict:
        return {"value": self.value, "residual_pa": self.residual, "iterations": self.iterations}


@dataclass(frozen=True)
class SpoolPoint:
    """Spool fraction identified from one constant-duty segment."""

    u: float
    x_hat: float
    residual: float
    at_bound: bool


def simulate_at_samples(
    p0: float,
    t: Sequence[float],
    x_bar: float,
    m: Mode,
    params: PlantParams,
    load: Optional[LoadModel] = None,
) -> np.ndarray:
    """Model pressures at the given sample times, starting from p0 at t[0]."""
    out = np.empty(len(t))
    out[0] = p0
    state = PlantState(p_out=p0, t=float(t[0]))
    for i in range(1, len(t)):
        dt = float(t[i] - t[i - 1])
        state = plant_mod.step(state, x_bar, m, dt, params, load)
        out[i] = state.p_out
    return out


def _sse(pred: np.ndarray, meas: np.ndarray) -> float:
    d = pred - meas
    return float(np.dot(d, d))


def _fit_conductance(
    trace: StepTrace,
    params_for: callable,
    x_bar: float,
    m: Mode,
) -> IdResult:
    lo, hi = CONDUCTANCE_BRACKET

    def objective(log_c: float) -> float:
        p = params_for(10.0 ** log_c)
        pred = simulate_at_samples(float(trace.p[0]), trace.t, x_bar, m, p)
        return _sse(pred, trace.p)

    log_c, sse, evals = golden_section(objective, math.log10(lo), math.log10(hi), tol=1e-4)
    value = 10.0 ** log_c
    residual = math.sqrt(sse / len(trace.p))
    return IdResult(value=value, residual=residual, iterations=evals)


def fit_decay_conductance(trace: StepTrace, which: str, params: PlantParams) -> IdResult:
    """Fit the atmospheric-branch conductance from a passive decay segment.

    ``which`` is "c_oa" for a decay from above atmosphere or "c_ao" for the
    return from below; the delivery valve must have been closed (spool 0).
    """
    if which not in ("c_oa", "c_ao"):
        raise ValueError("which must be 'c_oa' or 'c_ao'")
    p0 = float(trace.p[0])
    p_end = float(trace.p[-1])
    offset = p0 - params.p_atm
    if abs(offset) < MIN_DECAY_OFFSET:
        raise TraceDataError(
            f"decay starts {offset:.0f} Pa from atmosphere; no leakage information"
        )
    if which == "c_oa" and not (offset > 0.0 and p_end < p0 - MIN_TRACE_SPAN):
        raise TraceDataError("c_oa needs a decaying trace starting above atmosphere")
    if which == "c_ao" and not (offset < 0.0 and p_end > p0 + MIN_TRACE_SPAN):
        raise TraceDataError("c_ao needs a rising trace starting below atmosphere")

    def params_for(c: float) -> PlantParams:
        return replace(params, conductances=replace(params.conductances, **{which: c}))

    return _fit_conductance(trace, params_for, x_bar=0.0, m=trace.mode)


def fit_source_conductance(trace: StepTrace, which: str, params: PlantParams) -> IdResult:
    """Fit the source-branch conductance from a fully-open segment.

    ``which`` is "c_po" (inflation toward the supply) or "c_on" (deflation
    toward the vacuum sink); the leakage conductances in ``params`` must
    already be identified.
    """
    if which not in ("c_po", "c_on"):
        raise ValueError("which must be 'c_po' or 'c_on'")
    if trace.span < MIN_TRACE_SPAN:
        raise TraceDataError("segment shows no pressure motion; cannot fit a source branch")
    m = Mode.INFLATION if which == "c_po" else Mode.DEFLATION

    def params_for(c: float) -> PlantParams:
        return replace(params, conductances=replace(params.conductances, **{which: c}))

    return _fit_conductance(trace, params_for, x_bar=1.0, m=m)


def fit_spool_segments(traces: Iterable[StepTrace], params: PlantParams) -> list[SpoolPoint]:
    """Least-squares spool fraction for each constant-duty segment.

    Conductances in ``params`` must be fixed beforehand.  Estimates landing
    on the search bounds are flagged; they carry only saturation information.
    """
    lo, hi = SPOOL_BRACKET
    points = []
    for trace in traces:
        if trace.span < MIN_TRACE_SPAN and 30.0 <= trace.u2 <= 90.0:
            raise TraceDataError(
                f"segment at duty {trace.u2}% shows no pressure change; stuck data"
            )

        def objective(x: float, trace: StepTrace = trace) -> float:
            pred = simulate_at_samples(float(trace.p[0]), trace.t, x, trace.mode, params)
            return _sse(pred, trace.p)

        x_hat, sse, _ = golden_section(objective, lo, hi, tol=1e-5)
        at_bound = x_hat <= lo + 1e-4 or x_hat >= hi - 1e-4
        points.append(
            SpoolPoint(
                u=trace.u2,
                x_hat=x_hat,
                residual=math.sqrt(sse / len(trace.p)),
                at_bound=at_bound,
            )
        )
    return points


def fit_cubic(
    pairs: Sequence[tuple[float, float]],
    u_min: float = 20.0,
    u_max: float = 100.0,
    mode: Mode = Mode.INFLATION,
) -> SpoolMap:
    """Ordinary least-squares cubic through (duty, spool) calibration pairs.

    Requires at least four distinct duties; the resulting map must pass the
    monotonicity validation of :class:`SpoolMap` or the calibration fails.
    """
    us = np.asarray([p[0] for p in pairs], dtype=float)
    xs = np.asarray([p[1] for p in pairs], dtype=float)
    if len(us) < 4:
        raise ValueError("need at least 4 calibration pairs")
    if len(np.unique(us)) < 4:
        raise ValueError("need at least 4 distinct duty levels")
    design = np.vander(us, 4, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(design, xs, rcond=None)
    if rank < 4:
        raise ValueError("rank-deficient calibration design; duties too clustered")
    return SpoolMap(a=tuple(float(c) for c in coeffs), u_min=u_min, u_max=u_max, mode=mode)


@dataclass
class ChannelIdResult:
    """Output of the full per-mode identification chain."""

    mode: Mode
    leak: IdResult         # c_oa (inflation) or c_ao (deflation)
    source: IdResult       # c_po (inflation) or c_on (deflation)
    spool_map: SpoolMap
    points: list[SpoolPoint]

    @property
    def leak_name(self) -> str:
        return "c_oa" if self.mode == Mode.INFLATION else "c_ao"

    @property
    def source_name(self) -> str:
        return "c_po" if self.mode == Mode.INFLATION else "c_on"

    def to_dict(self) -> dict:
        return {
            "mode": "inflation" if self.mode == Mode.INFLATION else "deflation",
            "conductances": {
                self.leak_name: self.leak.to_dict(),
                self.source_name: self.source.to_dict(),
            },
            "spool_map": self.spool_map.to_dict(),
            "calibration_pairs": [
                {"u_pct": p.u, "x_hat": p.x_hat, "residual_pa": p.residual, "at_bound": p.at_bound}
                for p in self.points
            ],
        }


def identify_channel(
    traces: Sequence[StepTrace],
    mode: Mode,
    params: PlantParams,
    u_min: float = 20.0,
    u_max: float = 100.0,
) -> ChannelIdResult:
    """Run the three-step identification chain for one mode.

    Expects the protocol's segments: passive decays (delivery duty 0),
    one fully-open segment (duty 100), and the constant-duty sweep.  The
    decay with the largest initial offset from atmosphere drives the leak
    fit; the fully-open segment drives the source fit; the remaining sweep
    segments, excluding saturated estimates, drive the cubic calibration.
    """
    mine = [tr for tr in traces if tr.mode == mode]
    if not mine:
        raise TraceDataError(f"no traces for mode {mode.name.lower()}")
    decays = [tr for tr in mine if tr.kind == "decay" and tr.u2 == 0.0]
    full_open = [tr for tr in mine if tr.kind == "rise" and tr.u2 >= 100.0]
    sweep = [tr for tr in mine if tr.kind == "rise" and tr.u2 < 100.0]
    missing = []
    if not decays:
        missing.append("passive decay (duty 0)")
    if not full_open:
        missing.append("fully-open segment (duty 100)")
    if len(sweep) < 4:
        missing.append("duty sweep (at least 4 levels)")
    if missing:
        raise TraceDataError(
            f"{mode.name.lower()} protocol incomplete; missing: " + "; ".join(missing)
        )

    leak_name = "c_oa" if mode == Mode.INFLATION else "c_ao"
    source_name = "c_po" if mode == Mode.INFLATION else "c_on"

    decay = max(decays, key=lambda tr: abs(float(tr.p[0]) - params.p_atm))
    leak = fit_decay_conductance(decay, leak_name, params)
    params = replace(params, conductances=replace(params.conductances, **{leak_name: leak.value}))

    rise = max(full_open, key=lambda tr: tr.span)
    source = fit_source_conductance(rise, source_name, params)
    params = replace(params, conductances=replace(params.conductances, **{source_name: source.value}))

    points = fit_spool_segments(sorted(sweep, key=lambda tr: tr.u2), params)
    interior = [(p.u, p.x_hat) for p in points if not p.at_bound]
    if len(interior) < 4:
        raise TraceDataError("fewer than 4 unsaturated sweep segments; cannot fit the map")
    spool_map = fit_cubic(interior, u_min=u_min, u_max=u_max, mode=mode)
    return ChannelIdResult(mode=mode, leak=leak, source=source, spool_map=spool_map, points=points)


# ---------------------------------------------------------------------------
# Trace CSV I/O and protocol synthesis

TRACE_COLUMNS = ("t_s", "p_pa", "u1_pct", "u2_pct", "kind")


def write_trace_csv(trace: StepTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for i in range(len(trace.t)):
            writer.writerow([
                f"{trace.t[i]:.6f}",
                f"{trace.p[i]:.6f}",
                f"{trace.u1:.1f}",
                f"{trace.u2:.1f}",
                trace.kind,
            ])


def read_trace_csv(path: str | Path) -> StepTrace:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise TraceDataError(f"{path}: expected columns {','.join(TRACE_COLUMNS)}")
        ts, ps, u1s, u2s, kinds = [], [], [], [], []
        for row in reader:
            if len(row) != 5:
                raise TraceDataError(f"{path}: malformed row {row!r}")
            ts.append(float(row[0]))
            ps.append(float(row[1]))
            u1s.append(float(row[2]))
            u2s.append(float(row[3]))
            kinds.append(row[4])
    if not ts:
        raise TraceDataError(f"{path}: empty trace")
    if len(set(u1s)) != 1 or len(set(u2s)) != 1 or len(set(kinds)) != 1:
        raise TraceDataError(f"{path}: inputs must be constant within a segment")
    return StepTrace(t=np.asarray(ts), p=np.asarray(ps), u1=u1s[0], u2=u2s[0], kind=kinds[0])


def sweep_duties(fine_stop: float = 30.0, fine_step: float = 0.2, coarse_step: float = 5.0) -> list[float]:
    """Delivery-duty sweep: dense at the opening knee, coarse above."""
    duties = [round(20.0 + k * fine_step, 10) for k in range(int(round((fine_stop - 20.0) / fine_step)) + 1)]
    u = fine_stop + coarse_step
    while u < 100.0 - 1e-9:
        duties.append(round(u, 10))
        u += coarse_step
    return duties


def simulate_segment(
    p0: float,
    x_bar: float,
    m: Mode,
    duration: float,
    params: PlantParams,
    sample_rate: float,
    sim_substep: float,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Integrate at the fine substep, sampling at the sensor rate; returns (t, p, p_end)."""
    n_sub = int(round(duration * sim_substep))
    dt = 1.0 / sim_substep
    eps = 0.5 * dt
    state = PlantState(p_out=p0, t=0.0)
    ts, ps = [0.0], [p0]
    k = 1
    for j in range(1, n_sub + 1):
        state = plant_mod.step(state, x_bar, m, dt, params)
        t = j / sim_substep
        if t + eps >= k / sample_rate:
            ts.append(t)
            ps.append(state.p_out)
            k += 1
    return np.asarray(ts), np.asarray(ps), state.p_out


@dataclass(frozen=True)
class SynthesisConfig:
    """Timing and noise settings for synthetic protocol generation."""

    sample_rate: float = 60.0
    sim_substep: float = 1000.0
    rise_duration: float = 3.0
    decay_duration: float = 2.0
    full_open_duration: float = 2.0
    full_decay_duration: float = 4.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.sim_substep >= self.sample_rate > 0.0):
            raise ValueError("rates must satisfy sim_substep >= sample_rate > 0")
        for name in ("rise_duration", "decay_duration", "full_open_duration", "full_decay_duration"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")


def synthesize_protocol(
    params: PlantParams,
    maps: tuple[SpoolMap, SpoolMap],
    modes: Sequence[Mode] = (Mode.INFLATION, Mode.DEFLATION),
    cfg: SynthesisConfig = SynthesisConfig(),
    out_dir: Optional[str | Path] = None,
) -> list[StepTrace]:
    """Generate the full identification protocol from a known channel.

    Sweep segments are driven through the ground-truth spool map; the
    fully-open and passive segments force spool fractions 1 and 0 exactly
    (constant energization and a closed valve sit outside PWM modulation).
    Optionally writes one CSV per segment into ``out_dir``.
    """
    rng = np.random.default_rng(cfg.seed)
    traces: list[StepTrace] = []

    def emit(t, p, u1, u2, kind):
        if cfg.noise_sigma > 0.0:
            p = p + rng.normal(0.0, cfg.noise_sigma, size=len(p))
        traces.append(StepTrace(t=t, p=p, u1=u1, u2=u2, kind=kind))

    for mode in modes:
        u1 = 100.0 if mode == Mode.INFLATION else 0.0
        # Fully-open segment and its passive decay: these anchor the
        # conductance fits, so they get the longest records.
        t, p, p_end = simulate_segment(
            params.p_atm, 1.0, mode, cfg.full_open_duration, params,
            cfg.sample_rate, cfg.sim_substep,
        )
        emit(t, p, u1, 100.0, "rise")
        t, p, _ = simulate_segment(
            p_end, 0.0, mode, cfg.full_decay_duration, params,
            cfg.sample_rate, cfg.sim_substep,
        )
        emit(t, p, u1, 0.0, "decay")
        for duty in sweep_duties():
            x = eval_spool(duty, maps[mode])
            t, p, p_end = simulate_segment(
                params.p_atm, x, mode, cfg.rise_duration, params,
                cfg.sample_rate, cfg.sim_substep,
            )
            emit(t, p, u1, duty, "rise")
            t, p, _ = simulate_segment(
                p_end, 0.0, mode, cfg.decay_duration, params,
                cfg.sample_rate, cfg.sim_substep,
            )
            emit(t, p, u1, 0.0, "decay")

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, trace in enumerate(traces):
            mode_name = "inflation" if trace.mode == Mode.INFLATION else "deflation"
            name = f"{mode_name}_{i:03d}_{trace.kind}_u{trace.u2:05.1f}.csv"
            write_trace_csv(trace, out / name)
    return traces
