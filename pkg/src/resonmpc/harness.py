"""Closed-loop scenario runner, metrics and benchmark campaigns.

Every scenario follows the same per-cycle loop: measure the true plant
state, optionally correct the power setpoint from the previous cycle's
measured power, query the selected controller, then advance the true
plant by exactly one switching cycle.  The plant path is identical for
all controller kinds; only the input selection differs.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ArgumentError, NumericError
from .nmpc import (
    CorrectionState,
    NmpcConfig,
    RecedingHorizonController,
    apply_correction,
)
from .plant import ControlInput, ConverterParams, PlantState, simulate_cycle
from .policy import PolicyNetwork, forward
from .quant import QuantizedNetwork, forward_q

__all__ = [
    "Scenario",
    "RunMetrics",
    "CycleRecord",
    "CONTROLLER_KINDS",
    "DEFAULT_WARMUP_INPUT",
    "run_closed_loop",
    "compute_metrics",
    "run_benchmark",
    "run_param_grid",
    "pi_tune",
    "write_trace_csv",
    "write_summary_json",
]

CONTROLLER_KINDS = ("exact-nmpc", "dnn", "dnn-quant", "pi-freq", "pi-duty")
DEFAULT_WARMUP_INPUT = ControlInput(100e3, 0.5)
DEFAULT_PI_FIXED_FREQ = 31e3

# velocity-form PI gains found by pi_tune on the nominal plant; see pi_tune
DEFAULT_PI_FREQ_GAINS = (1.0, 3.0)  # Hz per W
DEFAULT_PI_DUTY_GAINS = (2e-6, 6e-6)  # duty per W

TRACE_COLUMNS = (
    "cycle",
    "t_start_s",
    "fsw_hz",
    "duty",
    "io_start_a",
    "vc_start_v",
    "p_avg_w",
    "p_des_w",
    "p_des_corrected_w",
    "zvs_on_ok",
    "zvs_off_ok",
    "solver_status",
)


@dataclass(frozen=True)
class Scenario:
    """One closed-loop run: setpoint schedule, plant/model params, controller.

    schedule entries are (start_cycle, p_des_watts); the setpoint holds until
    the next entry.  model_params is what the controller believes; it may
    differ from plant_params to emulate parameter error.
    """

    schedule: tuple
    total_cycles: int
    plant_params: ConverterParams
    model_params: ConverterParams
    controller: str
    warmup_cycles: int = 5
    warmup_input: ControlInput = DEFAULT_WARMUP_INPUT
    correction: bool = False
    correction_gain: float = 0.8
    correction_start: int = 0
    correction_delay: int = 5
    correction_interval: int = 4
    correction_cmd_max: float = 4000.0
    seed: int = 0

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ArgumentError(
                f"controller must be one of {CONTROLLER_KINDS}, got {self.controller!r}"
            )
        if not self.schedule:
            raise ArgumentError("schedule must be nonempty")
        starts = [c for c, _ in self.schedule]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ArgumentError("schedule cycle indices must be strictly increasing")
        if self.total_cycles < starts[-1]:
            raise ArgumentError(
                f"total_cycles={self.total_cycles} is before the last "
                f"schedule entry at cycle {starts[-1]}"
            )
        if self.warmup_cycles < 0:
            raise ArgumentError("warmup_cycles must be non-negative")
        if self.correction_interval < 1:
            raise ArgumentError("correction_interval must be >= 1")

    def setpoint_at(self, cycle: int) -> float:
        p = self.schedule[0][1]
        for start, p_des in self.schedule:
            if cycle >= start:
                p = p_des
        return p


@dataclass(frozen=True)
class CycleRecord:
    """Per-cycle log row; field names match the trace CSV columns."""

    cycle: int
    t_start_s: float
    fsw_hz: float
    duty: float
    io_start_a: float
    vc_start_v: float
    p_avg_w: float
    p_des_w: float
    p_des_corrected_w: float
    zvs_on_ok: bool
    zvs_off_ok: bool
    solver_status: str


@dataclass(frozen=True)
class RunMetrics:
    """Aggregate closed-loop quality figures for one scenario run.

    steady_state_errors has one entry per setpoint segment; None marks a
    segment too short to measure (fewer than 11 cycles).
    """

    avg_tracking_error_w: float
    zvs_violation_pct: float
    steady_state_errors_w: tuple
    n_cycles: int

    def __post_init__(self):
        if not (0.0 <= self.zvs_violation_pct <= 100.0):
            raise ArgumentError("zvs_violation_pct outside [0, 100]")
        if self.avg_tracking_error_w < 0:
            raise ArgumentError("avg_tracking_error_w must be non-negative")


class _PiController:
    """Velocity-form PI on a single input; the other input stays fixed.

    pi-freq drives the switching frequency at duty 0.5 (power falls with
    frequency above resonance, hence the sign flip); pi-duty drives the
    duty ratio at a fixed frequency.  Clamping the stored input to its box
    doubles as anti-windup.
    """

    def __init__(self, kind: str, config: NmpcConfig, gains, fixed_freq: float):
        self.kind = kind
        self.config = config
        self.kp, self.ki = gains
        self.e_prev = 0.0
        if kind == "pi-freq":
            self.u_var = config.f_max
        else:
            self.u_var = config.d_min
        self.fixed_freq = fixed_freq

    def step(self, measurement: PlantState, p_des: float, p_meas: float):
        e = p_des - p_meas
        du = self.kp * (e - self.e_prev) + self.ki * e
        self.e_prev = e
        if self.kind == "pi-freq":
            self.u_var = min(max(self.u_var - du, self.config.f_min), self.config.f_max)
            return ControlInput(self.u_var, 0.5), "pi"
        self.u_var = min(max(self.u_var + du, self.config.d_min), self.config.d_max)
        return ControlInput(self.fixed_freq, self.u_var), "pi"


def _make_controller(
    sc: Scenario,
    nmpc_config: NmpcConfig,
    net: Optional[PolicyNetwork],
    qnet: Optional[QuantizedNetwork],
    pi_gains,
    pi_fixed_freq: float,
):
    if sc.controller == "exact-nmpc":
        return RecedingHorizonController(nmpc_config, sc.model_params)
    if sc.controller == "dnn":
        if net is None:
            raise ArgumentError("scenario controller 'dnn' needs a trained network")
        return net
    if sc.controller == "dnn-quant":
        if qnet is None:
            raise ArgumentError(
                "scenario controller 'dnn-quant' needs a quantized network"
            )
        return qnet
    gains = pi_gains or (
        DEFAULT_PI_FREQ_GAINS if sc.controller == "pi-freq" else DEFAULT_PI_DUTY_GAINS
    )
    return _PiController(sc.controller, nmpc_config, gains, pi_fixed_freq)


def run_closed_loop(
    sc: Scenario,
    nmpc_config: Optional[NmpcConfig] = None,
    net: Optional[PolicyNetwork] = None,
    qnet: Optional[QuantizedNetwork] = None,
    pi_gains=None,
    pi_fixed_freq: float = DEFAULT_PI_FIXED_FREQ,
    x0: PlantState = PlantState(0.0, 0.0),
):
    """Run one scenario against the true plant; returns (records, metrics)."""
    cfg = nmpc_config or NmpcConfig()
    ctrl = _make_controller(sc, cfg, net, qnet, pi_gains, pi_fixed_freq)

    state = x0
    t = 0.0
    corr: Optional[CorrectionState] = None
    last_p_avg: Optional[float] = None
    corr_window: list = []  # measured powers since the last correction update
    seg_start = 0
    last_p_des = None
    records = []
    for cycle in range(sc.total_cycles):
        p_des = sc.setpoint_at(cycle)
        if p_des != last_p_des:
            seg_start = cycle
            last_p_des = p_des
        if cycle < sc.warmup_cycles:
            u, status = sc.warmup_input, "warmup"
            p_cmd = p_des
            corr = None
        else:
            # correction waits out the step transient, counted from the last
            # setpoint change or the start of closed-loop control (whichever
            # is later), then integrates the setpoint with windup clamping.
            # Updates run every correction_interval cycles on the power
            # measured over the settled half of the interval: the plant takes
            # a few cycles to settle after each command change, and feeding
            # mid-transient measurements back every cycle turns the
            # integrator into a delayed loop that rings at loop gains the
            # settled cadence handles comfortably.
            transient_start = max(seg_start, sc.warmup_cycles)
            active = (
                sc.correction
                and cycle >= sc.correction_start
                and cycle - transient_start >= sc.correction_delay
            )
            if active:
                if corr is None or corr.p_des_orig != p_des:
                    corr = CorrectionState(p_des, p_des, sc.correction_gain)
                    corr_window = []
                else:
                    if last_p_avg is not None:
                        corr_window.append(last_p_avg)
                    if len(corr_window) >= sc.correction_interval:
                        settled = corr_window[sc.correction_interval // 2:]
                        corr = apply_correction(corr, sum(settled) / len(settled))
                        clamped = min(max(corr.p_des_current, 0.0), sc.correction_cmd_max)
                        corr = replace(corr, p_des_current=clamped)
                        corr_window = []
                p_cmd = corr.p_des_current
            else:
                corr = None
                p_cmd = p_des
            if isinstance(ctrl, RecedingHorizonController):
                u, status = ctrl.step(state, p_cmd)
            elif isinstance(ctrl, _PiController):
                u, status = ctrl.step(state, p_cmd, last_p_avg if last_p_avg is not None else 0.0)
            elif isinstance(ctrl, QuantizedNetwork):
                u = forward_q(ctrl, (state.i_o, state.v_c, p_cmd))
                status = "dnn-quant"
            else:
                u = forward(ctrl, (state.i_o, state.v_c, p_cmd))
                status = "dnn"

        res = simulate_cycle(state, sc.plant_params, u, n_trace=2)
        records.append(
            CycleRecord(
                cycle=cycle,
                t_start_s=t,
                fsw_hz=u.f_sw,
                duty=u.duty,
                io_start_a=state.i_o,
                vc_start_v=state.v_c,
                p_avg_w=res.p_avg,
                p_des_w=p_des,
                p_des_corrected_w=p_cmd,
                zvs_on_ok=res.zvs_on_ok,
                zvs_off_ok=res.zvs_off_ok,
                solver_status=status,
            )
        )
        state = res.state_end
        t += u.period
        last_p_avg = res.p_avg
    metrics = compute_metrics(records, warmup_cycles=sc.warmup_cycles)
    return records, metrics


def compute_metrics(records, warmup_cycles: int = 0) -> RunMetrics:
    """Aggregate per-cycle records into RunMetrics.

    Tracking error averages |p_avg - p_des| over all post-warmup cycles,
    transient included.  Steady-state error per segment is the offset of the
    settled power from the setpoint, |mean(p_avg) - p_des| over the
    segment's last 10 cycles -- the average first, so cycle-to-cycle
    switching ripple (which any multi-cycle power measurement averages out)
    does not register as error; segments of 10 cycles or fewer get None.
    Only per-cycle values enter, so the numbers do not depend on
    intra-cycle trace sampling.
    """
    if not records:
        raise ArgumentError("records must be nonempty")
    active = [r for r in records if r.cycle >= warmup_cycles]
    if not active:
        raise ArgumentError("no post-warmup cycles to evaluate")
    errs = np.array([abs(r.p_avg_w - r.p_des_w) for r in active])
    violations = sum(1 for r in active if not (r.zvs_on_ok and r.zvs_off_ok))

    # split into contiguous constant-setpoint segments
    ss_errors = []
    seg = [active[0]]
    for r in active[1:]:
        if r.p_des_w != seg[-1].p_des_w:
            ss_errors.append(_segment_steady_error(seg))
            seg = []
        seg.append(r)
    ss_errors.append(_segment_steady_error(seg))

    return RunMetrics(
        avg_tracking_error_w=float(errs.mean()),
        zvs_violation_pct=100.0 * violations / len(active),
        steady_state_errors_w=tuple(ss_errors),
        n_cycles=len(active),
    )


def _segment_steady_error(seg):
    # steady state is the last 10 cycles; only defined once the segment has
    # been given at least 10 cycles to settle first
    if len(seg) <= 10:
        return None
    tail = seg[-10:]
    return float(abs(np.mean([r.p_avg_w - r.p_des_w for r in tail])))


def _perturbed_params(params: ConverterParams, rng, error: float) -> ConverterParams:
    """Load resistance and inductance scaled by independent U[1-e, 1+e] draws."""
    if error == 0.0:
        return params
    scale_r = rng.uniform(1.0 - error, 1.0 + error)
    scale_l = rng.uniform(1.0 - error, 1.0 + error)
    return replace(params, r_l=params.r_l * scale_r, l_r=params.l_r * scale_l)


def _benchmark_run(args):
    """One paired benchmark run: same schedule and plant for every controller."""
    (run_idx, controllers, params, nmpc_config, net, qnet, param_error,
     seed, n_segments, cycles_per_segment, warmup) = args
    rng = np.random.default_rng(seed + run_idx)
    setpoints = rng.uniform(500.0, 3000.0, n_segments)
    plant = _perturbed_params(params, rng, param_error)
    schedule = tuple(
        (warmup + k * cycles_per_segment, float(p)) for k, p in enumerate(setpoints)
    )
    total = warmup + n_segments * cycles_per_segment
    out = {}
    for kind in controllers:
        sc = Scenario(
            schedule=schedule,
            total_cycles=total,
            plant_params=plant,
            model_params=params,
            controller=kind,
            warmup_cycles=warmup,
            seed=seed + run_idx,
        )
        _, m = run_closed_loop(sc, nmpc_config=nmpc_config, net=net, qnet=qnet)
        out[kind] = m
    return run_idx, out


def run_benchmark(
    n_runs: int,
    controllers,
    params: ConverterParams,
    nmpc_config: Optional[NmpcConfig] = None,
    net: Optional[PolicyNetwork] = None,
    qnet: Optional[QuantizedNetwork] = None,
    param_error: float = 0.0,
    seed: int = 0,
    n_segments: int = 3,
    cycles_per_segment: int = 5,
    warmup: int = 5,
    n_jobs: int = 1,
) -> dict:
    """Random-setpoint campaign; identical scenarios across controllers.

    Each run draws its setpoints (uniform on [500, 3000] W) and, when
    param_error > 0, its own plant perturbation; every controller then faces
    exactly the same run, so comparisons are paired.
    """
    for kind in controllers:
        if kind not in CONTROLLER_KINDS:
            raise ArgumentError(f"unknown controller kind {kind!r}")
    cfg = nmpc_config or NmpcConfig()
    jobs = [
        (r, tuple(controllers), params, cfg, net, qnet, param_error,
         seed, n_segments, cycles_per_segment, warmup)
        for r in range(n_runs)
    ]
    per_run = [None] * n_runs
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            for run_idx, out in pool.map(_benchmark_run, jobs):
                per_run[run_idx] = out
    else:
        for job in jobs:
            run_idx, out = _benchmark_run(job)
            per_run[run_idx] = out

    summary = {"n_runs": n_runs, "param_error": param_error, "seed": seed,
               "controllers": {}}
    for kind in controllers:
        ms = [run[kind] for run in per_run]
        total_cycles = sum(m.n_cycles for m in ms)
        violations = sum(m.zvs_violation_pct / 100.0 * m.n_cycles for m in ms)
        summary["controllers"][kind] = {
            "mean_tracking_error_w": float(np.mean([m.avg_tracking_error_w for m in ms])),
            "zvs_violation_pct": 100.0 * violations / total_cycles,
            "per_run_tracking_error_w": [m.avg_tracking_error_w for m in ms],
        }
    return summary


def run_param_grid(
    params: ConverterParams,
    qnet: QuantizedNetwork,
    nmpc_config: Optional[NmpcConfig] = None,
    setpoints=(1000.0, 2000.0, 3000.0),
    r_errors=(-0.15, 0.0, 0.15),
    l_errors=(-0.15, 0.0, 0.15),
    correction: bool = True,
    correction_gain: float = 0.8,
    cycles: int = 100,
    warmup: int = 5,
) -> dict:
    """Steady-state tracking across a parameter-error grid, quantized policy.

    Returns {"cells": [...]} with one entry per (r_error, l_error, setpoint)
    combination carrying the steady-state error and ZVS violation rate.
    """
    cfg = nmpc_config or NmpcConfig()
    cells = []
    for r_err in r_errors:
        for l_err in l_errors:
            plant = replace(
                params, r_l=params.r_l * (1.0 + r_err), l_r=params.l_r * (1.0 + l_err)
            )
            for p_des in setpoints:
                sc = Scenario(
                    schedule=((warmup, float(p_des)),),
                    total_cycles=warmup + cycles,
                    plant_params=plant,
                    model_params=params,
                    controller="dnn-quant",
                    warmup_cycles=warmup,
                    correction=correction,
                    correction_gain=correction_gain,
                )
                _, m = run_closed_loop(sc, nmpc_config=cfg, qnet=qnet)
                cells.append({
                    "r_error": r_err,
                    "l_error": l_err,
                    "p_des_w": float(p_des),
                    "steady_state_error_w": m.steady_state_errors_w[-1],
                    "zvs_violation_pct": m.zvs_violation_pct,
                })
    return {"correction": correction, "correction_gain": correction_gain,
            "cells": cells}


def pi_tune(
    kind: str,
    params: ConverterParams,
    nmpc_config: Optional[NmpcConfig] = None,
    p_des: float = 2000.0,
    cycles: int = 40,
    warmup: int = 5,
    pi_fixed_freq: float = DEFAULT_PI_FIXED_FREQ,
) -> dict:
    """Gain scan for a PI baseline: fastest settling without power overshoot.

    Settling is the first cycle after which |p_avg - p_des| stays within 2%
    of the setpoint; a run overshoots if the measured power ever exceeds
    102% of the setpoint.
    """
    if kind not in ("pi-freq", "pi-duty"):
        raise ArgumentError(f"kind must be 'pi-freq' or 'pi-duty', got {kind!r}")
    cfg = nmpc_config or NmpcConfig()
    base = 10.0 if kind == "pi-freq" else 2e-5
    kps = base * np.array([0.1, 0.3, 1.0, 3.0, 10.0])
    kis = base * np.array([0.1, 0.3, 1.0, 3.0])
    sc = Scenario(
        schedule=((warmup, p_des),),
        total_cycles=warmup + cycles,
        plant_params=params,
        model_params=params,
        controller=kind,
        warmup_cycles=warmup,
    )
    best = None
    for kp in kps:
        for ki in kis:
            records, _ = run_closed_loop(
                sc, nmpc_config=cfg, pi_gains=(kp, ki), pi_fixed_freq=pi_fixed_freq
            )
            active = [r for r in records if r.cycle >= warmup]
            if any(r.p_avg_w > 1.02 * p_des for r in active):
                continue
            tol = 0.02 * p_des
            settle = None
            for i in range(len(active)):
                if all(abs(r.p_avg_w - p_des) <= tol for r in active[i:]):
                    settle = i
                    break
            if settle is None:
                continue
            if best is None or settle < best["settling_cycles"]:
                best = {"kp": float(kp), "ki": float(ki), "settling_cycles": settle}
    if best is None:
        raise NumericError(f"no stable non-overshooting gains found for {kind}")
    return best


def write_trace_csv(records, path):
    """Per-cycle trace in the documented column order; flags as 0/1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([
                r.cycle,
                repr(float(r.t_start_s)),
                repr(float(r.fsw_hz)),
                repr(float(r.duty)),
                repr(float(r.io_start_a)),
                repr(float(r.vc_start_v)),
                repr(float(r.p_avg_w)),
                repr(float(r.p_des_w)),
                repr(float(r.p_des_corrected_w)),
                int(r.zvs_on_ok),
                int(r.zvs_off_ok),
                r.solver_status,
            ])


def write_summary_json(summary: dict, path):
    Path(path).write_text(json.dumps(summary, indent=2))
