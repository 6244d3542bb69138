"""Scenario orchestration: the closed loop, gated counting and file output.

A run advances the plant and controller at ``dt`` (50 kHz by default),
groups detector gates by controller step so that unlocked drift within an
integration bin washes fringes out exactly as the 1 s detector
integration does, and emits one CountRecord per bin.  Everything is
deterministic for a given (config, seed): per-subsystem random streams
(environment, D1, D2, scan points) are derived from the master seed by
fixed labels, so adding a consumer never perturbs the others.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._kernel import control_loop_bin
from .analysis import FringeFit, fit_fringe
from .config import SimConfig, Timeline
from .control import ControllerState, calibrate_setpoint, locked_phase
from .detection import CountRecord, crosstalk_click_probability, gate_pm_overlap
from .errors import LockLostError
from .plant import (
    PlantState,
    fringe_visibility,
    initial_plant_state,
    quantum_phase_offset,
)

# fixed stream labels for seed derivation
LABEL_ENV = 1
LABEL_D1 = 2
LABEL_D2 = 3
LABEL_SCAN = 4

MONITOR_LOCK_TOL = 0.02   # normalized monitor units
LOCK_HOLD_S = 0.05


def derive_rng(seed: int, *labels: int) -> np.random.Generator:
    """Independent generator for a (seed, label...) combination."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *labels))))


def derive_seed(seed: int, *labels: int) -> int:
    """Stable 63-bit sub-seed for an independent child simulation."""
    state = np.random.SeedSequence((seed, *labels)).generate_state(2, dtype=np.uint64)
    return int(state[0] >> 1)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str   # lock_acquired | lock_lost | range_reset | control_disabled
    detail: str = ""


@dataclass
class RunResult:
    records: list[CountRecord]
    events: list[Event]
    lock_phase: float
    align_voltage: float | None
    lock_lost: bool
    bin_pd_max_dev: np.ndarray
    final_plant: PlantState
    final_controller: ControllerState
    trace_time: np.ndarray | None = None
    trace_phase_err: np.ndarray | None = None
    trace_pd: np.ndarray | None = None


def _event_bin(t: float | None, bin_duration: float) -> int | None:
    """Events take effect at the first bin boundary at or after t."""
    if t is None:
        return None
    return int(math.ceil(t / bin_duration - 1e-9))


def _wrap(phi):
    return (np.asarray(phi) + np.pi) % (2.0 * np.pi) - np.pi


def _alignment_voltage(phi_base: float, v_pi: float, v_max: float) -> tuple[float, str]:
    """PM voltage putting the quantum channel on a fringe extremum.

    Prefers the dark-D1/bright-D2 extremum (total phase pi mod 2*pi, as in
    the published record); falls back to the opposite extremum if the
    required voltage exceeds the generator maximum.
    """
    two_pi = 2.0 * math.pi
    v_to_pi = ((math.pi - phi_base) % two_pi) / math.pi * v_pi
    v_to_zero = ((-phi_base) % two_pi) / math.pi * v_pi
    if v_to_pi <= v_max:
        return v_to_pi, "target=pi"
    if v_to_zero <= v_max:
        return v_to_zero, "target=0"
    v = min(v_to_pi, v_to_zero)
    return min(v, v_max), "unreachable; clamped"


def run_scenario(cfg: SimConfig, trace: bool = False) -> RunResult:
    """Simulate the configured timeline and return one record per bin.

    ``trace=True`` additionally stores per-step phase error (relative to
    the lock point) and monitor level; use short runs, this costs
    ``16 bytes * duration / dt``.
    """
    cfg.validate()
    dt = cfg.dt
    n_steps = int(round(cfg.bin_duration / dt))
    n_bins = int(math.floor(cfg.scenario.duration_s / cfg.bin_duration + 1e-9))
    opt, noise, pm, st = cfg.optics, cfg.noise, cfg.pm, cfg.stretcher

    rng_env = derive_rng(cfg.seed, LABEL_ENV)
    rng_d1 = derive_rng(cfg.seed, LABEL_D1)
    rng_d2 = derive_rng(cfg.seed, LABEL_D2)

    plant = initial_plant_state(noise)
    ctl = calibrate_setpoint(
        opt, st, plant, scan_range_v=min(st.v_hi - st.v_lo, 3.0 * st.volts_per_fringe)
    )
    ctl = replace(
        ctl,
        kp=cfg.controller.kp, ki=cfg.controller.ki, kd=cfg.controller.kd,
        guard_frac=cfg.controller.guard_frac,
        latency_steps=cfg.controller.latency_steps,
        enabled=False,
    )
    lock_phi = locked_phase(ctl)

    vis = fringe_visibility(opt)
    half_vis = 0.5 * vis
    inv_range = 1.0 / (ctl.i_max - ctl.i_min)
    q_off = quantum_phase_offset(opt)
    rep = cfg.d1.rep_rate_hz
    duty = min(pm.pulse_width_ns * 1e-9 * rep, 1.0)

    # per-detector click model constants
    loss_lin = 10.0 ** (-cfg.source.post_path_loss_db / 10.0)
    t1, t2 = opt.t_arm1, opt.t_arm2
    f_base = (t1 + t2) / 4.0
    f_amp = opt.overlap * math.sqrt(t1 * t2) / 2.0
    dets = []
    for det, rng in ((cfg.d1, rng_d1), (cfg.d2, rng_d2)):
        leak = min(crosstalk_click_probability(
            cfg.source.launch_dbm, cfg.source.isolation_db, opt.lambda_ph_nm, det
        ), 1.0 - 1e-12)
        bg = 1.0 - (1.0 - det.dark_prob) * (1.0 - leak)
        dets.append({
            "rng": rng,
            "a": cfg.source.mu * loss_lin * det.efficiency,
            "bg": bg,
            "pm_factor": gate_pm_overlap(det, pm),
        })

    # actuator / loop constants
    alpha_act = 1.0 - math.exp(-dt * 2.0 * math.pi * st.f_c_hz)
    gain = st.gain_rad_per_v
    guard_v = ctl.guard_frac * (ctl.v_hi - ctl.v_lo)
    v_fringe = st.volts_per_fringe
    i_lo = ctl.v_lo / ctl.ki if ctl.ki > 0 else -math.inf
    i_hi = ctl.v_hi / ctl.ki if ctl.ki > 0 else math.inf
    lat = ctl.latency_steps
    lat_buf = np.zeros(max(lat, 1))
    hold_steps = max(int(round(LOCK_HOLD_S / dt)), 1)

    on_bin = _event_bin(cfg.scenario.control_on_at, cfg.bin_duration)
    off_bin = _event_bin(cfg.scenario.control_off_at, cfg.bin_duration)
    align_bin = _event_bin(cfg.scenario.align_extremum_at, cfg.bin_duration)
    pm_bins = [(_event_bin(t, cfg.bin_duration), v) for t, v in cfg.scenario.pm_events]

    pd_out = np.empty(n_steps)
    phi_s_out = np.empty(n_steps)
    reset_step = np.empty(64, dtype=np.int64)
    reset_dv = np.empty(64)

    records: list[CountRecord] = []
    events: list[Event] = []
    bin_pd_max_dev = np.empty(n_bins)
    traces_t, traces_eps, traces_pd = [], [], []

    walk = 0.0                      # accumulated Wiener phase
    phi_s = plant.phi_stretcher
    v_drive = plant.stretcher_v
    integral = ctl.integral
    prev_error = ctl.prev_error
    enabled = False
    lock_lost = False
    acquired = False
    pm_v = 0.0
    align_v: float | None = None
    sqrt_ddt = math.sqrt(noise.diffusion * dt)

    for b in range(n_bins):
        t0 = b * cfg.bin_duration
        if on_bin is not None and b == on_bin and not lock_lost:
            enabled = True
        if off_bin is not None and b == off_bin:
            if enabled:
                events.append(Event(t0, "control_disabled"))
            enabled = False
        if align_bin is not None and b == align_bin:
            phi_base = (lock_phi + q_off) % (2.0 * math.pi)
            align_v, _ = _alignment_voltage(phi_base, pm.v_pi, pm.v_max)
            pm_v = align_v
        for eb, v in pm_bins:
            if eb == b:
                pm_v = v

        # environment: Wiener increments plus the deterministic oscillation
        dw = rng_env.normal(0.0, sqrt_ddt, n_steps) if noise.diffusion > 0 else np.zeros(n_steps)
        ts = t0 + np.arange(n_steps) * dt
        osc = np.zeros(n_steps)
        for f, a, ph in noise.osc_components:
            osc += a * np.sin(2.0 * math.pi * f * ts + ph)
        cumw = np.cumsum(dw)
        phi_env_arr = (walk + osc) + np.concatenate(([0.0], cumw[:-1]))
        walk += cumw[-1] if n_steps else 0.0

        dphi_pm_monitor = math.pi * pm_v / pm.v_pi
        phi_s, v_drive, integral, prev_error, n_resets, lost_k = control_loop_bin(
            phi_env_arr, pd_out, phi_s_out,
            phi_s, v_drive, integral, prev_error,
            enabled, ctl.kp, ctl.ki, ctl.kd, dt,
            i_lo, i_hi,
            ctl.setpoint, inv_range, ctl.slope_sign,
            ctl.v_lo, ctl.v_hi, guard_v, v_fringe,
            lat, lat_buf,
            alpha_act, gain,
            half_vis, duty, dphi_pm_monitor,
            reset_step, reset_dv,
        )
        for i in range(min(n_resets, len(reset_step))):
            events.append(Event(
                t0 + reset_step[i] * dt, "range_reset",
                detail=f"dv={reset_dv[i]:.6g} V",
            ))
        if lost_k >= 0:
            events.append(Event(t0 + lost_k * dt, "lock_lost",
                                detail="actuator range exhausted"))
            enabled = False
            lock_lost = True
        if enabled and not acquired:
            ok = np.abs(pd_out - ctl.setpoint) <= MONITOR_LOCK_TOL
            cs = np.concatenate(([0], np.cumsum(ok)))
            runs = cs[hold_steps:] - cs[:-hold_steps]
            hits = np.nonzero(runs == hold_steps)[0]
            if hits.size:
                acquired = True
                events.append(Event(t0 + (hits[0] + hold_steps - 1) * dt, "lock_acquired"))

        # gated detection, grouped by controller step
        j0 = int(math.ceil(t0 * rep - 0.5 - 1e-9))
        j1 = int(math.ceil((t0 + cfg.bin_duration) * rep - 0.5 - 1e-9))
        tg = (np.arange(j0, j1) + 0.5) / rep
        ks = np.clip(((tg - t0) / dt).astype(np.int64), 0, n_steps - 1)
        n_k = np.bincount(ks, minlength=n_steps)
        phi_q = phi_env_arr + phi_s_out + q_off
        counts = []
        for sign, d in zip((1.0, -1.0), dets):
            phi_d = phi_q + math.pi * pm_v / pm.v_pi * d["pm_factor"]
            frac = f_base + sign * f_amp * np.cos(phi_d)
            p = 1.0 - (1.0 - d["bg"]) * np.exp(-d["a"] * frac)
            counts.append(int(d["rng"].binomial(n_k, p).sum()))

        records.append(CountRecord(
            t_start=t0, duration=cfg.bin_duration,
            counts_d1=counts[0], counts_d2=counts[1],
            mean_pd_level=float(pd_out.mean()),
            control_enabled=enabled, pm_voltage=pm_v,
        ))
        bin_pd_max_dev[b] = float(np.abs(pd_out - ctl.setpoint).max())
        if trace:
            traces_t.append(ts.copy())
            traces_eps.append(_wrap(phi_env_arr + phi_s_out - lock_phi))
            traces_pd.append(pd_out.copy())

    final_plant = PlantState(
        phi_env=float(walk + noise.osc_phase(n_bins * cfg.bin_duration)),
        phi_stretcher=float(phi_s), stretcher_v=float(v_drive),
        time=n_bins * cfg.bin_duration,
    )
    final_ctl = replace(ctl, integral=float(integral), prev_error=float(prev_error),
                        output_v=float(v_drive), enabled=enabled)
    events.sort(key=lambda e: e.time)
    return RunResult(
        records=records, events=events, lock_phase=lock_phi,
        align_voltage=align_v, lock_lost=lock_lost,
        bin_pd_max_dev=bin_pd_max_dev,
        final_plant=final_plant, final_controller=final_ctl,
        trace_time=np.concatenate(traces_t) if trace and traces_t else None,
        trace_phase_err=np.concatenate(traces_eps) if trace and traces_eps else None,
        trace_pd=np.concatenate(traces_pd) if trace and traces_pd else None,
    )


# ---- voltage scan ----


@dataclass(frozen=True)
class ScanPoint:
    voltage: float
    mean_d1: float
    sd_d1: float
    mean_d2: float
    sd_d2: float


@dataclass
class ScanResult:
    points: list[ScanPoint]
    fit_d1: FringeFit
    fit_d2: FringeFit
    events: list[Event]

    @property
    def fit(self) -> FringeFit:
        return self.fit_d2


def _scan_point(cfg: SimConfig, index: int, voltage: float):
    scan = cfg.scenario.scan
    sub = Timeline(
        duration_s=scan.settle_s + scan.dwell_s,
        control_on_at=0.0, control_off_at=None, align_extremum_at=None,
        pm_events=((0.0, voltage),),
        scan=scan, inset=cfg.scenario.inset,
    )
    sub_cfg = replace(cfg, seed=derive_seed(cfg.seed, LABEL_SCAN, index), scenario=sub)
    rr = run_scenario(sub_cfg)
    first_dwell_bin = int(round(scan.settle_s / cfg.bin_duration))
    dwell = [r for r in rr.records[first_dwell_bin:]]
    worst = float(rr.bin_pd_max_dev[first_dwell_bin:].max())
    tot1 = sum(r.counts_d1 for r in dwell)
    tot2 = sum(r.counts_d2 for r in dwell)
    dur = sum(r.duration for r in dwell)
    point = ScanPoint(
        voltage=voltage,
        mean_d1=tot1 / dur, sd_d1=math.sqrt(tot1) / dur,
        mean_d2=tot2 / dur, sd_d2=math.sqrt(tot2) / dur,
    )
    evs = [Event(e.time, e.kind, f"scan[{index}] v={voltage:.6g}: {e.detail}".rstrip(": "))
           for e in rr.events]
    return point, evs, rr.lock_lost, worst


def worker_count() -> int:
    """Worker pool size, capped by the MZLOCK_THREADS environment variable."""
    raw = os.environ.get("MZLOCK_THREADS", "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        return 1


def scan_voltage(cfg: SimConfig, workers: int | None = None) -> ScanResult:
    """Dwell at each scan voltage under lock and fit the resulting fringe.

    Points are independent locked simulations with seeds derived from
    (seed, point index), so results do not depend on the worker count and
    merge in input order.  If the monitor deviates from the setpoint by
    more than 2% of the normalized fringe during any dwell, the lock is
    considered lost and the scan aborts with partial data.
    """
    cfg.validate()
    scan = cfg.scenario.scan
    volts = np.linspace(scan.v_start, scan.v_end, scan.n_points)
    if workers is None:
        workers = worker_count()
    workers = min(max(workers, 1), len(volts))

    if workers == 1:
        results = [_scan_point(cfg, i, float(v)) for i, v in enumerate(volts)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_scan_point, cfg, i, float(v))
                       for i, v in enumerate(volts)]
            results = [f.result() for f in futures]

    points: list[ScanPoint] = []
    events: list[Event] = []
    for i, (point, evs, lost, worst) in enumerate(results):
        events.extend(evs)
        if lost or worst > MONITOR_LOCK_TOL:
            err = LockLostError(
                f"lock lost at scan point {i} (v={point.voltage:.6g} V, "
                f"monitor deviation {worst:.4f})"
            )
            err.partial_points = points
            err.events = events
            raise err
        points.append(point)

    fit_d1 = fit_fringe([(p.voltage, p.mean_d1, p.sd_d1) for p in points])
    fit_d2 = fit_fringe([(p.voltage, p.mean_d2, p.sd_d2) for p in points])
    return ScanResult(points=points, fit_d1=fit_d1, fit_d2=fit_d2, events=events)


# ---- gate-delay sweep (modulation pulse shape) ----


@dataclass(frozen=True)
class InsetPoint:
    delay_ns: float
    rate_d1: float
    rate_d2: float


def inset_sweep(cfg: SimConfig) -> list[InsetPoint]:
    """Expected count rates versus detection gate delay.

    Reproduces the modulation-pulse diagnostic: the quantum channel is
    aligned to the dark fringe of D1, the modulator is driven at
    ``scenario.inset.drive_v``, and the gate delay is swept across the
    pulse.  Rates are noise-free expectations (the long-integration
    limit of the measured curve).
    """
    cfg.validate()
    spec = cfg.scenario.inset
    opt, pm = cfg.optics, cfg.pm
    rep = cfg.d1.rep_rate_hz
    loss_lin = 10.0 ** (-cfg.source.post_path_loss_db / 10.0)
    t1, t2 = opt.t_arm1, opt.t_arm2
    f_base = (t1 + t2) / 4.0
    f_amp = opt.overlap * math.sqrt(t1 * t2) / 2.0
    delays = np.arange(spec.delay_min_ns, spec.delay_max_ns + spec.delay_step_ns / 2,
                       spec.delay_step_ns)
    det_consts = []
    for sign, det in ((1.0, cfg.d1), (-1.0, cfg.d2)):
        leak = min(crosstalk_click_probability(
            cfg.source.launch_dbm, cfg.source.isolation_db, opt.lambda_ph_nm, det
        ), 1.0 - 1e-12)
        bg = 1.0 - (1.0 - det.dark_prob) * (1.0 - leak)
        det_consts.append((sign, det, bg))
    out = []
    for tau in delays:
        rates = []
        for sign, det, bg in det_consts:
            fac = gate_pm_overlap(det, pm, extra_delay_ns=float(tau))
            phi = math.pi + math.pi * spec.drive_v / pm.v_pi * fac
            frac = f_base + sign * f_amp * math.cos(phi)
            p = 1.0 - (1.0 - bg) * math.exp(-cfg.source.mu * loss_lin * det.efficiency * frac)
            rates.append(rep * p)
        out.append(InsetPoint(delay_ns=float(tau), rate_d1=rates[0], rate_d2=rates[1]))
    return out


# ---- CSV output ----


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


RECORD_COLUMNS = ("t_start_s", "duration_s", "counts_d1", "counts_d2",
                  "mean_pd_level", "control_enabled", "pm_voltage_v")
FRINGE_COLUMNS = ("voltage_v", "mean_d1", "sd_d1", "mean_d2", "sd_d2")
INSET_COLUMNS = ("delay_ns", "rate_d1", "rate_d2")
EVENT_COLUMNS = ("time_s", "kind", "detail")


def _write_lines(path, lines) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_records_csv(records: list[CountRecord], path) -> None:
    lines = [",".join(RECORD_COLUMNS)]
    for r in records:
        lines.append(",".join(_fmt(x) for x in (
            r.t_start, r.duration, r.counts_d1, r.counts_d2,
            r.mean_pd_level, r.control_enabled, r.pm_voltage,
        )))
    _write_lines(path, lines)


def read_records_csv(path) -> list[CountRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != ",".join(RECORD_COLUMNS):
        raise ValueError(f"{path}: not a records CSV")
    out = []
    for line in lines[1:]:
        t, d, c1, c2, pd, en, v = line.split(",")
        out.append(CountRecord(
            t_start=float(t), duration=float(d), counts_d1=int(c1), counts_d2=int(c2),
            mean_pd_level=float(pd), control_enabled=en == "1", pm_voltage=float(v),
        ))
    return out


def write_fringe_csv(points: list[ScanPoint], path) -> None:
    lines = [",".join(FRINGE_COLUMNS)]
    for p in points:
        lines.append(",".join(_fmt(x) for x in (
            p.voltage, p.mean_d1, p.sd_d1, p.mean_d2, p.sd_d2,
        )))
    _write_lines(path, lines)


def write_inset_csv(points: list[InsetPoint], path) -> None:
    lines = [",".join(INSET_COLUMNS)]
    for p in points:
        lines.append(",".join(_fmt(x) for x in (p.delay_ns, p.rate_d1, p.rate_d2)))
    _write_lines(path, lines)


def write_events_csv(events: list[Event], path) -> None:
    lines = [",".join(EVENT_COLUMNS)]
    for e in events:
        detail = e.detail.replace(",", ";")
        lines.append(f"{_fmt(e.time)},{e.kind},{detail}")
    _write_lines(path, lines)


def write_gnuplot_script(csv_name: str, path, kind: str = "run") -> None:
    """Companion gnuplot script for a written CSV (no rendering built in)."""
    if kind == "run":
        body = [
            "set datafile separator ','",
            "set xlabel 'time (s)'", "set ylabel 'counts / s'",
            f"plot '{csv_name}' every ::1 using 1:3 with points title 'D1', \\",
            f"     '{csv_name}' every ::1 using 1:4 with points title 'D2'",
        ]
    elif kind == "scan":
        body = [
            "set datafile separator ','",
            "set xlabel 'PM voltage (V)'", "set ylabel 'counts / s'",
            f"plot '{csv_name}' every ::1 using 1:2:3 with yerrorbars title 'D1', \\",
            f"     '{csv_name}' every ::1 using 1:4:5 with yerrorbars title 'D2'",
        ]
    else:
        body = [
            "set datafile separator ','",
            "set xlabel 'gate delay (ns)'", "set ylabel 'counts / s'",
            f"plot '{csv_name}' every ::1 using 1:2 with lines title 'D1'",
        ]
    _write_lines(path, body)
