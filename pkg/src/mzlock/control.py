"""Discrete-time emulation of the FPGA feedback loop.

The loop samples the classical monitor photodiode, forms a normalized
error against the quadrature setpoint and drives the fiber stretcher
through a PID law.  The actuator range is finite, so when the commanded
drive approaches a rail the controller re-centers by exactly one or more
fringes (2*pi of stretcher phase), which leaves the lock point unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CalibrationError
from .plant import OpticalParams, PlantState, StretcherParams, monitor_level


@dataclass(frozen=True)
class MonitorSample:
    """One reading of the monitor photodiode (normalized 0-1 of fringe max)."""

    pd_level: float
    time: float = 0.0


@dataclass(frozen=True)
class ControllerState:
    """PID state plus the calibration data it locks against.

    Gains are volts per unit of normalized intensity error (and its
    integral / derivative).  ``slope_sign`` is the error sign picked at
    calibration so that the loop is negative feedback on the locked
    fringe slope.  ``latency_steps`` inserts extra whole-sample delays
    between error computation and drive application (0 = ideal loop).
    """

    kp: float = 2.0
    ki: float = 4.0e4
    kd: float = 0.0
    integral: float = 0.0
    prev_error: float = 0.0
    setpoint: float = 0.5
    i_min: float = 0.0
    i_max: float = 1.0
    slope_sign: float = 1.0
    output_v: float = 0.0
    v_lo: float = -30.0
    v_hi: float = 30.0
    guard_frac: float = 0.05
    latency_steps: int = 0
    enabled: bool = True
    calibrated: bool = False

    def validate(self, path: str = "controller") -> list[str]:
        errs = []
        if self.calibrated and not self.i_min < self.i_max:
            errs.append(f"{path}: calibrated extrema need i_min < i_max")
        if not self.v_lo < self.v_hi:
            errs.append(f"{path}.v_lo/v_hi: need v_lo < v_hi")
        if not 0.0 <= self.guard_frac < 0.5:
            errs.append(f"{path}.guard_frac: must be in [0, 0.5)")
        if self.latency_steps < 0:
            errs.append(f"{path}.latency_steps: must be >= 0")
        if not math.isfinite(self.integral):
            errs.append(f"{path}.integral: must be finite")
        return errs


def calibrate_setpoint(
    opt: OpticalParams,
    stretcher: StretcherParams,
    state: PlantState,
    scan_range_v: float,
    n_points: int = 2048,
) -> ControllerState:
    """Scan the stretcher over ``scan_range_v`` and calibrate the lock.

    Sweeps the commanded stretcher phase across at least one full fringe
    (the plant is treated as frozen for the duration of the sweep, which
    is fast compared to the drift), records the monitor extrema and sets
    the quadrature setpoint to the mid-fringe level.  The lock slope sign
    is picked by dithering the stretcher a small step from its current
    position.
    """
    g = stretcher.gain_rad_per_v
    if abs(g) * scan_range_v < 2.0 * math.pi:
        raise CalibrationError(
            f"scan range {scan_range_v:g} V covers only "
            f"{abs(g) * scan_range_v:.3f} rad < 2*pi; cannot see a full fringe"
        )
    phi0 = state.phi_env + state.phi_stretcher
    levels = monitor_level(opt, phi0 + g * np.linspace(0.0, scan_range_v, n_points))
    i_min = float(np.min(levels))
    i_max = float(np.max(levels))
    if not i_max > i_min:
        raise CalibrationError("monitor fringe is flat; nothing to lock to")

    # probe the local slope d(pd)/d(drive) with a small dither
    dither = 0.01
    lo = float(monitor_level(opt, phi0 - g * dither))
    hi = float(monitor_level(opt, phi0 + g * dither))
    dpd_dv = (hi - lo) / (2.0 * dither)
    if abs(dpd_dv) < 1e-9:
        # sitting on an extremum: nudge off it and re-probe
        lo = float(monitor_level(opt, phi0 + g * dither))
        hi = float(monitor_level(opt, phi0 + 3.0 * g * dither))
        dpd_dv = (hi - lo) / (2.0 * dither)
    slope_sign = -1.0 if dpd_dv > 0 else 1.0

    return ControllerState(
        setpoint=0.5 * (i_min + i_max),
        i_min=i_min,
        i_max=i_max,
        slope_sign=slope_sign,
        v_lo=stretcher.v_lo,
        v_hi=stretcher.v_hi,
        calibrated=True,
    )


def locked_phase(ctl: ControllerState) -> float:
    """Classical phase (mod 2*pi) the loop settles at for its slope sign."""
    # pd = (1 + V cos(phi))/2 -> quadrature at cos(phi) = 0; the stable
    # point for slope_sign = +1 is where d(pd)/d(phi) < 0, i.e. +pi/2.
    return 0.5 * math.pi if ctl.slope_sign > 0 else 1.5 * math.pi


def quadrature_error(sample: MonitorSample, ctl: ControllerState) -> float:
    """Normalized error of the monitor level against the lock setpoint."""
    if not ctl.calibrated:
        raise CalibrationError("controller is not calibrated")
    return ctl.slope_sign * (sample.pd_level - ctl.setpoint) / (ctl.i_max - ctl.i_min)


def pid_update(ctl: ControllerState, error: float, dt: float) -> tuple[ControllerState, float]:
    """One PID step; returns the new state and the (clamped) drive voltage.

    The integral is clamped to the voltage-range equivalent so the loop
    cannot latch on a rail (anti-windup).  When disabled the drive is
    frozen at its last value and the state does not change.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    if not ctl.enabled:
        return ctl, ctl.output_v
    integral = ctl.integral + error * dt
    if ctl.ki > 0:
        integral = min(max(integral, ctl.v_lo / ctl.ki), ctl.v_hi / ctl.ki)
    deriv = (error - ctl.prev_error) / dt
    drive = ctl.kp * error + ctl.ki * integral + ctl.kd * deriv
    drive = min(max(drive, ctl.v_lo), ctl.v_hi)
    new = replace(ctl, integral=integral, prev_error=error, output_v=drive)
    return new, drive


@dataclass(frozen=True)
class RangeResetResult:
    ctl: ControllerState
    plant: PlantState
    fringes: int  # signed number of 2*pi fringes removed (0 = no-op)
    lock_lost: bool = False


def range_reset(
    ctl: ControllerState, plant: PlantState, stretcher: StretcherParams
) -> RangeResetResult:
    """Re-center the drive when it approaches a rail.

    Subtracts the smallest whole number of fringes (2*pi of stretcher
    phase, ``volts_per_fringe`` each) that brings the drive back inside
    the guard band, rebasing the integral and jumping the stretcher phase
    by the exact 2*pi multiple so the lock point is preserved.  If no
    whole-fringe shift can reach the safe band the lock is lost.
    """
    v = ctl.output_v
    span = ctl.v_hi - ctl.v_lo
    guard = ctl.guard_frac * span
    lo_safe, hi_safe = ctl.v_lo + guard, ctl.v_hi - guard
    if lo_safe <= v <= hi_safe:
        return RangeResetResult(ctl, plant, 0)

    v_fringe = stretcher.volts_per_fringe
    if v > hi_safe:
        k = math.ceil((v - hi_safe) / v_fringe)
        dv = -k * v_fringe
    else:
        k = math.ceil((lo_safe - v) / v_fringe)
        dv = k * v_fringe
    v_new = v + dv
    if not lo_safe <= v_new <= hi_safe or ctl.ki <= 0:
        return RangeResetResult(ctl, plant, 0, lock_lost=True)

    new_ctl = replace(
        ctl, output_v=v_new, integral=ctl.integral + dv / ctl.ki
    )
    # idealized instantaneous fringe jump: exactly 2*pi*k of phase
    new_plant = replace(
        plant,
        phi_stretcher=plant.phi_stretcher + stretcher.gain_rad_per_v * dv,
        stretcher_v=v_new,
    )
    return RangeResetResult(new_ctl, new_plant, int(math.copysign(k, dv)))
