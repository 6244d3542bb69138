"""Sequential control-loop kernel.

The feedback loop couples every 20 us step to the previous one, so this
is the only part of a run that cannot be vectorized.  The loop body is
plain float arithmetic; when numba is installed it is JIT-compiled
(~100x faster), otherwise the pure-Python version keeps a 300 s run
within the performance budget.
"""

from __future__ import annotations

import math

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap(args[0]) if args and callable(args[0]) else wrap


@njit(cache=False)
def control_loop_bin(
    phi_env,        # (n,) environmental phase at each step start
    pd_out,         # (n,) monitor level output
    phi_s_out,      # (n,) stretcher phase output (step start)
    phi_s, v_drive, integral, prev_error,   # carried scalar state
    enabled,
    kp, ki, kd, dt,
    i_lo, i_hi,
    setpoint, inv_range, slope,
    v_lo, v_hi, guard_v, v_fringe,
    latency, lat_buf,
    alpha_act, gain,
    half_vis, duty, dphi_pm,
    reset_step, reset_dv,   # preallocated event buffers
):
    """Run one integration bin of the closed loop.

    Returns ``(phi_s, v_drive, integral, prev_error, n_resets,
    lock_lost_step)`` where ``lock_lost_step`` is -1 unless a range reset
    became impossible.
    """
    n = phi_env.shape[0]
    n_resets = 0
    lock_lost = -1
    cap = reset_step.shape[0]
    for k in range(n):
        phi = phi_env[k] + phi_s
        # monitor level; the pulsed PM contributes at its duty cycle
        if duty > 0.0:
            pd = 0.5 + half_vis * ((1.0 - duty) * math.cos(phi) + duty * math.cos(phi + dphi_pm))
        else:
            pd = 0.5 + half_vis * math.cos(phi)
        pd_out[k] = pd
        phi_s_out[k] = phi_s
        if enabled and lock_lost < 0:
            err = slope * (pd - setpoint) * inv_range
            integral = integral + err * dt
            if integral < i_lo:
                integral = i_lo
            elif integral > i_hi:
                integral = i_hi
            deriv = (err - prev_error) / dt
            prev_error = err
            v_cmd = kp * err + ki * integral + kd * deriv
            if v_cmd < v_lo:
                v_cmd = v_lo
            elif v_cmd > v_hi:
                v_cmd = v_hi
            # re-center by whole fringes when the drive nears a rail
            if v_cmd > v_hi - guard_v or v_cmd < v_lo + guard_v:
                if v_cmd > v_hi - guard_v:
                    m = int(math.ceil((v_cmd - (v_hi - guard_v)) / v_fringe))
                    dv = -m * v_fringe
                else:
                    m = int(math.ceil(((v_lo + guard_v) - v_cmd) / v_fringe))
                    dv = m * v_fringe
                v_new = v_cmd + dv
                if ki <= 0.0 or v_new > v_hi - guard_v or v_new < v_lo + guard_v:
                    lock_lost = k
                else:
                    v_cmd = v_new
                    integral = integral + dv / ki
                    phi_s = phi_s + gain * dv
                    phi_s_out[k] = phi_s
                    for j in range(latency):
                        lat_buf[j] = lat_buf[j] + dv
                    if n_resets < cap:
                        reset_step[n_resets] = k
                        reset_dv[n_resets] = dv
                    n_resets += 1
            if lock_lost < 0:
                if latency > 0:
                    slot = k % latency
                    applied = lat_buf[slot]
                    lat_buf[slot] = v_cmd
                    v_drive = applied
                else:
                    v_drive = v_cmd
        # actuator relaxes toward its commanded phase (held when disabled)
        phi_s = phi_s + alpha_act * (gain * v_drive - phi_s)
    return phi_s, v_drive, integral, prev_error, n_resets, lock_lost
