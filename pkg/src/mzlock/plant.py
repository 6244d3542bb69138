"""Physical model of the two-arm fiber interferometer.

The interferometer carries two wavelengths: a bright classical monitor
channel used for locking and an attenuated quantum channel whose
interference is what we ultimately count.  The inter-arm phase has three
contributions tracked here:

* ``phi_env``   -- environmental drift (random walk plus slow acoustic
  oscillations),
* ``phi_stretcher`` -- the piezo fiber stretcher (the feedback actuator,
  a first-order system with a ~5 kHz corner),
* a pulsed electro-optic phase modulator (PM) acting only during the
  detector gate windows.

Output port powers follow the two-beam interference law
``I ~ 1 + V*cos(phi)`` with the fringe visibility set by arm
transmissions and the polarization mode overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SPEED_OF_LIGHT = 2.998e8  # m/s


@dataclass(frozen=True)
class OpticalParams:
    """Static optical parameters of the interferometer.

    Wavelengths are in nm, the residual arm length mismatch ``delta_l_mm``
    in mm.  ``t_arm1``/``t_arm2`` are linear power transmissions of the two
    arms and ``overlap`` is the polarization mode overlap at the
    recombining coupler (1 = perfectly aligned).  The two dB losses sit
    between the output coupler and the detectors and do not affect the
    fringe shape, only the detected flux.
    """

    lambda_q_nm: float = 1546.12
    lambda_ph_nm: float = 1547.72
    group_index: float = 1.468
    delta_l_mm: float = 0.2
    t_arm1: float = 1.0
    t_arm2: float = 1.0
    overlap: float = 0.972
    demux_loss_db: float = 1.6
    filter_loss_db: float = 1.5

    def validate(self, path: str = "optics") -> list[str]:
        errs = []
        if not self.lambda_q_nm > 0:
            errs.append(f"{path}.lambda_q_nm: must be > 0")
        if not self.lambda_ph_nm > 0:
            errs.append(f"{path}.lambda_ph_nm: must be > 0")
        if not self.group_index > 0:
            errs.append(f"{path}.group_index: must be > 0")
        if self.delta_l_mm < 0:
            errs.append(f"{path}.delta_l_mm: must be >= 0")
        for name in ("t_arm1", "t_arm2", "overlap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                errs.append(f"{path}.{name}: must be in [0, 1], got {v!r}")
        for name in ("demux_loss_db", "filter_loss_db"):
            if getattr(self, name) < 0:
                errs.append(f"{path}.{name}: must be >= 0 dB")
        return errs


@dataclass(frozen=True)
class NoiseParams:
    """Environmental phase noise model.

    A Wiener random walk (``diffusion`` rad^2/s) models slow thermal and
    mechanical drift; ``osc_components`` is a list of
    ``(frequency_hz, amplitude_rad, initial_phase_rad)`` sinusoids for the
    fastest measured acoustic lines.  Component frequencies must stay at
    or below ``f_cutoff_hz``.
    """

    diffusion: float = 1.0
    osc_components: tuple[tuple[float, float, float], ...] = ((100.0, 0.5, 0.0),)
    f_cutoff_hz: float = 100.0
    rng_stream: str = "env"

    def validate(self, path: str = "noise") -> list[str]:
        errs = []
        if self.diffusion < 0:
            errs.append(f"{path}.diffusion: must be >= 0")
        if self.f_cutoff_hz <= 0:
            errs.append(f"{path}.f_cutoff_hz: must be > 0")
        for i, (f, a, _ph) in enumerate(self.osc_components):
            if f <= 0:
                errs.append(f"{path}.osc_components[{i}]: frequency must be > 0")
            elif f > self.f_cutoff_hz:
                errs.append(
                    f"{path}.osc_components[{i}]: frequency {f} Hz exceeds "
                    f"cutoff {self.f_cutoff_hz} Hz"
                )
            if a < 0:
                errs.append(f"{path}.osc_components[{i}]: amplitude must be >= 0")
        return errs

    @property
    def f_max(self) -> float:
        return max((f for f, _a, _p in self.osc_components), default=0.0)

    def osc_phase(self, t):
        """Deterministic oscillatory phase contribution at time ``t`` (s)."""
        out = 0.0
        for f, a, ph in self.osc_components:
            out = out + a * np.sin(2.0 * math.pi * f * t + ph)
        return out


@dataclass(frozen=True)
class PmParams:
    """Electro-optic phase modulator and its electrical pulse shape.

    The drive pulse is modeled as a unit flat top of ``pulse_width_ns``
    followed by an exponentially damped sinusoid of relative amplitude
    ``ringing_amp`` (impedance-mismatch ringing).  Imposed phase is
    ``pi * V / v_pi`` times that envelope.
    """

    v_pi: float = 5.0
    pulse_width_ns: float = 10.0
    ringing_amp: float = 0.2
    ringing_freq_hz: float = 100e6
    ringing_decay_per_ns: float = 0.05
    v_max: float = 6.8

    def validate(self, path: str = "pm") -> list[str]:
        errs = []
        if not self.v_pi > 0:
            errs.append(f"{path}.v_pi: must be > 0")
        if not self.pulse_width_ns > 0:
            errs.append(f"{path}.pulse_width_ns: must be > 0")
        if not 0.0 <= self.ringing_amp < 1.0:
            errs.append(f"{path}.ringing_amp: must be in [0, 1)")
        if self.ringing_freq_hz < 0:
            errs.append(f"{path}.ringing_freq_hz: must be >= 0")
        if self.ringing_decay_per_ns < 0:
            errs.append(f"{path}.ringing_decay_per_ns: must be >= 0")
        if not self.v_max > 0:
            errs.append(f"{path}.v_max: must be > 0")
        return errs


@dataclass(frozen=True)
class StretcherParams:
    """Piezo fiber stretcher: DC phase gain, bandwidth and drive range."""

    gain_rad_per_v: float = 2.0 * math.pi / 3.0  # one fringe per 3 V
    f_c_hz: float = 5000.0
    v_lo: float = -30.0
    v_hi: float = 30.0

    def validate(self, path: str = "stretcher") -> list[str]:
        errs = []
        if self.gain_rad_per_v == 0:
            errs.append(f"{path}.gain_rad_per_v: must be nonzero")
        if not self.f_c_hz > 0:
            errs.append(f"{path}.f_c_hz: must be > 0")
        if not self.v_lo < self.v_hi:
            errs.append(f"{path}.v_lo/v_hi: need v_lo < v_hi")
        return errs

    @property
    def volts_per_fringe(self) -> float:
        return 2.0 * math.pi / abs(self.gain_rad_per_v)


@dataclass(frozen=True)
class PlantState:
    """Instantaneous state of the interferometer phases."""

    phi_env: float = 0.0
    phi_stretcher: float = 0.0
    stretcher_v: float = 0.0
    time: float = 0.0

    def check_finite(self) -> None:
        for name in ("phi_env", "phi_stretcher", "stretcher_v", "time"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite plant state: {name}={getattr(self, name)!r}")


def initial_plant_state(noise: NoiseParams, t0: float = 0.0) -> PlantState:
    """Plant state at ``t0`` with the oscillatory phase already applied.

    Seeding ``phi_env`` with the oscillation value makes the state satisfy
    ``phi_env(t) = walk(t) + osc(t)`` exactly from the first step.
    """
    return PlantState(phi_env=float(noise.osc_phase(t0)), time=t0)


def step_environment(
    state: PlantState, noise: NoiseParams, dt: float, rng: np.random.Generator
) -> PlantState:
    """Advance the environmental phase by one time step.

    ``phi_env`` picks up a Wiener increment of variance ``diffusion * dt``
    plus the change of the deterministic oscillatory sum between ``t`` and
    ``t + dt``.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    f_max = noise.f_max
    if f_max > 0 and dt > 1.0 / (10.0 * f_max):
        raise ValueError(
            f"dt={dt:g} s too coarse for a {f_max:g} Hz component "
            f"(need dt <= {1.0 / (10.0 * f_max):g} s)"
        )
    state.check_finite()
    t_new = state.time + dt
    dw = rng.normal(0.0, math.sqrt(noise.diffusion * dt)) if noise.diffusion > 0 else 0.0
    d_osc = float(noise.osc_phase(t_new)) - float(noise.osc_phase(state.time))
    return replace(state, phi_env=state.phi_env + dw + d_osc, time=t_new)


def stretcher_response(
    state: PlantState,
    drive_v: float,
    dt: float,
    gain: float,
    f_c: float,
    v_lo: float = -math.inf,
    v_hi: float = math.inf,
) -> PlantState:
    """Relax the stretcher phase toward ``gain * drive_v``.

    Discrete exponential update of a first-order low-pass with corner
    ``f_c``; the applied drive is clamped to ``[v_lo, v_hi]`` and the
    clamped value is recorded in ``stretcher_v`` (a clamp is therefore
    visible as ``state.stretcher_v != drive_v``).
    """
    if not f_c > 0:
        raise ValueError(f"f_c must be > 0, got {f_c!r}")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt!r}")
    state.check_finite()
    v = min(max(drive_v, v_lo), v_hi)
    tau = 1.0 / (2.0 * math.pi * f_c)
    alpha = 1.0 - math.exp(-dt / tau)
    phi = state.phi_stretcher + alpha * (gain * v - state.phi_stretcher)
    return replace(state, phi_stretcher=phi, stretcher_v=v, time=state.time + dt)


def pm_pulse_envelope(pm: PmParams, t_rel_ns):
    """Pulse envelope vs time from the leading edge (ns). Vectorized.

    0 before the pulse, 1 on the flat top, then a damped sinusoid of
    amplitude ``ringing_amp`` after the trailing edge.
    """
    t = np.asarray(t_rel_ns, dtype=float)
    w = 2.0 * math.pi * pm.ringing_freq_hz * 1e-9  # rad/ns
    s = t - pm.pulse_width_ns
    ring = pm.ringing_amp * np.exp(-pm.ringing_decay_per_ns * np.maximum(s, 0.0)) * np.sin(w * np.maximum(s, 0.0))
    env = np.where(t < 0.0, 0.0, np.where(t <= pm.pulse_width_ns, 1.0, ring))
    return env if env.ndim else float(env)


def pm_phase(pm: PmParams, drive_v: float, t_rel_ns: float) -> float:
    """Phase imposed by the modulator at ``t_rel_ns`` after the pulse edge."""
    if drive_v < 0 or drive_v > pm.v_max:
        raise ValueError(f"drive_v={drive_v!r} outside [0, {pm.v_max}] V")
    return math.pi * drive_v / pm.v_pi * pm_pulse_envelope(pm, t_rel_ns)


def pm_envelope_mean(pm: PmParams, a_ns: float, b_ns: float) -> float:
    """Mean of the pulse envelope over the window [a_ns, b_ns] (closed form)."""
    if not b_ns > a_ns:
        raise ValueError("need b_ns > a_ns")

    def _ring_integral(u: float) -> float:
        # integral of exp(-d s) sin(w s) ds from 0 to u
        d = pm.ringing_decay_per_ns
        w = 2.0 * math.pi * pm.ringing_freq_hz * 1e-9
        if w == 0.0:
            return 0.0
        if d == 0.0:
            return (1.0 - math.cos(w * u)) / w
        den = d * d + w * w
        return (w - math.exp(-d * u) * (d * math.sin(w * u) + w * math.cos(w * u))) / den

    total = 0.0
    # flat-top section
    lo, hi = max(a_ns, 0.0), min(b_ns, pm.pulse_width_ns)
    if hi > lo:
        total += hi - lo
    # ringing section
    lo = max(a_ns, pm.pulse_width_ns) - pm.pulse_width_ns
    hi = b_ns - pm.pulse_width_ns
    if hi > lo >= 0.0:
        total += pm.ringing_amp * (_ring_integral(hi) - _ring_integral(lo))
    return total / (b_ns - a_ns)


def quantum_phase_offset(opt: OpticalParams) -> float:
    """Constant phase offset of the quantum channel relative to the monitor.

    The residual arm length mismatch makes the two wavelengths sit at
    slightly different fringe phases:
    ``2*pi * n_g * dL * (1/lambda_q - 1/lambda_ph)``.  The locked quantum
    phase is the locked classical phase plus this constant (plus any PM
    contribution).
    """
    if opt.lambda_q_nm == opt.lambda_ph_nm:
        return 0.0
    dl_m = opt.delta_l_mm * 1e-3
    inv_q = 1.0 / (opt.lambda_q_nm * 1e-9)
    inv_ph = 1.0 / (opt.lambda_ph_nm * 1e-9)
    return 2.0 * math.pi * opt.group_index * dl_m * (inv_q - inv_ph)


def fringe_visibility(opt: OpticalParams) -> float:
    """Fringe contrast set by arm transmissions and mode overlap."""
    t1, t2 = opt.t_arm1, opt.t_arm2
    if t1 + t2 == 0.0:
        return 0.0
    return 2.0 * opt.overlap * math.sqrt(t1 * t2) / (t1 + t2)


def port_fractions(opt: OpticalParams, phi_total):
    """Power fractions (f_A, f_B) of the input reaching the two output ports.

    ``f_A = (t1+t2)/4 + (overlap*sqrt(t1 t2)/2) * cos(phi)`` and f_B the
    same with ``-cos``; the remainder ``1 - (t1+t2)/2`` is arm loss.
    Vectorized over ``phi_total``.
    """
    t1, t2 = opt.t_arm1, opt.t_arm2
    base = (t1 + t2) / 4.0
    amp = opt.overlap * math.sqrt(t1 * t2) / 2.0
    c = np.cos(phi_total)
    return base + amp * c, base - amp * c


def monitor_level(opt: OpticalParams, phi_total):
    """Monitor photodiode level, normalized so an ideal fringe spans [0, 1].

    This is the port-A fraction divided by the total transmitted power
    ``(t1+t2)/2``: ``(1 + V_f*cos(phi)) / 2`` with ``V_f`` the fringe
    visibility.
    """
    return 0.5 * (1.0 + fringe_visibility(opt) * np.cos(phi_total))
