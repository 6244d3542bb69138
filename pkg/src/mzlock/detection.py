"""Gated single-photon detection statistics.

Detectors are InGaAs modules in gated (Geiger) mode.  Per gate, the mean
detected photon number is the source mean photon number times the output
port fraction, the post-interferometer path loss and the detector
efficiency; a click is then a Bernoulli event combining Poisson photon
statistics with an independent dark-count probability:

    p = 1 - (1 - p_dark) * exp(-mu_detected)

Counts over many gates are binomial samples, deterministic under a fixed
seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plant import PmParams, pm_envelope_mean

PLANCK_H = 6.62607015e-34  # J s
SPEED_OF_LIGHT = 2.998e8   # m/s


@dataclass(frozen=True)
class DetectorParams:
    """Gated detector: efficiency, dark probability per gate, timing."""

    efficiency: float = 0.15
    dark_prob: float = 9.33e-6
    gate_width_ns: float = 2.5
    rep_rate_hz: float = 166000.0
    sync_delay_us: float = 5.8
    gate_delay_ns: float = 0.0  # gate start relative to the PM pulse edge

    def validate(self, path: str = "detector") -> list[str]:
        errs = []
        if not 0.0 <= self.efficiency <= 1.0:
            errs.append(f"{path}.efficiency: must be in [0, 1]")
        if not 0.0 <= self.dark_prob <= 1.0:
            errs.append(f"{path}.dark_prob: must be in [0, 1]")
        if not self.gate_width_ns > 0:
            errs.append(f"{path}.gate_width_ns: must be > 0")
        if not self.rep_rate_hz > 0:
            errs.append(f"{path}.rep_rate_hz: must be > 0")
        if self.sync_delay_us < 0:
            errs.append(f"{path}.sync_delay_us: must be >= 0")
        elif self.sync_delay_us > 0 and self.rep_rate_hz > 1e6 / self.sync_delay_us:
            errs.append(
                f"{path}.rep_rate_hz: {self.rep_rate_hz:g} Hz exceeds the "
                f"1/sync_delay limit of {1e6 / self.sync_delay_us:g} Hz"
            )
        return errs


@dataclass(frozen=True)
class SourceParams:
    """Attenuated laser source and the downstream loss/crosstalk budget."""

    mu: float = 0.1                  # mean photons per gate at the interferometer input
    post_path_loss_db: float = 3.1   # demux + circulator/FBG between coupler and detector
    launch_dbm: float = -17.0        # classical channel launch power
    isolation_db: float = 100.0      # classical->quantum channel isolation

    def validate(self, path: str = "source") -> list[str]:
        errs = []
        if self.mu < 0:
            errs.append(f"{path}.mu: must be >= 0")
        if self.post_path_loss_db < 0:
            errs.append(f"{path}.post_path_loss_db: must be >= 0 dB")
        if self.isolation_db < 0:
            errs.append(f"{path}.isolation_db: must be >= 0 dB")
        return errs


@dataclass(frozen=True)
class CountRecord:
    """One integration bin of the experiment record (a row of the output)."""

    t_start: float
    duration: float
    counts_d1: int
    counts_d2: int
    mean_pd_level: float
    control_enabled: bool
    pm_voltage: float

    def validate(self, path: str = "record") -> list[str]:
        errs = []
        if self.counts_d1 < 0 or self.counts_d2 < 0:
            errs.append(f"{path}: counts must be >= 0")
        if not self.duration > 0:
            errs.append(f"{path}.duration: must be > 0")
        return errs

    @property
    def rate_d1(self) -> float:
        return self.counts_d1 / self.duration

    @property
    def rate_d2(self) -> float:
        return self.counts_d2 / self.duration


def gate_click_probability(src: SourceParams, det: DetectorParams, port_fraction):
    """Click probability per gate for a given output port fraction.

    ``mu_det = mu * f * 10^(-loss/10) * efficiency``;
    ``p = 1 - (1 - dark) * exp(-mu_det)``.  Vectorized over
    ``port_fraction``.
    """
    f = np.asarray(port_fraction, dtype=float)
    if np.any(f < 0) or np.any(f > 1):
        raise ValueError("port_fraction must lie in [0, 1]")
    mu_det = src.mu * f * 10.0 ** (-src.post_path_loss_db / 10.0) * det.efficiency
    p = 1.0 - (1.0 - det.dark_prob) * np.exp(-mu_det)
    return p if p.ndim else float(p)


def sample_counts(p, n_gates, rng: np.random.Generator):
    """Binomial click count over ``n_gates`` gates at probability ``p``."""
    return rng.binomial(n_gates, p)


def gate_pm_overlap(det: DetectorParams, pm: PmParams, extra_delay_ns: float = 0.0) -> float:
    """Mean PM pulse envelope seen by the detection gate.

    The gate of width ``gate_width_ns`` opens at
    ``gate_delay_ns + extra_delay_ns`` relative to the pulse leading edge.
    With the default alignment (gate at the beginning of the pulse, inside
    the flat top) this factor is 1.
    """
    a = det.gate_delay_ns + extra_delay_ns
    return pm_envelope_mean(pm, a, a + det.gate_width_ns)


def crosstalk_click_probability(
    launch_dbm: float, isolation_db: float, lambda_nm: float, det: DetectorParams
) -> float:
    """Per-gate click probability from classical light leaking past the filters.

    Leaked power (dBm) converts to a photon flux via E = h*c/lambda; the
    linearized probability is flux * gate_width * efficiency (valid for
    values << 1).
    """
    if isolation_db < 0:
        raise ValueError("isolation_db must be >= 0")
    if math.isinf(isolation_db):
        return 0.0
    power_w = 10.0 ** ((launch_dbm - isolation_db) / 10.0) * 1e-3
    photon_energy = PLANCK_H * SPEED_OF_LIGHT / (lambda_nm * 1e-9)
    flux = power_w / photon_energy
    return flux * det.gate_width_ns * 1e-9 * det.efficiency
