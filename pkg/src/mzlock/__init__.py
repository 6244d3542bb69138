"""mzlock: simulator of an actively stabilized fiber Mach-Zehnder interferometer.

The package models a 1 km two-arm fiber interferometer whose inter-arm
phase is locked at quadrature by a PID loop acting on a piezo fiber
stretcher, while an attenuated laser provides single photons that are
counted by gated detectors.  It reproduces the stabilized visibility
time series, the fringe washout when the lock is released, and phase
fringes scanned with a pulsed electro-optic modulator.
"""

from .analysis import (
    FringeFit,
    TimeseriesSummary,
    VisibilityResult,
    fit_fringe,
    net_visibility,
    residual_sign_runs,
    summarize_timeseries,
    visibility,
)
from .config import (
    ControllerParams,
    InsetSpec,
    ScanSpec,
    SimConfig,
    Timeline,
    default_config,
    format_config,
    parse_config,
)
from .control import (
    ControllerState,
    MonitorSample,
    RangeResetResult,
    calibrate_setpoint,
    locked_phase,
    pid_update,
    quadrature_error,
    range_reset,
)
from .detection import (
    CountRecord,
    DetectorParams,
    SourceParams,
    crosstalk_click_probability,
    gate_click_probability,
    gate_pm_overlap,
    sample_counts,
)
from .errors import (
    CalibrationError,
    ConfigError,
    FitError,
    LockLostError,
    MzlockError,
    VisibilityUndefinedError,
)
from .harness import (
    Event,
    InsetPoint,
    RunResult,
    ScanPoint,
    ScanResult,
    derive_rng,
    derive_seed,
    inset_sweep,
    read_records_csv,
    run_scenario,
    scan_voltage,
    write_events_csv,
    write_fringe_csv,
    write_inset_csv,
    write_records_csv,
)
from .plant import (
    NoiseParams,
    OpticalParams,
    PlantState,
    PmParams,
    StretcherParams,
    fringe_visibility,
    initial_plant_state,
    monitor_level,
    pm_phase,
    pm_pulse_envelope,
    port_fractions,
    quantum_phase_offset,
    step_environment,
    stretcher_response,
)

__version__ = "0.1.0"
