"""Complete simulation configuration and its flat text format.

Config files are flat ``key = value`` lines with ``#`` comments and
dotted section keys (``detectors.d1.dark_prob = 9.33e-6``).  An empty
file yields the default configuration, which carries the published
experiment parameters.  Unknown keys are rejected; validation reports
every violated constraint with its key path.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field

from .control import ControllerState
from .detection import DetectorParams, SourceParams
from .errors import ConfigError
from .plant import NoiseParams, OpticalParams, PmParams, StretcherParams


@dataclass(frozen=True)
class ControllerParams:
    """PID gains and loop options (tuned once against the default plant)."""

    kp: float = 2.0
    ki: float = 4.0e4
    kd: float = 0.0
    guard_frac: float = 0.05
    latency_steps: int = 0

    def validate(self, path: str = "controller") -> list[str]:
        errs = []
        if not 0.0 <= self.guard_frac < 0.5:
            errs.append(f"{path}.guard_frac: must be in [0, 0.5)")
        if self.latency_steps < 0:
            errs.append(f"{path}.latency_steps: must be >= 0")
        return errs


@dataclass(frozen=True)
class ScanSpec:
    """Voltage fringe scan: single ascending pass, fixed dwell per point."""

    v_start: float = 0.0
    v_end: float = 6.8
    n_points: int = 15
    dwell_s: float = 10.0
    settle_s: float = 1.0

    def validate(self, path: str = "scenario.scan") -> list[str]:
        errs = []
        if self.n_points < 2:
            errs.append(f"{path}.n_points: must be >= 2")
        if not self.v_end > self.v_start:
            errs.append(f"{path}.v_start/v_end: need v_start < v_end")
        if self.v_start < 0:
            errs.append(f"{path}.v_start: must be >= 0")
        if not self.dwell_s > 0:
            errs.append(f"{path}.dwell_s: must be > 0")
        if not self.settle_s > 0:
            errs.append(f"{path}.settle_s: must be > 0")
        return errs


@dataclass(frozen=True)
class InsetSpec:
    """Gate-delay sweep reproducing the modulation pulse shape."""

    delay_min_ns: float = -5.0
    delay_max_ns: float = 45.0
    delay_step_ns: float = 0.25
    drive_v: float = 5.0

    def validate(self, path: str = "scenario.inset") -> list[str]:
        errs = []
        if not self.delay_max_ns > self.delay_min_ns:
            errs.append(f"{path}.delay_min_ns/delay_max_ns: need min < max")
        if not self.delay_step_ns > 0:
            errs.append(f"{path}.delay_step_ns: must be > 0")
        if self.drive_v < 0:
            errs.append(f"{path}.drive_v: must be >= 0")
        return errs


@dataclass(frozen=True)
class Timeline:
    """Scenario timeline; events take effect at bin boundaries."""

    duration_s: float = 300.0
    control_on_at: float | None = 0.0
    control_off_at: float | None = 250.0
    align_extremum_at: float | None = 1.0
    pm_events: tuple[tuple[float, float], ...] = ()
    scan: ScanSpec = field(default_factory=ScanSpec)
    inset: InsetSpec = field(default_factory=InsetSpec)

    def validate(self, path: str = "scenario", v_max: float = math.inf) -> list[str]:
        errs = []
        if not self.duration_s > 0:
            errs.append(f"{path}.duration_s: must be > 0")
        # events dated past duration_s simply never fire; only ordering and
        # non-negative times are structural requirements
        ordered = []
        for name in ("control_on_at", "align_extremum_at", "control_off_at"):
            t = getattr(self, name)
            if t is None:
                continue
            if t < 0:
                errs.append(f"{path}.{name}: must be >= 0")
            ordered.append((t, name))
        for prev, nxt in zip(ordered, ordered[1:]):
            if not prev[0] < nxt[0]:
                errs.append(
                    f"{path}.{nxt[1]}: event times must be strictly increasing "
                    f"({prev[1]}={prev[0]!r} !< {nxt[1]}={nxt[0]!r})"
                )
        last_t = None
        for i, (t, v) in enumerate(self.pm_events):
            if t < 0:
                errs.append(f"{path}.pm_events[{i}]: time must be >= 0")
            if last_t is not None and not t > last_t:
                errs.append(f"{path}.pm_events[{i}]: times must be strictly increasing")
            last_t = t
            if not 0.0 <= v <= v_max:
                errs.append(f"{path}.pm_events[{i}]: voltage must lie in [0, {v_max:g}]")
        errs += self.scan.validate(f"{path}.scan")
        errs += self.inset.validate(f"{path}.inset")
        if self.scan.v_end > v_max:
            errs.append(f"{path}.scan.v_end: exceeds pm.v_max = {v_max:g}")
        return errs


@dataclass(frozen=True)
class SimConfig:
    """Everything a run needs: optics, noise, loop, detectors, timeline."""

    seed: int = 12345
    dt: float = 2e-5            # control/plant step (50 kHz)
    bin_duration: float = 1.0   # detector integration time per record
    optics: OpticalParams = field(default_factory=OpticalParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    pm: PmParams = field(default_factory=PmParams)
    stretcher: StretcherParams = field(default_factory=StretcherParams)
    controller: ControllerParams = field(default_factory=ControllerParams)
    d1: DetectorParams = field(default_factory=lambda: DetectorParams(dark_prob=9.33e-6))
    d2: DetectorParams = field(default_factory=lambda: DetectorParams(dark_prob=4.14e-5))
    source: SourceParams = field(default_factory=SourceParams)
    scenario: Timeline = field(default_factory=Timeline)

    # ---- validation ----

    def violations(self) -> list[str]:
        errs = []
        if self.seed < 0:
            errs.append("seed: must be a non-negative 64-bit integer")
        if not self.dt > 0:
            errs.append("dt: must be > 0")
        if not self.bin_duration > 0:
            errs.append("bin_duration: must be > 0")
        if self.dt > 0 and self.bin_duration > 0:
            steps = self.bin_duration / self.dt
            if abs(steps - round(steps)) > 1e-9:
                errs.append("bin_duration: must be an integer multiple of dt")
            if self.scenario.duration_s < self.bin_duration:
                errs.append("scenario.duration_s: must cover at least one bin")
            for name in ("dwell_s", "settle_s"):
                v = getattr(self.scenario.scan, name)
                bins = v / self.bin_duration
                if abs(bins - round(bins)) > 1e-9 or round(bins) < 1:
                    errs.append(
                        f"scenario.scan.{name}: must be a whole number of "
                        f"integration bins (bin_duration = {self.bin_duration:g} s)"
                    )
        errs += self.optics.validate("optics")
        errs += self.noise.validate("noise")
        errs += self.pm.validate("pm")
        errs += self.stretcher.validate("stretcher")
        errs += self.controller.validate("controller")
        errs += self.d1.validate("detectors.d1")
        errs += self.d2.validate("detectors.d2")
        errs += self.source.validate("source")
        errs += self.scenario.validate("scenario", v_max=self.pm.v_max)
        f_max = self.noise.f_max
        if f_max > 0 and self.dt > 1.0 / (10.0 * f_max):
            errs.append(
                f"dt: {self.dt:g} s too coarse for the {f_max:g} Hz noise "
                f"component (need dt <= {1.0 / (10.0 * f_max):g} s)"
            )
        if self.d1.rep_rate_hz != self.d2.rep_rate_hz:
            errs.append("detectors.d2.rep_rate_hz: both detectors share one gate clock")
        return errs

    def validate(self) -> "SimConfig":
        errs = self.violations()
        if errs:
            raise ConfigError(errs)
        return self

    def controller_state(self) -> ControllerState:
        """Uncalibrated controller seeded with the configured gains/limits."""
        return ControllerState(
            kp=self.controller.kp, ki=self.controller.ki, kd=self.controller.kd,
            v_lo=self.stretcher.v_lo, v_hi=self.stretcher.v_hi,
            guard_frac=self.controller.guard_frac,
            latency_steps=self.controller.latency_steps,
        )


# ---- flat key=value format ----

_TOP_FIELDS = ("seed", "dt", "bin_duration")

# longest prefixes first so "detectors.d1.x" does not match a "detectors" section
_SECTIONS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("detectors.d1", ("d1",)),
    ("detectors.d2", ("d2",)),
    ("scenario.scan", ("scenario", "scan")),
    ("scenario.inset", ("scenario", "inset")),
    ("optics", ("optics",)),
    ("noise", ("noise",)),
    ("pm", ("pm",)),
    ("stretcher", ("stretcher",)),
    ("controller", ("controller",)),
    ("source", ("source",)),
    ("scenario", ("scenario",)),
)


def _parse_triples(text: str, key: str, width: int):
    items = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != width:
            raise ValueError(f"{key}: expected {width} colon-separated numbers per item")
        items.append(tuple(float(p) for p in parts))
    return tuple(items)


def _parse_leaf(key: str, raw: str, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.strip().lower() == "none":
            return None
        hint = args[0]
        origin = typing.get_origin(hint)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        width = len(typing.get_args(inner))
        return _parse_triples(raw, key, width)
    if hint is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if hint is int:
        return int(raw.strip(), 0)
    if hint is float:
        return float(raw.strip())
    if hint is str:
        return raw.strip()
    raise ValueError(f"{key}: unsupported field type {hint!r}")


def _format_leaf(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(":".join(repr(x) for x in item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _match_section(key: str):
    for prefix, attr_chain in _SECTIONS:
        if key.startswith(prefix + "."):
            leaf = key[len(prefix) + 1:]
            if "." not in leaf:
                return attr_chain, leaf
    return None, None


def parse_config(text: str) -> SimConfig:
    """Parse flat ``key = value`` text into a validated SimConfig."""
    overrides: dict[tuple[str, ...], dict[str, object]] = {}
    top: dict[str, object] = {}
    parse_errs: list[str] = []

    hints_cache: dict[type, dict] = {}

    def hints_for(obj) -> dict:
        cls = type(obj)
        if cls not in hints_cache:
            hints_cache[cls] = typing.get_type_hints(cls)
        return hints_cache[cls]

    base = SimConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            parse_errs.append(f"line {lineno}: expected 'key = value', got {line.strip()!r}")
            continue
        key, raw = (s.strip() for s in stripped.split("=", 1))
        try:
            if key in _TOP_FIELDS:
                top[key] = _parse_leaf(key, raw, typing.get_type_hints(SimConfig)[key])
                continue
            attr_chain, leaf = _match_section(key)
            if attr_chain is None:
                parse_errs.append(f"line {lineno}: unknown key {key!r}")
                continue
            obj = base
            for a in attr_chain:
                obj = getattr(obj, a)
            hints = hints_for(obj)
            if leaf not in hints or leaf.startswith("_"):
                parse_errs.append(f"line {lineno}: unknown key {key!r}")
                continue
            overrides.setdefault(attr_chain, {})[leaf] = _parse_leaf(key, raw, hints[leaf])
        except ValueError as exc:
            parse_errs.append(f"line {lineno}: {exc}")

    if parse_errs:
        raise ConfigError(parse_errs)

    cfg = base
    # apply deepest sections first so parent replaces see updated children
    for attr_chain in sorted(overrides, key=len, reverse=True):
        fields = overrides[attr_chain]
        obj = cfg
        parents = []
        for a in attr_chain:
            parents.append((obj, a))
            obj = getattr(obj, a)
        obj = dataclasses.replace(obj, **fields)
        for parent, a in reversed(parents):
            obj = dataclasses.replace(parent, **{a: obj})
        cfg = obj
    if top:
        cfg = dataclasses.replace(cfg, **top)
    return cfg.validate()


def format_config(cfg: SimConfig) -> str:
    """Emit a config as flat text that parses back to an identical config."""
    lines = ["# mzlock configuration (all keys shown with their current values)"]
    for name in _TOP_FIELDS:
        lines.append(f"{name} = {_format_leaf(getattr(cfg, name))}")
    for prefix, attr_chain in sorted(_SECTIONS, key=lambda s: s[0]):
        obj = cfg
        for a in attr_chain:
            obj = getattr(obj, a)
        lines.append("")
        for f in dataclasses.fields(obj):
            if f.name in ("scan", "inset"):  # nested sections emitted separately
                continue
            lines.append(f"{prefix}.{f.name} = {_format_leaf(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def default_config() -> SimConfig:
    return SimConfig().validate()
