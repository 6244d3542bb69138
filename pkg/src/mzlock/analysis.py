"""Metrics over count records: visibility, fringe fits, window summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .detection import CountRecord
from .errors import FitError, VisibilityUndefinedError


@dataclass(frozen=True)
class VisibilityResult:
    """Fringe contrast |c2-c1|/(c2+c1) with first-order Poisson error."""

    value: float
    uncertainty: float
    net: bool = False
    clamped: bool = False  # a dark-subtracted rate went negative and was zeroed


def visibility(c1: float, c2: float) -> VisibilityResult:
    """Raw visibility of two count rates (counts per unit time)."""
    if c1 < 0 or c2 < 0:
        raise ValueError("count rates must be >= 0")
    tot = c1 + c2
    if tot <= 0:
        raise VisibilityUndefinedError("c1 + c2 must be > 0")
    value = abs(c2 - c1) / tot
    sigma = 2.0 * math.sqrt(c1 * c1 * c2 + c2 * c2 * c1) / (tot * tot)
    return VisibilityResult(value=value, uncertainty=sigma)


def net_visibility(c1: float, c2: float, dark1: float, dark2: float) -> VisibilityResult:
    """Visibility after subtracting the detector dark-count rates.

    Negative subtracted rates are clamped to zero (and flagged) rather
    than silently folded into the absolute value.
    """
    if c1 < 0 or c2 < 0:
        raise ValueError("count rates must be >= 0")
    n1 = c1 - dark1
    n2 = c2 - dark2
    clamped = n1 < 0 or n2 < 0
    n1 = max(n1, 0.0)
    n2 = max(n2, 0.0)
    if n1 + n2 <= 0:
        raise VisibilityUndefinedError("both dark-subtracted rates are zero")
    raw = visibility(n1, n2)
    return VisibilityResult(value=raw.value, uncertainty=raw.uncertainty,
                            net=True, clamped=clamped)


@dataclass(frozen=True)
class FringeFit:
    """Cosine fit C(V) = amplitude * (1 + visibility*cos(pi*V/v_pi + phi0))."""

    amplitude: float
    v_pi_fit: float
    phi0: float
    visibility: float
    r_squared: float
    vis_sigma: float = 0.0


def _fringe_model(v, amplitude, vis, v_pi, phi0):
    return amplitude * (1.0 + vis * np.cos(np.pi * v / v_pi + phi0))


def _linear_solve(v, y, w, v_pi):
    """Weighted LSQ of y = a + p*cos(pi v/v_pi) + q*sin(pi v/v_pi)."""
    x = np.pi * v / v_pi
    design = np.column_stack([np.ones_like(v), np.cos(x), np.sin(x)])
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    resid = y - design @ coef
    ssr = float(np.sum(w * resid * resid))
    return coef, ssr


def fit_fringe(points) -> FringeFit:
    """Weighted LSQ fit of a voltage fringe.

    ``points`` is a sequence of ``(voltage, rate, sigma)``.  The period is
    found by a deterministic coarse grid over candidate half-wave voltages
    followed by bounded local refinement; for each candidate the remaining
    parameters are solved linearly.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise FitError("points must be (voltage, rate, sigma) triples")
    if pts.shape[0] < 6:
        raise FitError(f"need >= 6 points, got {pts.shape[0]}")
    v, y, sig = pts[:, 0], pts[:, 1], pts[:, 2]
    span = float(v.max() - v.min())
    if span <= 0:
        raise FitError("degenerate voltage span")
    if np.any(sig < 0):
        raise FitError("sigmas must be >= 0")
    # zero-sigma points get the weight of the smallest positive sigma
    floor = sig[sig > 0].min() if np.any(sig > 0) else 1.0
    w = 1.0 / np.maximum(sig, floor) ** 2

    mean_w = float(np.sum(w * y) / np.sum(w))
    ss_tot = float(np.sum(w * (y - mean_w) ** 2))

    # the data must span at least half a fringe period, so v_pi <= span;
    # search a little beyond to stay robust under noise
    grid = np.linspace(span / 20.0, 1.5 * span, 240)
    ssr_grid = np.array([_linear_solve(v, y, w, p)[1] for p in grid])
    k = int(np.argmin(ssr_grid))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(
        lambda p: _linear_solve(v, y, w, p)[1],
        bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12},
    )
    v_pi = float(res.x)
    (a, p_cos, q_sin), ssr = _linear_solve(v, y, w, v_pi)

    if not np.isfinite([a, p_cos, q_sin]).all():
        raise FitError("singular fringe fit")
    if a <= 0:
        raise FitError(f"non-positive fitted baseline amplitude {a:g}")
    vis = math.hypot(p_cos, q_sin) / a
    phi0 = math.atan2(-q_sin, p_cos)
    vis = min(vis, 1.0)
    r_squared = 1.0 - ssr / ss_tot if ss_tot > 0 else 0.0
    if ss_tot == 0:
        vis = 0.0

    return FringeFit(
        amplitude=a, v_pi_fit=v_pi, phi0=phi0, visibility=vis,
        r_squared=r_squared, vis_sigma=_vis_sigma(v, w, a, vis, v_pi, phi0),
    )


def _vis_sigma(v, w, amplitude, vis, v_pi, phi0):
    """1-sigma on the fitted visibility via the Gauss-Newton covariance."""
    x = np.pi * v / v_pi
    c = np.cos(x + phi0)
    s = np.sin(x + phi0)
    jac = np.column_stack([
        1.0 + vis * c,                        # d/dA
        amplitude * c,                        # d/dvis
        amplitude * vis * s * x / v_pi,       # d/dv_pi
        -amplitude * vis * s,                 # d/dphi0
    ])
    jtj = jac.T @ (jac * w[:, None])
    cov = np.linalg.pinv(jtj)
    var = float(cov[1, 1])
    return math.sqrt(var) if var > 0 else 0.0


def residual_sign_runs(residuals) -> tuple[int, float]:
    """Number of sign runs in the residuals and its fair-coin expectation.

    A strong deficit or excess of runs versus ``(n + 1) / 2`` flags
    systematic misfit (residuals that are not white).
    """
    r = np.asarray(residuals, dtype=float)
    signs = np.where(r >= 0, 1, -1)
    n = len(signs)
    if n == 0:
        return 0, 0.0
    runs = 1 + int(np.sum(signs[1:] != signs[:-1]))
    return runs, (n + 1) / 2.0


@dataclass(frozen=True)
class TimeseriesSummary:
    mean_d1: float
    sd_d1: float
    mean_d2: float
    sd_d2: float
    net_vis_mean: float
    net_vis_sd: float
    n_bins: int


def summarize_timeseries(
    records: list[CountRecord],
    window: tuple[float, float],
    dark_rate_d1: float = 0.0,
    dark_rate_d2: float = 0.0,
) -> TimeseriesSummary:
    """Per-detector mean/sd of rates and per-bin net visibility in a window.

    Bins whose start time falls in ``[t0, t1)`` are selected.  Visibility
    spread is the sample sd of the per-bin values (0 for a single bin).
    """
    t0, t1 = window
    sel = [r for r in records if t0 <= r.t_start < t1]
    if not sel:
        raise ValueError(f"no records in window [{t0}, {t1})")
    r1 = np.array([r.rate_d1 for r in sel])
    r2 = np.array([r.rate_d2 for r in sel])
    vis = np.array([
        net_visibility(a, b, dark_rate_d1, dark_rate_d2).value
        for a, b in zip(r1, r2)
    ])
    return TimeseriesSummary(
        mean_d1=float(r1.mean()), sd_d1=float(r1.std()),
        mean_d2=float(r2.mean()), sd_d2=float(r2.std()),
        net_vis_mean=float(vis.mean()), net_vis_sd=float(vis.std()),
        n_bins=len(sel),
    )
