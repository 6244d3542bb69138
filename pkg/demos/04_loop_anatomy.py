"""Inside the stabilization loop.

Short traced runs expose what the count records integrate over: the
residual phase error of the closed loop versus the free-running drift,
and the monitor photodiode pinned at the quadrature setpoint.  Also
demonstrates a what-if: fringe visibility under a 3 dB arm imbalance.
"""

from dataclasses import replace
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mzlock import OpticalParams, default_config, fringe_visibility, run_scenario

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = default_config()
scen = replace(cfg.scenario, duration_s=12.0, control_off_at=None,
               align_extremum_at=None)
closed = run_scenario(replace(cfg, scenario=scen), trace=True)
open_ = run_scenario(
    replace(cfg, scenario=replace(scen, control_on_at=None)), trace=True)

m = closed.trace_time >= 1.0
rms_closed = np.sqrt(np.mean(closed.trace_phase_err[m] ** 2))
rms_open = np.sqrt(np.mean(open_.trace_phase_err[m] ** 2))
print(f"residual phase RMS: closed loop {rms_closed:.4f} rad, "
      f"free-running {rms_open:.3f} rad ({rms_open / rms_closed:.0f}x)")
dev = np.abs(closed.trace_pd[m] - 0.5)
print(f"monitor within 2% of setpoint for {100 * np.mean(dev <= 0.02):.2f}% of samples")

fig, axes = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
stride = 25  # plot every 0.5 ms
axes[0].plot(open_.trace_time[::stride], open_.trace_phase_err[::stride],
             lw=0.5, label="free-running")
axes[0].plot(closed.trace_time[::stride], closed.trace_phase_err[::stride],
             lw=0.5, label="locked")
axes[0].set_ylabel("phase error (rad)")
axes[0].legend(loc="upper right")
axes[1].plot(closed.trace_time[::stride], closed.trace_pd[::stride], lw=0.5)
axes[1].axhline(0.5, color="k", ls="--", lw=0.8)
axes[1].set_ylabel("monitor level (norm.)")
axes[1].set_xlabel("time (s)")
axes[0].set_title("Quadrature lock: phase error and monitor level")
fig.tight_layout()
fig.savefig(OUT / "loop_anatomy.png", dpi=130)
print(f"wrote {OUT / 'loop_anatomy.png'}")

# what-if: fringe contrast with the 3 dB delay-line loss left uncompensated
balanced = fringe_visibility(OpticalParams(overlap=1.0))
imbalanced = fringe_visibility(OpticalParams(overlap=1.0, t_arm2=0.5))
print(f"visibility ceiling: balanced arms {balanced:.4f}, "
      f"3 dB arm imbalance {imbalanced:.4f}")
