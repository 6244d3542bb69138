"""Interference fringe versus phase-modulator voltage.

With the interferometer locked, each scan point dwells 10 s at one pulse
voltage; the resulting counts trace the cosine fringe whose period is
twice the half-wave voltage.  The weighted cosine fit recovers the
configured v_pi and the optical visibility.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mzlock import default_config, scan_voltage, write_fringe_csv

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = default_config()
scan = cfg.scenario.scan
print(f"scanning {scan.n_points} points, {scan.v_start}-{scan.v_end} V, "
      f"{scan.dwell_s:.0f} s dwell each ...")
result = scan_voltage(cfg)

v = np.array([p.voltage for p in result.points])
for fit, label in ((result.fit_d1, "D1"), (result.fit_d2, "D2")):
    print(f"{label} fit: amplitude {fit.amplitude:7.1f}/s  "
          f"v_pi {fit.v_pi_fit:.3f} V  visibility {fit.visibility:.4f}  "
          f"r^2 {fit.r_squared:.5f}")

write_fringe_csv(result.points, OUT / "voltage_fringe.csv")

vv = np.linspace(v.min(), v.max(), 400)
fig, ax = plt.subplots(figsize=(7, 4.5))
for fit, means, sds, color, label in (
    (result.fit_d1, [p.mean_d1 for p in result.points],
     [p.sd_d1 for p in result.points], "tab:blue", "D1"),
    (result.fit_d2, [p.mean_d2 for p in result.points],
     [p.sd_d2 for p in result.points], "tab:orange", "D2"),
):
    ax.errorbar(v, means, yerr=sds, fmt="o", ms=4, color=color, label=label)
    model = fit.amplitude * (1 + fit.visibility * np.cos(np.pi * vv / fit.v_pi_fit + fit.phi0))
    ax.plot(vv, model, "-", lw=1, color=color)
ax.set_xlabel("PM driving voltage (V)")
ax.set_ylabel("counts / s")
ax.set_title("Single-photon fringe vs modulator voltage (fit overlaid)")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "voltage_fringe.png", dpi=130)
print(f"wrote {OUT / 'voltage_fringe.png'}")
