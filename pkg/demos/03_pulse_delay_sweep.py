"""Modulation pulse shape seen through the detection gate.

Sweeping the delay between the pulse generator and the 2.5 ns detector
gate maps the electrical pulse: a 10 ns flat top followed by the
impedance-mismatch ringing.  The default gate placement used by the other
scenarios sits at the beginning of the flat top where the envelope is 1.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mzlock import default_config, inset_sweep, write_inset_csv

OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

cfg = default_config()
points = inset_sweep(cfg)
delays = np.array([p.delay_ns for p in points])
rates = np.array([p.rate_d1 for p in points])

half = 0.5 * (rates.max() + rates.min())
above = delays[rates >= half]
print(f"{len(points)} delays; D1 peak {rates.max():.0f}/s, "
      f"floor {rates.min():.0f}/s, width at half max ~ "
      f"{above.max() - above.min():.2f} ns")

write_inset_csv(points, OUT / "pulse_delay_sweep.csv")

fig, ax = plt.subplots(figsize=(7, 4))
ax.plot(delays, rates, "-", lw=1.2)
ax.set_xlabel("gate delay relative to pulse edge (ns)")
ax.set_ylabel("expected counts / s at D1")
ax.set_title("Detection gate swept across the 10 ns modulation pulse")
fig.tight_layout()
fig.savefig(OUT / "pulse_delay_sweep.png", dpi=130)
print(f"wrote {OUT / 'pulse_delay_sweep.png'}")
