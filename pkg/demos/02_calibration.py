"""
Calibrating the path-loss model
===============================

Fit RSSI = r0 - 10 n log10(d) to a noisy four-bearing sweep and see how the
fitted model turns a reading back into a distance.
"""

import numpy as np

from medjack import estimate_distance, fit_path_loss
from medjack.ranging import CALIBRATION_DISTANCES_M, Bearing, CalibrationTable, bearing_residuals

rng = np.random.default_rng(0)

# 20 readings per distance and bearing, true r0 = -59 dBm, n = 2, sigma = 2 dB
rows = []
for d in CALIBRATION_DISTANCES_M:
    for b in Bearing:
        noise = rng.normal(0.0, 2.0, 20)
        rows += [(d, b.value, int(round(-59 - 20 * np.log10(d) + e))) for e in noise]
table = CalibrationTable.from_samples(rows)

model = fit_path_loss(table)
print(f"r0 = {model.r0_dbm:.2f} dBm, n = {model.n:.3f}, sigma = {model.sigma_dbm:.2f} dB")

# %%
# Per-bearing mean residuals hint at body shadowing on real data; here they are noise.
for bearing, r in bearing_residuals(model, table).items():
    print(f"  {bearing.value}: {r:+.2f} dB")

# %%
# Inverting the model: readings near r0 map to about a metre.
for rssi in (-55, -59, -65, -69, -75):
    est = estimate_distance(model, rssi)
    print(f"{rssi} dBm -> {est.d_m:.2f} m  (1-sigma {est.d_lo:.2f} to {est.d_hi:.2f})")
