"""
A full scene, replayed
======================

Simulate the bundled fifteen-device room while the hearing-aid wearer walks
out of and back into the geofence, replay the trace through the pipeline, score
detection against ground truth, and finish with triage rates from a toy survey.
"""

from medjack import GeofenceConfig, PathLossModel, SimulationSpec, bundled_registry, bundled_scene
from medjack import replay, score_detection, simulate, triage_metrics
from medjack.scene import bundled_trajectory, tracked_identity
from medjack.triage import TriageResponse

model = PathLossModel(-59.0, 2.0)
cfg = GeofenceConfig(3.0, 0.5, 3)
scene, walk = bundled_scene(), bundled_trajectory()
key = tracked_identity(scene, "Hearing aids").key

trace = simulate(scene, walk, SimulationSpec(seed=7, duration_ms=walk.end_ms, noise_sigma_dbm=0.5, model=model))
report = replay(trace, bundled_registry(), model, cfg)
print(f"{len(trace.observations)} observations from {len(report.devices)} advertising devices")
for e in report.events_for(key):
    print(f"  t={e.ts_ms / 1000:7.1f} s  {e.kind.value}")

score = score_detection(report, walk, cfg, key)
print("matched", score.matched, "missed", score.missed, "spurious", score.spurious,
      "timing errors (ms)", score.timing_errors_ms)

# %%
# Triage: did responders spot the device, know what it was, think it exploitable?
survey = [TriageResponse(f"p{i}", "Insulin pump", i < 12, i < 7, i < 2) for i in range(15)]
pump = triage_metrics(survey)["Insulin pump"]
print(f"identified {pump.identification_rate:.1%}, knew it {pump.knowledge_rate:.1%}, "
      f"exploitable {pump.exploitability_rate:.1%}, gap {pump.gap:+.1%}")
