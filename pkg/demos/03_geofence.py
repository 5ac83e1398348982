"""
Hysteresis versus flapping
==========================

Pin the tracked hearing aid right on the 3 m boundary and count how many
exit/enter events a bare threshold fires compared with the hysteresis and dwell
configuration.
"""

from medjack import GeofenceConfig, PathLossModel, SimulationSpec, Trajectory, bundled_registry, bundled_scene
from medjack import replay, simulate
from medjack.presence import EventKind
from medjack.scene import tracked_identity

model = PathLossModel(-59.0, 2.0)
scene, registry = bundled_scene(), bundled_registry()
key = tracked_identity(scene, "Hearing aids").key

pinned = Trajectory.from_waypoints([(0, 3.0), (600_000, 3.0)])
trace = simulate(scene, pinned, SimulationSpec(seed=1, duration_ms=pinned.end_ms, noise_sigma_dbm=2.0, model=model))

for label, cfg in [("bare threshold", GeofenceConfig(3.0, 0.0, 1)),
                   ("0.5 m band, dwell 3", GeofenceConfig(3.0, 0.5, 3))]:
    events = replay(trace, registry, model, cfg).events_for(key)
    n = sum(e.kind in (EventKind.EXIT, EventKind.ENTER) for e in events)
    print(f"{label:<22} {n:4d} boundary events in 10 minutes")
