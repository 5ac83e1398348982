"""Seeded simulation of the fifteen-device scene and end-to-end replay.

Only the tracked device moves; its radial distance from the base station
follows a piecewise-linear :class:`Trajectory`. Every other advertising
device sits at a fixed distance so that the replay has to tell fifteen
devices apart.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .adv_model import (
    AdvertisementPdu,
    AddressType,
    MalformedError,
    RawObservation,
    parse_advertisement,
    write_capture,
)
from .fingerprint import Category, DeviceIdentity, MatchResult, classify, identity_key
from .presence import (
    EventKind,
    GeofenceConfig,
    NotificationQueue,
    PresenceTracker,
    TrackerState,
    TrackingEvent,
    tick,
    update,
)
from .ranging import PathLossModel, RssiFilterState, predict_rssi

DEFAULT_FIXED_DISTANCE_M = 2.0


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class AdvertisingProfile:
    adv_interval_ms: int
    address: str
    pdu: AdvertisementPdu
    payload: bytes
    distance_m: float = DEFAULT_FIXED_DISTANCE_M
    address_type: AddressType = AddressType.RANDOM

    def __post_init__(self):
        if self.adv_interval_ms <= 0:
            raise SceneError("adv_interval_ms must be > 0")
        if not self.distance_m > 0:
            raise SceneError("distance_m must be > 0")


@dataclass(frozen=True)
class SceneDevice:
    name: str
    category: Category
    position_label: str
    advertising: AdvertisingProfile | None = None

    @property
    def advertises(self) -> bool:
        return self.advertising is not None


@dataclass(frozen=True)
class Scene:
    devices: tuple[SceneDevice, ...]

    def __post_init__(self):
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise SceneError("device names must be unique")

    def __getitem__(self, name: str) -> SceneDevice:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.devices]

    def inventory(self) -> list[tuple[str, Category]]:
        return [(d.name, d.category) for d in self.devices]


def load_scene(document: Mapping | str | Path) -> Scene:
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    devices = []
    for i, d in enumerate(document.get("devices", [])):
        try:
            adv = d.get("advertising")
            profile = None
            if adv is not None:
                payload = bytes.fromhex(adv["data_hex"])
                profile = AdvertisingProfile(
                    adv_interval_ms=int(adv["adv_interval_ms"]),
                    address=adv["address"],
                    pdu=parse_advertisement(payload),
                    payload=payload,
                    distance_m=float(adv.get("distance_m", DEFAULT_FIXED_DISTANCE_M)),
                    address_type=AddressType(adv.get("address_type", "random")),
                )
            devices.append(SceneDevice(d["name"], Category(d["category"]), d.get("position_label", ""), profile))
        except (KeyError, ValueError, TypeError) as exc:
            raise SceneError(f"devices[{i}]: {exc}") from None
    return Scene(tuple(devices))


def _data_path(*parts: str) -> Path:
    return Path(str(resources.files("medjack").joinpath("data", *parts)))


def bundled_scene() -> Scene:
    """The fifteen scene devices with synthetic advertising profiles."""
    return load_scene(_data_path("scene", "table2.json"))


@dataclass(frozen=True)
class Trajectory:
    """Radial distance of the tracked device over time, linearly interpolated."""

    t_ms: tuple[int, ...]
    distance_m: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "t_ms", tuple(int(t) for t in self.t_ms))
        object.__setattr__(self, "distance_m", tuple(float(d) for d in self.distance_m))
        if not self.t_ms or len(self.t_ms) != len(self.distance_m):
            raise SceneError("trajectory needs at least one waypoint")
        if any(b < a for a, b in zip(self.t_ms, self.t_ms[1:])):
            raise SceneError("waypoint times must be non-decreasing")
        if any(not d > 0 for d in self.distance_m):
            raise SceneError("waypoint distances must be positive")

    @classmethod
    def from_waypoints(cls, waypoints: Iterable[tuple[int, float]]) -> Trajectory:
        pts = list(waypoints)
        return cls(tuple(t for t, _ in pts), tuple(d for _, d in pts))

    @classmethod
    def from_dict(cls, d: Mapping) -> Trajectory:
        return cls.from_waypoints((w["t_ms"], w["distance_m"]) for w in d["waypoints"])

    def to_dict(self) -> dict:
        return {"waypoints": [{"t_ms": t, "distance_m": d} for t, d in zip(self.t_ms, self.distance_m)]}

    @property
    def end_ms(self) -> int:
        return self.t_ms[-1]

    def distance_at(self, t_ms: float) -> float:
        ts = self.t_ms
        if t_ms <= ts[0]:
            return self.distance_m[0]
        if t_ms >= ts[-1]:
            return self.distance_m[-1]
        i = bisect.bisect_right(ts, t_ms)
        t0, t1 = ts[i - 1], ts[i]
        d0, d1 = self.distance_m[i - 1], self.distance_m[i]
        return d0 + (d1 - d0) * (t_ms - t0) / (t1 - t0)

    def segments(self):
        for i in range(len(self.t_ms) - 1):
            yield self.t_ms[i], self.distance_m[i], self.t_ms[i + 1], self.distance_m[i + 1]


def load_trajectory(document: Mapping | str | Path) -> Trajectory:
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    try:
        return Trajectory.from_dict(document)
    except (KeyError, TypeError) as exc:
        raise SceneError(f"bad trajectory document: {exc}") from None


def bundled_trajectory() -> Trajectory:
    """Scripted leave/return storyline for the tracked hearing aids."""
    return load_trajectory(_data_path("scene", "murder_scenario.json"))


@dataclass(frozen=True)
class SimulationSpec:
    seed: int
    duration_ms: int
    noise_sigma_dbm: float
    model: PathLossModel
    tracked_device: str = "Hearing aids"
    source_id: str = "base"

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise SceneError("seed must be a 64-bit unsigned integer")
        if self.noise_sigma_dbm < 0:
            raise SceneError("noise_sigma_dbm must be >= 0")
        if self.duration_ms < 0:
            raise SceneError("duration_ms must be >= 0")


@dataclass(frozen=True)
class SimulationTrace:
    observations: tuple[RawObservation, ...]
    tracked_device: str
    tracked_key: str

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def for_address(self, address: str) -> list[RawObservation]:
        return [o for o in self.observations if o.address == address]

    def write(self, stream: IO[str]) -> None:
        write_capture(self.observations, stream)


def _quantize(rssi: float) -> int:
    return int(min(20, max(-127, round(rssi))))


def simulate(scene: Scene, trajectory: Trajectory, spec: SimulationSpec) -> SimulationTrace:
    """Generate the time-ordered advertisement stream heard at the base station.

    RSSI is the model prediction plus seeded Gaussian noise, rounded to whole
    dBm. Each device draws from its own child stream of ``spec.seed`` so
    results do not depend on emission interleaving.
    """
    try:
        tracked = scene[spec.tracked_device]
    except KeyError:
        raise SceneError(f"tracked device {spec.tracked_device!r} is not in the scene") from None
    if not tracked.advertises:
        raise SceneError(f"tracked device {spec.tracked_device!r} does not advertise")

    children = np.random.SeedSequence(spec.seed).spawn(len(scene.devices))
    emitted: list[tuple[int, int, RawObservation]] = []
    for idx, (dev, child) in enumerate(zip(scene.devices, children)):
        prof = dev.advertising
        if prof is None:
            continue
        rng = np.random.Generator(np.random.PCG64(child))
        is_tracked = dev is tracked
        # stagger non-tracked devices inside the interval; tracked starts at 0
        t = 0 if is_tracked else (idx * 53) % prof.adv_interval_ms
        while t <= spec.duration_ms:
            d = trajectory.distance_at(t) if is_tracked else prof.distance_m
            rssi = predict_rssi(spec.model, d, spec.noise_sigma_dbm, rng)
            obs = RawObservation(t, spec.source_id, prof.address, prof.address_type, _quantize(rssi), prof.payload)
            emitted.append((t, idx, obs))
            t += prof.adv_interval_ms
    emitted.sort(key=lambda e: (e[0], e[1]))
    key = identity_key(tracked.advertising.pdu, tracked.advertising.address).key
    return SimulationTrace(tuple(o for _, _, o in emitted), tracked.name, key)


# -- replay -----------------------------------------------------------------

@dataclass
class DeviceReport:
    key: str
    addresses: list[str]
    first_ts_ms: int
    observations: int = 0
    malformed: int = 0
    matches: list[MatchResult] = field(default_factory=list)
    events: list[TrackingEvent] = field(default_factory=list)
    final_state: TrackerState = TrackerState.UNKNOWN

    def to_dict(self) -> dict:
        return {
            "device_key": self.key,
            "addresses": self.addresses,
            "first_ts_ms": self.first_ts_ms,
            "observations": self.observations,
            "malformed": self.malformed,
            "matches": [m.to_dict() for m in self.matches],
            "events": [e.to_record() for e in self.events],
            "final_state": self.final_state.value,
        }


@dataclass
class PipelineReport:
    devices: dict[str, DeviceReport] = field(default_factory=dict)
    events: list[TrackingEvent] = field(default_factory=list)

    def events_for(self, key: str) -> list[TrackingEvent]:
        return self.devices[key].events if key in self.devices else []

    def to_dict(self) -> dict:
        return {"devices": [d.to_dict() for d in self.devices.values()],
                "event_count": len(self.events)}


def replay(trace: Iterable[RawObservation], registry, model: PathLossModel, config: GeofenceConfig,
           filter_state: RssiFilterState | None = None,
           queue: NotificationQueue | None = None) -> PipelineReport:
    """Route observations by identity key, fingerprint each device, track presence.

    Before each observation every known tracker is ticked at that time, so
    silence on one device is noticed while others keep advertising. Payloads
    that fail to parse are tracked under their address and counted as
    ``malformed``.
    """
    base_filter = filter_state or RssiFilterState()
    report = PipelineReport()
    trackers: dict[str, PresenceTracker] = {}

    def emit(events):
        for ev in events:
            report.devices[ev.device].events.append(ev)
            report.events.append(ev)
            if queue is not None:
                queue.notify(ev)

    parsed: dict[bytes, tuple[AdvertisementPdu, bool]] = {}
    keys: dict[tuple[bytes, str], str] = {}

    for obs in trace:
        if obs.payload not in parsed:
            try:
                parsed[obs.payload] = parse_advertisement(obs.payload), False
            except MalformedError:
                parsed[obs.payload] = AdvertisementPdu(), True
        pdu, bad = parsed[obs.payload]
        key = keys.get((obs.payload, obs.address))
        if key is None:
            key = keys[obs.payload, obs.address] = identity_key(pdu, obs.address).key
        dev = report.devices.get(key)
        if dev is None:
            dev = report.devices[key] = DeviceReport(key, [obs.address], obs.ts_ms, matches=classify(pdu, registry))
            trackers[key] = PresenceTracker(key, filter=base_filter.reset())
        elif obs.address not in dev.addresses:
            dev.addresses.append(obs.address)
        dev.observations += 1
        dev.malformed += bad

        for k, trk in trackers.items():
            last = trk.last_observation_ts_ms
            if last is not None and obs.ts_ms - last >= config.absence_timeout_ms:
                trackers[k], ev = tick(trk, obs.ts_ms, config)
                emit(ev)
        trackers[key], ev = update(trackers[key], obs, model, config)
        emit(ev)

    for k, trk in trackers.items():
        report.devices[k].final_state = trk.state
    return report


# -- detection scoring ------------------------------------------------------

@dataclass(frozen=True)
class TrueCrossing:
    kind: EventKind
    t_ms: float


def true_crossings(trajectory: Trajectory, config: GeofenceConfig) -> list[TrueCrossing]:
    """Crossings of ``boundary +/- hysteresis`` by the noiseless trajectory.

    Starting inside the dead band leaves the side undetermined until the
    trajectory first leaves it; that first exit from the band is not a
    crossing.
    """
    outer, inner = config.outer_m, config.inner_m
    side = config.side_of(trajectory.distance_m[0])
    out: list[TrueCrossing] = []
    for t0, d0, t1, d1 in trajectory.segments():
        if t1 == t0 or d1 == d0:
            continue

        def when(level):
            return t0 + (level - d0) * (t1 - t0) / (d1 - d0)

        if d1 > d0:  # moving away
            if side is TrackerState.INSIDE and d1 > outer >= d0:
                out.append(TrueCrossing(EventKind.EXIT, when(outer)))
                side = TrackerState.OUTSIDE
            elif side is None and d1 > outer:
                side = TrackerState.OUTSIDE
        else:  # moving closer
            if side is TrackerState.OUTSIDE and d1 < inner <= d0:
                out.append(TrueCrossing(EventKind.ENTER, when(inner)))
                side = TrackerState.INSIDE
            elif side is None and d1 < inner:
                side = TrackerState.INSIDE
    return out


@dataclass(frozen=True)
class DetectionScore:
    matched: int
    missed: int
    spurious: int
    timing_errors_ms: tuple[float, ...]
    true_crossings: int
    events: int

    def to_dict(self) -> dict:
        return {"matched": self.matched, "missed": self.missed, "spurious": self.spurious,
                "timing_errors_ms": list(self.timing_errors_ms),
                "true_crossings": self.true_crossings, "events": self.events}


def score_detection(report: PipelineReport | Sequence[TrackingEvent], trajectory: Trajectory,
                    config: GeofenceConfig, device_key: str | None = None) -> DetectionScore:
    """Pair true crossings with Exit/Enter events.

    True crossings are taken in time order; each claims the unclaimed event
    of the same kind nearest to it in time (earlier event on ties).
    """
    if isinstance(report, PipelineReport):
        if device_key is None:
            raise ValueError("device_key is required when scoring a PipelineReport")
        events = report.events_for(device_key)
    else:
        events = list(report)
    events = [e for e in events if e.kind in (EventKind.EXIT, EventKind.ENTER)]
    truth = true_crossings(trajectory, config)
    used = [False] * len(events)
    errors = []
    for tc in truth:
        best = None
        for i, ev in enumerate(events):
            if used[i] or ev.kind is not tc.kind:
                continue
            gap = abs(ev.ts_ms - tc.t_ms)
            if best is None or gap < best[0]:
                best = (gap, i)
        if best is not None:
            used[best[1]] = True
            errors.append(best[0])
    matched = len(errors)
    return DetectionScore(matched, len(truth) - matched, len(events) - matched, tuple(errors),
                          len(truth), len(events))


def tracked_identity(scene: Scene, name: str) -> DeviceIdentity:
    dev = scene[name]
    if dev.advertising is None:
        raise SceneError(f"{name!r} does not advertise")
    return identity_key(dev.advertising.pdu, dev.advertising.address)
