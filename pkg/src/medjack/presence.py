"""Geofence tracking: RSSI stream -> debounced exit/enter/signal events.

Per device the tracker is a value; ``update`` and ``tick`` return a new
tracker together with any events. Transitions happen in distance space:

* ``d > boundary + hysteresis``  -> outside candidate
* ``d < boundary - hysteresis``  -> inside candidate
* otherwise                      -> dead band, dwell counter resets

A crossing fires after ``min_dwell_samples`` consecutive candidates for the
opposite side.
"""
from __future__ import annotations

import collections
import enum
import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Protocol

from .adv_model import RawObservation
from .ranging import PathLossModel, RssiFilterState, estimate_distance, filter_update

log = logging.getLogger(__name__)


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class GeofenceConfig:
    boundary_m: float
    hysteresis_m: float = 0.5
    min_dwell_samples: int = 3
    absence_timeout_ms: int = 30_000

    def __post_init__(self):
        if not self.boundary_m > 0:
            raise ValueError("boundary_m must be > 0")
        if self.hysteresis_m < 0:
            raise ValueError("hysteresis_m must be >= 0")
        if self.boundary_m - self.hysteresis_m <= 0:
            raise ValueError("boundary_m - hysteresis_m must be > 0")
        if self.min_dwell_samples < 1:
            raise ValueError("min_dwell_samples must be >= 1")
        if self.absence_timeout_ms <= 0:
            raise ValueError("absence_timeout_ms must be > 0")

    @property
    def outer_m(self) -> float:
        return self.boundary_m + self.hysteresis_m

    @property
    def inner_m(self) -> float:
        return self.boundary_m - self.hysteresis_m

    def side_of(self, d_m: float) -> TrackerState | None:
        if d_m > self.outer_m:
            return TrackerState.OUTSIDE
        if d_m < self.inner_m:
            return TrackerState.INSIDE
        return None


class TrackerState(str, enum.Enum):
    UNKNOWN = "unknown"
    INSIDE = "inside"
    OUTSIDE = "outside"
    SILENT = "silent"


class EventKind(str, enum.Enum):
    EXIT = "exit"
    ENTER = "enter"
    SIGNAL_LOST = "signal_lost"
    SIGNAL_REGAINED = "signal_regained"


@dataclass(frozen=True)
class TrackingEvent:
    device: str
    kind: EventKind
    ts_ms: int
    distance_m: float | None = None
    rssi_smoothed_dbm: float | None = None

    def to_record(self) -> dict:
        rec = {"ts_ms": self.ts_ms, "device_key": self.device, "kind": self.kind.value}
        if self.distance_m is not None:
            rec["distance_m"] = self.distance_m
        if self.rssi_smoothed_dbm is not None:
            rec["rssi_smoothed_dbm"] = self.rssi_smoothed_dbm
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


@dataclass(frozen=True)
class PresenceTracker:
    device: str
    state: TrackerState = TrackerState.UNKNOWN
    filter: RssiFilterState = field(default_factory=RssiFilterState)
    counter: int = 0
    last_observation_ts_ms: int | None = None
    # side held before going silent, restored on signal regained
    side_before_silence: TrackerState = TrackerState.UNKNOWN


def update(trk: PresenceTracker, obs: RawObservation, model: PathLossModel,
           config: GeofenceConfig) -> tuple[PresenceTracker, list[TrackingEvent]]:
    if trk.last_observation_ts_ms is not None and obs.ts_ms < trk.last_observation_ts_ms:
        raise OrderingError(
            f"{trk.device}: observation at {obs.ts_ms} precedes last at {trk.last_observation_ts_ms}")
    events: list[TrackingEvent] = []
    state = trk.state
    counter = trk.counter
    filt = trk.filter
    if state is TrackerState.SILENT:
        events.append(TrackingEvent(trk.device, EventKind.SIGNAL_REGAINED, obs.ts_ms, None, None))
        state = trk.side_before_silence
        counter = 0
        filt = filt.reset()

    filt, smoothed = filter_update(filt, obs.rssi_dbm)
    d = estimate_distance(model, smoothed).d_m
    candidate = config.side_of(d)
    if events:
        # regained event carries the first fresh reading
        events[0] = replace(events[0], distance_m=d, rssi_smoothed_dbm=smoothed)

    if candidate is None:
        counter = 0
    elif state is TrackerState.UNKNOWN:
        state = candidate
        counter = 0
    elif candidate is state:
        counter = 0
    else:
        counter += 1
        if counter >= config.min_dwell_samples:
            kind = EventKind.EXIT if candidate is TrackerState.OUTSIDE else EventKind.ENTER
            events.append(TrackingEvent(trk.device, kind, obs.ts_ms, d, smoothed))
            state = candidate
            counter = 0

    new = PresenceTracker(trk.device, state, filt, counter, obs.ts_ms, state)
    return new, events


def tick(trk: PresenceTracker, now_ms: int, config: GeofenceConfig) -> tuple[PresenceTracker, list[TrackingEvent]]:
    """Emit ``SignalLost`` once the device has been silent for the timeout."""
    if trk.state is TrackerState.SILENT or trk.last_observation_ts_ms is None:
        return trk, []
    if now_ms - trk.last_observation_ts_ms < config.absence_timeout_ms:
        return trk, []
    lost = TrackingEvent(trk.device, EventKind.SIGNAL_LOST, now_ms)
    return replace(trk, state=TrackerState.SILENT, counter=0, side_before_silence=trk.state), [lost]


def track(observations, model: PathLossModel, config: GeofenceConfig, device: str = "device",
          filter_state: RssiFilterState | None = None) -> list[TrackingEvent]:
    """Run one device's in-order observation stream through a fresh tracker."""
    trk = PresenceTracker(device, filter=filter_state or RssiFilterState())
    out: list[TrackingEvent] = []
    for obs in observations:
        trk, ev = tick(trk, obs.ts_ms, config)
        out += ev
        trk, ev = update(trk, obs, model, config)
        out += ev
    return out


# -- notification ----------------------------------------------------------

class NotificationSink(Protocol):
    def deliver(self, event: TrackingEvent) -> bool:
        """Return True when acknowledged."""


@dataclass(frozen=True)
class DeliveryResult:
    delivered: int
    pending: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.pending == 0


class JsonlSink:
    """Appends one JSON line per event. The file is opened only on first delivery."""

    def __init__(self, target: str | Path | IO[str]):
        self._target = target

    def deliver(self, event: TrackingEvent) -> bool:
        line = event.to_json() + "\n"
        if isinstance(self._target, (str, Path)):
            with open(self._target, "a", encoding="utf-8") as fh:
                fh.write(line)
        else:
            self._target.write(line)
        return True


class WebhookSink:
    """POSTs the event record as JSON; any 2xx status acknowledges."""

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def deliver(self, event: TrackingEvent) -> bool:
        req = urllib.request.Request(
            self.url,
            data=json.dumps(event.to_record()).encode("utf-8"),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return 200 <= resp.status < 300
        except (urllib.error.URLError, OSError) as exc:
            log.warning("webhook delivery failed: %s", exc)
            return False


class NotificationQueue:
    """Per-device FIFO in front of a sink.

    A failed delivery leaves the event (and everything behind it for the
    same device) queued; :meth:`retry` resumes in order. Other devices are
    not blocked.
    """

    def __init__(self, sink: NotificationSink):
        self.sink = sink
        self._pending: dict[str, collections.deque[TrackingEvent]] = {}

    @property
    def pending(self) -> int:
        return sum(len(q) for q in self._pending.values())

    def notify(self, event: TrackingEvent) -> DeliveryResult:
        self._pending.setdefault(event.device, collections.deque()).append(event)
        return self._flush([event.device])

    def retry(self) -> DeliveryResult:
        return self._flush(list(self._pending))

    def _flush(self, devices) -> DeliveryResult:
        delivered = 0
        error = None
        for dev in devices:
            q = self._pending.get(dev)
            while q:
                result = notify(self.sink, q[0])
                if result.error is not None:
                    error = result.error
                    break
                q.popleft()
                delivered += 1
            if q is not None and not q:
                del self._pending[dev]
        return DeliveryResult(delivered, self.pending, error)


def notify(sink: NotificationSink, event: TrackingEvent) -> DeliveryResult:
    """Single delivery attempt; sink exceptions become a failed result."""
    try:
        ok = sink.deliver(event)
    except Exception as exc:  # sinks are third-party boundaries
        return DeliveryResult(0, 1, f"{type(exc).__name__}: {exc}")
    if not ok:
        return DeliveryResult(0, 1, "sink rejected event")
    return DeliveryResult(1, 0)
