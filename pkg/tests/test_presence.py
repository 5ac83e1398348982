from __future__ import annotations

import http.server
import io
import json
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medjack.adv_model import RawObservation
from medjack.presence import (
    EventKind,
    GeofenceConfig,
    JsonlSink,
    NotificationQueue,
    OrderingError,
    PresenceTracker,
    TrackerState,
    TrackingEvent,
    WebhookSink,
    notify,
    tick,
    track,
    update,
)
from medjack.ranging import PathLossModel, RssiFilterState, predict_rssi

MODEL = PathLossModel(-59.0, 2.0)
RAW = RssiFilterState(1.0, 1)  # pass-through, so distance in == distance seen


def obs_at(ts, d):
    return RawObservation(ts, "base", "aa:bb:cc:dd:ee:ff", "random", predict_rssi(MODEL, d), b"")


def run(distances, config, start=0, step=1000):
    trk = PresenceTracker("dev", filter=RAW)
    events = []
    for i, d in enumerate(distances):
        trk, ev = update(trk, obs_at(start + i * step, d), MODEL, config)
        events += ev
    return trk, events


def reference(distances, boundary, hyst, dwell):
    """Plain-loop restatement of the debounce rule, used as an oracle."""
    state, count, out = None, 0, []
    for i, d in enumerate(distances):
        side = "out" if d > boundary + hyst else "in" if d < boundary - hyst else None
        if side is None or side == state:
            count = 0
        elif state is None:
            state = side
        else:
            count += 1
            if count == dwell:
                out.append((i, "exit" if side == "out" else "enter"))
                state, count = side, 0
    return out


class TestUpdate:
    def test_first_observation_initialises_silently(self):
        trk, events = run([1.0], GeofenceConfig(3.0, 0.5))
        assert trk.state is TrackerState.INSIDE and events == []

    def test_dead_band_start_stays_unknown(self):
        trk, events = run([3.0, 3.2], GeofenceConfig(3.0, 0.5))
        assert trk.state is TrackerState.UNKNOWN and events == []

    def test_exit_after_dwell(self):
        cfg = GeofenceConfig(3.0, 0.5, min_dwell_samples=2)
        trk, events = run([1.0, 4.0, 4.1], cfg)
        assert [(e.kind, e.ts_ms) for e in events] == [(EventKind.EXIT, 2000)]
        assert events[0].distance_m == pytest.approx(4.1)
        assert trk.state is TrackerState.OUTSIDE

    def test_dead_band_jitter_is_silent(self):
        _, events = run([1.0, 2.9, 3.2, 3.1, 2.8], GeofenceConfig(3.0, 0.5, 2))
        assert events == []

    def test_dead_band_resets_counter(self):
        _, events = run([1.0, 4.0, 4.0, 3.0, 4.0, 4.0], GeofenceConfig(3.0, 0.5, 3))
        assert events == []

    def test_enter(self):
        _, events = run([5.0, 1.0, 1.0, 1.0], GeofenceConfig(3.0, 0.5, 3))
        assert [e.kind for e in events] == [EventKind.ENTER]

    def test_out_of_order(self):
        trk, _ = run([1.0, 1.0], GeofenceConfig(3.0))
        with pytest.raises(OrderingError):
            update(trk, obs_at(500, 1.0), MODEL, GeofenceConfig(3.0))


class TestTick:
    CFG = GeofenceConfig(3.0, 0.5, 3, absence_timeout_ms=30_000)

    def test_just_before_timeout(self):
        trk, _ = run([1.0], self.CFG)
        trk, events = tick(trk, 29_999, self.CFG)
        assert events == [] and trk.state is TrackerState.INSIDE

    def test_at_timeout(self):
        trk, _ = run([1.0], self.CFG)
        trk, events = tick(trk, 30_000, self.CFG)
        assert [e.kind for e in events] == [EventKind.SIGNAL_LOST]
        assert trk.state is TrackerState.SILENT

    def test_lost_only_once(self):
        trk, _ = run([1.0], self.CFG)
        trk, first = tick(trk, 30_000, self.CFG)
        trk, second = tick(trk, 90_000, self.CFG)
        assert len(first) == 1 and second == []

    def test_never_seen_never_lost(self):
        trk, events = tick(PresenceTracker("dev"), 10**9, self.CFG)
        assert events == []

    def test_regained_restores_side(self):
        trk, _ = run([1.0], self.CFG)
        trk, _ = tick(trk, 30_000, self.CFG)
        trk, events = update(trk, obs_at(31_000, 1.0), MODEL, self.CFG)
        assert [e.kind for e in events] == [EventKind.SIGNAL_REGAINED]
        assert events[0].distance_m == pytest.approx(1.0)
        assert trk.state is TrackerState.INSIDE

    def test_regained_then_crossing(self):
        trk, _ = run([1.0], self.CFG)
        trk, _ = tick(trk, 30_000, self.CFG)
        out = []
        for i, d in enumerate([6.0, 6.0, 6.0]):
            trk, ev = update(trk, obs_at(31_000 + i * 1000, d), MODEL, self.CFG)
            out += ev
        assert [e.kind for e in out] == [EventKind.SIGNAL_REGAINED, EventKind.EXIT]

    def test_track_helper_notices_gaps(self):
        observations = [obs_at(0, 1.0), obs_at(45_000, 1.0)]
        kinds = [e.kind for e in track(observations, MODEL, self.CFG, filter_state=RAW)]
        assert kinds == [EventKind.SIGNAL_LOST, EventKind.SIGNAL_REGAINED]


# no value sits exactly on a threshold, where float round-off decides the side
_distances = st.lists(st.sampled_from([0.8, 1.5, 2.4, 2.6, 2.95, 3.05, 3.4, 3.6, 4.5, 8.0]), max_size=60)


@settings(max_examples=300, deadline=None)
@given(_distances, st.sampled_from([0.0, 0.5, 1.0]), st.integers(1, 4))
def test_matches_reference(distances, hyst, dwell):
    cfg = GeofenceConfig(3.0, hyst, dwell)
    _, events = run(distances, cfg)
    assert [(e.ts_ms // 1000, e.kind.value) for e in events] == reference(distances, 3.0, hyst, dwell)


@settings(max_examples=200, deadline=None)
@given(_distances, st.integers(1, 4))
def test_events_alternate(distances, dwell):
    _, events = run(distances, GeofenceConfig(3.0, 0.5, dwell))
    kinds = [e.kind for e in events]
    assert all(a is not b for a, b in zip(kinds, kinds[1:]))
    assert len(events) * dwell <= len(distances)


@settings(max_examples=200, deadline=None)
@given(_distances, st.integers(1, 3))
def test_longer_dwell_never_adds_events(distances, dwell):
    _, short = run(distances, GeofenceConfig(3.0, 0.5, dwell))
    _, long = run(distances, GeofenceConfig(3.0, 0.5, dwell + 1))
    assert len(long) <= len(short)


# -- notification ----------------------------------------------------------

def _event(kind=EventKind.EXIT, ts=0, device="dev"):
    return TrackingEvent(device, kind, ts, 4.0, -71.0)


class FlakySink:
    def __init__(self, failures):
        self.failures = failures
        self.lines = []

    def deliver(self, event):
        if self.failures:
            self.failures -= 1
            raise ConnectionError("down")
        self.lines.append(event.to_json())
        return True


class TestSinks:
    def test_jsonl_exit_line(self, tmp_path):
        path = tmp_path / "events.jsonl"
        assert notify(JsonlSink(path), _event()).ok
        (line,) = path.read_text().splitlines()
        assert json.loads(line)["kind"] == "exit"

    def test_record_shape(self):
        rec = TrackingEvent("k", EventKind.SIGNAL_LOST, 5).to_record()
        assert rec == {"ts_ms": 5, "device_key": "k", "kind": "signal_lost"}

    def test_empty_stream_leaves_file_untouched(self, tmp_path):
        path = tmp_path / "events.jsonl"
        NotificationQueue(JsonlSink(path)).retry()
        assert not path.exists()

    def test_retry_preserves_order(self):
        sink = FlakySink(failures=1)
        q = NotificationQueue(sink)
        first, second = _event(ts=1), _event(EventKind.ENTER, ts=2)
        r1 = q.notify(first)
        assert not r1.ok and "down" in r1.error
        r2 = q.notify(second)
        assert r2.delivered == 2 and q.pending == 0
        assert [json.loads(x)["ts_ms"] for x in sink.lines] == [1, 2]

    def test_retry_call(self):
        sink = FlakySink(failures=2)
        q = NotificationQueue(sink)
        q.notify(_event(ts=1))
        q.notify(_event(ts=2))
        assert q.pending == 2
        assert q.retry().delivered == 2
        assert [json.loads(x)["ts_ms"] for x in sink.lines] == [1, 2]

    def test_other_devices_not_blocked(self):
        class OneBad:
            lines = []

            def deliver(self, event):
                if event.device == "bad":
                    return False
                self.lines.append(event.device)
                return True

        q = NotificationQueue(OneBad())
        q.notify(_event(device="bad"))
        assert q.notify(_event(device="good")).delivered == 1
        assert q.pending == 1

    def test_writes_to_stream(self):
        buf = io.StringIO()
        notify(JsonlSink(buf), _event())
        assert buf.getvalue().endswith("\n")


@pytest.fixture
def webhook():
    received, status = [], [204]

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"]))
            received.append(json.loads(body))
            self.send_response(status[0])
            self.end_headers()

        def log_message(self, *args):
            pass

    server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/events", received, status
    server.shutdown()
    server.server_close()


class TestWebhook:
    def test_2xx_acknowledges(self, webhook):
        url, received, _ = webhook
        assert notify(WebhookSink(url), _event()).ok
        assert received == [_event().to_record()]

    def test_server_error_keeps_event_queued(self, webhook):
        url, received, status = webhook
        status[0] = 500
        q = NotificationQueue(WebhookSink(url))
        assert not q.notify(_event()).ok
        status[0] = 200
        assert q.retry().ok
        assert len(received) == 2

    def test_unreachable(self):
        assert not notify(WebhookSink("http://127.0.0.1:9/", timeout=0.5), _event()).ok
