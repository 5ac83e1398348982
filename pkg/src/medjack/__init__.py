"""Replay-first toolkit for BLE tracking of medical devices, hazard-integrated
attack trees and scene-triage metrics."""

from .adv_model import (
    AdStructure,
    AdvertisementPdu,
    MalformedError,
    RawObservation,
    encode_advertisement,
    parse_advertisement,
    read_capture,
    write_capture,
)
from .fingerprint import bundled_registry, classify, identity_key, load_registry
from .presence import GeofenceConfig, PresenceTracker, TrackingEvent, tick, update
from .ranging import PathLossModel, estimate_distance, fit_path_loss, predict_rssi
from .scene import SimulationSpec, Trajectory, bundled_scene, replay, score_detection, simulate
from .threat_tree import enumerate_paths, filter_paths, hazard_summary, map_inventory, parse_tree
from .triage import triage_metrics

__version__ = "0.1.0"
