"""Log-distance path loss: calibration fit, RSSI smoothing, distance estimates.

The model is ``rssi(d) = r0_dbm - 10 * n * log10(d)`` with ``d`` in metres,
so ``r0_dbm`` is the expected RSSI at 1 m.
"""
from __future__ import annotations

import csv
import enum
import math
import statistics
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np


class CalibrationError(ValueError):
    pass


class NoSamplesError(CalibrationError):
    pass


class DegenerateCalibrationError(CalibrationError):
    pass


class Bearing(str, enum.Enum):
    N = "N"
    E = "E"
    S = "S"
    W = "W"


# Calibration distances used in the reference set-up (50 cm normalised to 0.5 m).
CALIBRATION_DISTANCES_M = (0.5, 1.5, 2.0, 2.5, 3.0, 3.5)


@dataclass(frozen=True)
class CalibrationRow:
    distance_m: float
    bearing: Bearing
    rssi_dbm: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bearing", Bearing(self.bearing))
        object.__setattr__(self, "rssi_dbm", tuple(self.rssi_dbm))
        if not self.distance_m > 0:
            raise CalibrationError(f"distance must be positive, got {self.distance_m}")
        if not self.rssi_dbm:
            raise NoSamplesError(f"no samples at {self.distance_m} m {self.bearing.value}")


@dataclass(frozen=True)
class CalibrationTable:
    rows: tuple[CalibrationRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise NoSamplesError("no samples")

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, str, int]]) -> CalibrationTable:
        """Group ``(distance_m, bearing, rssi_dbm)`` samples into rows, keeping first-seen order."""
        cells: dict[tuple[float, Bearing], list[int]] = {}
        for d, b, r in samples:
            cells.setdefault((float(d), Bearing(b)), []).append(int(r))
        return cls(tuple(CalibrationRow(d, b, tuple(v)) for (d, b), v in cells.items()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(distance, rssi)`` sample arrays."""
        d = np.array([row.distance_m for row in self.rows for _ in row.rssi_dbm], dtype=float)
        r = np.array([x for row in self.rows for x in row.rssi_dbm], dtype=float)
        return d, r

    @property
    def n_samples(self) -> int:
        return sum(len(row.rssi_dbm) for row in self.rows)


def read_calibration_csv(stream: IO[str]) -> CalibrationTable:
    """Read ``distance_m,bearing,rssi_dbm`` rows, one sample per line."""
    reader = csv.DictReader(stream)
    expected = ["distance_m", "bearing", "rssi_dbm"]
    if reader.fieldnames is None:
        raise NoSamplesError("no samples")
    if [f.strip() for f in reader.fieldnames] != expected:
        raise CalibrationError(f"calibration header must be {','.join(expected)}")
    samples = []
    for lineno, rec in enumerate(reader, start=2):
        try:
            samples.append((float(rec["distance_m"]), Bearing(rec["bearing"].strip()), int(rec["rssi_dbm"])))
        except (TypeError, ValueError, AttributeError) as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from None
    if not samples:
        raise NoSamplesError("no samples")
    return CalibrationTable.from_samples(samples)


@dataclass(frozen=True)
class PathLossModel:
    r0_dbm: float
    n: float
    sigma_dbm: float = 0.0

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"path-loss exponent must be > 0, got {self.n}")
        if not self.sigma_dbm >= 0:
            raise ValueError(f"sigma_dbm must be >= 0, got {self.sigma_dbm}")

    def to_dict(self) -> dict:
        return {"r0_dbm": self.r0_dbm, "n": self.n, "sigma_dbm": self.sigma_dbm}

    @classmethod
    def from_dict(cls, d: Mapping) -> PathLossModel:
        return cls(float(d["r0_dbm"]), float(d["n"]), float(d.get("sigma_dbm", 0.0)))


def fit_path_loss(table: CalibrationTable) -> PathLossModel:
    """Least-squares fit of ``r0`` and ``n`` with all bearings pooled.

    ``sigma_dbm`` is the residual standard deviation with ``N - 2`` degrees
    of freedom (zero when only two samples are available).
    """
    d, r = table.arrays()
    if np.unique(d).size < 2:
        raise DegenerateCalibrationError("calibration needs at least two distinct distances")
    x = -10.0 * np.log10(d)
    design = np.column_stack([np.ones_like(x), x])
    (r0, n), *_ = np.linalg.lstsq(design, r, rcond=None)
    resid = r - (r0 + n * x)
    dof = r.size - 2
    sigma = math.sqrt(float(resid @ resid) / dof) if dof > 0 else 0.0
    return PathLossModel(float(r0), float(n), sigma)


def bearing_residuals(model: PathLossModel, table: CalibrationTable) -> dict[Bearing, float]:
    """Mean residual (measured minus model) per bearing, for spotting anisotropy."""
    sums: dict[Bearing, list[float]] = {}
    for row in table.rows:
        expected = predict_rssi(model, row.distance_m)
        sums.setdefault(row.bearing, []).extend(x - expected for x in row.rssi_dbm)
    return {b: statistics.fmean(v) for b, v in sums.items()}


def predict_rssi(model: PathLossModel, d_m: float, sigma: float | None = None,
                 rng: np.random.Generator | None = None) -> float:
    """Forward model; adds a Gaussian draw when ``sigma`` and ``rng`` are given."""
    if not d_m > 0:
        raise ValueError(f"distance must be positive, got {d_m}")
    value = model.r0_dbm - 10.0 * model.n * math.log10(d_m)
    if sigma:
        if rng is None:
            raise ValueError("noisy prediction needs a seeded generator")
        value += float(rng.normal(0.0, sigma))
    return value


@dataclass(frozen=True)
class DistanceEstimate:
    d_m: float
    d_lo: float
    d_hi: float


def _invert(model: PathLossModel, rssi: float) -> float:
    return 10.0 ** ((model.r0_dbm - rssi) / (10.0 * model.n))


def estimate_distance(model: PathLossModel, rssi_dbm: float) -> DistanceEstimate:
    # Stronger signal means closer, so +sigma gives the lower bound.
    return DistanceEstimate(
        d_m=_invert(model, rssi_dbm),
        d_lo=_invert(model, rssi_dbm + model.sigma_dbm),
        d_hi=_invert(model, rssi_dbm - model.sigma_dbm),
    )


@dataclass(frozen=True)
class RssiFilterState:
    """Median prefilter over the last ``window`` raw samples feeding an EWMA."""

    alpha: float = 0.75
    window: int = 3
    smoothed: float | None = None
    recent: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    def reset(self) -> RssiFilterState:
        return RssiFilterState(self.alpha, self.window)


def filter_update(state: RssiFilterState, rssi_dbm: float) -> tuple[RssiFilterState, float]:
    recent = (state.recent + (float(rssi_dbm),))[-state.window:]
    if state.smoothed is None:
        smoothed = float(rssi_dbm)
    else:
        smoothed = state.alpha * statistics.median(recent) + (1.0 - state.alpha) * state.smoothed
    return RssiFilterState(state.alpha, state.window, smoothed, recent), smoothed
