"""Scene triage survey metrics: identification, knowledge and exploitability rates."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .scene import bundled_scene

CSV_HEADER = ["participant", "device", "identified", "knowledge", "exploitable"]


class TriageError(ValueError):
    pass


class ResponseFormatError(TriageError):
    """Malformed responses file (header, column count, boolean tokens)."""


@dataclass(frozen=True)
class TriageResponse:
    """One participant's yes/no answers about one device."""

    participant: str
    device: str
    identified: bool
    knowledge: bool
    exploitable: bool


@dataclass(frozen=True)
class DeviceRates:
    device: str
    respondents: int
    identification_rate: float | None
    knowledge_rate: float | None
    exploitability_rate: float | None

    @property
    def gap(self) -> float | None:
        """Identification rate minus perceived exploitability rate."""
        if self.respondents == 0:
            return None
        return self.identification_rate - self.exploitability_rate

    def to_dict(self) -> dict:
        return {
            "device": self.device,
            "respondents": self.respondents,
            "identification_rate": self.identification_rate,
            "knowledge_rate": self.knowledge_rate,
            "exploitability_rate": self.exploitability_rate,
            "gap": self.gap,
        }


@dataclass(frozen=True)
class TriageMetrics:
    devices: tuple[DeviceRates, ...]

    def __getitem__(self, name: str) -> DeviceRates:
        for d in self.devices:
            if d.device == name:
                return d
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"devices": [d.to_dict() for d in self.devices]}


def _parse_bool(text: str, lineno: int, column: str) -> bool:
    value = text.strip()
    if value == "true":
        return True
    if value == "false":
        return False
    raise ResponseFormatError(f"line {lineno}: {column} must be 'true' or 'false', got {text!r}")


def read_responses_csv(stream: IO[str]) -> list[TriageResponse]:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != CSV_HEADER:
        raise ResponseFormatError(f"responses header must be {','.join(CSV_HEADER)}")
    out = []
    for lineno, rec in enumerate(reader, start=2):
        if None in rec or None in rec.values():
            raise ResponseFormatError(f"line {lineno}: expected {len(CSV_HEADER)} columns")
        out.append(TriageResponse(
            rec["participant"].strip(),
            rec["device"].strip(),
            *(_parse_bool(rec[c], lineno, c) for c in CSV_HEADER[2:]),
        ))
    return out


def triage_metrics(responses: Iterable[TriageResponse], devices: Sequence[str] | None = None) -> TriageMetrics:
    """Per-device yes-rates over that device's own respondents.

    ``devices`` fixes the reporting order and the set of valid names; it
    defaults to the bundled scene. Devices nobody answered about come back
    with ``respondents == 0`` and ``None`` rates.
    """
    responses = list(responses)
    if not responses:
        raise TriageError("at least one response is required")
    names = list(devices) if devices is not None else bundled_scene().names
    known = set(names)
    counts = {n: [0, 0, 0, 0] for n in names}
    seen = set()
    for r in responses:
        if r.device not in known:
            raise TriageError(f"unknown device {r.device!r}")
        if (r.participant, r.device) in seen:
            raise TriageError(f"duplicate response from {r.participant!r} for {r.device!r}")
        seen.add((r.participant, r.device))
        c = counts[r.device]
        c[0] += 1
        c[1] += r.identified
        c[2] += r.knowledge
        c[3] += r.exploitable
    rates = []
    for n in names:
        total, ident, know, expl = counts[n]
        if total == 0:
            rates.append(DeviceRates(n, 0, None, None, None))
        else:
            rates.append(DeviceRates(n, total, ident / total, know / total, expl / total))
    return TriageMetrics(tuple(rates))
