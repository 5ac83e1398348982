"""BLE advertising payloads and the JSON Lines capture format.

Advertising data is a run of length-type-value structures::

    [len][type][value ... len-1 bytes][len][type][value] ... [00 00 ...]

A zero length byte terminates the list; everything after it must be zero
and is kept as trailing padding so that re-encoding is byte-exact.
"""
from __future__ import annotations

import enum
import json
import re
import uuid
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple

MAX_PAYLOAD = 255
MAX_VALUE = 254

AD_FLAGS = 0x01
AD_UUID16_INCOMPLETE = 0x02
AD_UUID16_COMPLETE = 0x03
AD_UUID32_INCOMPLETE = 0x04
AD_UUID32_COMPLETE = 0x05
AD_UUID128_INCOMPLETE = 0x06
AD_UUID128_COMPLETE = 0x07
AD_SHORT_NAME = 0x08
AD_COMPLETE_NAME = 0x09
AD_MANUFACTURER = 0xFF

_UUID_WIDTH = {
    AD_UUID16_INCOMPLETE: 2,
    AD_UUID16_COMPLETE: 2,
    AD_UUID32_INCOMPLETE: 4,
    AD_UUID32_COMPLETE: 4,
    AD_UUID128_INCOMPLETE: 16,
    AD_UUID128_COMPLETE: 16,
}

# Bluetooth base UUID; 16/32-bit ids occupy the top 32 bits.
BASE_UUID = uuid.UUID("00000000-0000-1000-8000-00805f9b34fb")

_ADDRESS_RE = re.compile(r"^[0-9a-f]{2}(:[0-9a-f]{2}){5}$")
_HEX_RE = re.compile(r"^(?:[0-9a-f]{2})*$")


class MalformedError(ValueError):
    """Advertising payload that cannot be split into AD structures."""

    def __init__(self, offset: int, reason: str):
        super().__init__(f"malformed advertisement at offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class OversizeError(ValueError):
    """Encoded advertisement would exceed 255 bytes."""


class CaptureFormatError(ValueError):
    """Bad record in a capture file. ``line`` is 1-based."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class AddressType(str, enum.Enum):
    PUBLIC = "public"
    RANDOM = "random"


class NameCompleteness(str, enum.Enum):
    COMPLETE = "complete"
    SHORTENED = "shortened"


class LocalName(NamedTuple):
    text: str
    completeness: NameCompleteness


class ManufacturerData(NamedTuple):
    company_id: int
    payload: bytes


class ServiceUuid(NamedTuple):
    """A service UUID plus the on-wire width (16, 32 or 128 bits)."""

    bits: int
    uuid: uuid.UUID

    @classmethod
    def from_short(cls, value: int, bits: int = 16) -> ServiceUuid:
        return cls(bits, uuid.UUID(int=BASE_UUID.int | (value << 96)))

    @classmethod
    def parse(cls, text: str) -> ServiceUuid:
        """Parse ``180d``, ``0000180d`` or a full canonical UUID string."""
        text = text.strip().lower()
        if len(text) in (4, 8):
            return cls.from_short(int(text, 16), bits=len(text) * 4)
        u = uuid.UUID(text)
        return cls(128, u)

    def wire_bytes(self) -> bytes:
        if self.bits == 128:
            return self.uuid.bytes[::-1]
        short = self.uuid.int >> 96
        return short.to_bytes(self.bits // 8, "little")

    def __str__(self) -> str:
        return str(self.uuid)


@dataclass(frozen=True)
class AdStructure:
    ad_type: int
    value: bytes = b""

    def __post_init__(self):
        if not 0 <= self.ad_type <= 0xFF:
            raise ValueError(f"ad_type out of range: {self.ad_type}")
        if len(self.value) > MAX_VALUE:
            raise ValueError(f"AD value too long: {len(self.value)} > {MAX_VALUE}")

    def to_bytes(self) -> bytes:
        return bytes((len(self.value) + 1, self.ad_type)) + self.value


@dataclass(frozen=True)
class AdvertisementPdu:
    """Decoded advertising payload.

    ``structures`` is the source of truth; ``flags``, ``local_name``,
    ``manufacturer_data`` and ``service_uuids`` are views computed from it.
    When a view's AD type appears more than once, the first occurrence wins.
    """

    structures: tuple[AdStructure, ...] = ()
    padding: int = 0

    def __post_init__(self):
        object.__setattr__(self, "structures", tuple(self.structures))
        if self.padding < 0:
            raise ValueError("padding must be >= 0")
        for s in self.structures:
            if s.ad_type == AD_MANUFACTURER and len(s.value) < 2:
                raise ValueError("manufacturer data needs a 2-byte company id")

    @classmethod
    def build(
        cls,
        flags: int | None = None,
        local_name: LocalName | tuple[str, str] | str | None = None,
        manufacturer_data: ManufacturerData | tuple[int, bytes] | None = None,
        service_uuids: Iterable[ServiceUuid] = (),
    ) -> AdvertisementPdu:
        """Assemble a PDU from views, in canonical structure order."""
        structs = []
        if flags is not None:
            structs.append(AdStructure(AD_FLAGS, bytes((flags,))))
        by_type: dict[int, list[ServiceUuid]] = {}
        for su in service_uuids:
            ad_type = {16: AD_UUID16_COMPLETE, 32: AD_UUID32_COMPLETE, 128: AD_UUID128_COMPLETE}[su.bits]
            by_type.setdefault(ad_type, []).append(su)
        for ad_type in sorted(by_type):
            structs.append(AdStructure(ad_type, b"".join(s.wire_bytes() for s in by_type[ad_type])))
        if local_name is not None:
            if isinstance(local_name, str):
                local_name = LocalName(local_name, NameCompleteness.COMPLETE)
            text, completeness = local_name
            ad_type = AD_COMPLETE_NAME if NameCompleteness(completeness) is NameCompleteness.COMPLETE else AD_SHORT_NAME
            structs.append(AdStructure(ad_type, text.encode("utf-8")))
        if manufacturer_data is not None:
            company_id, payload = manufacturer_data
            structs.append(AdStructure(AD_MANUFACTURER, company_id.to_bytes(2, "little") + bytes(payload)))
        return cls(tuple(structs))

    def _first(self, *types: int) -> AdStructure | None:
        for s in self.structures:
            if s.ad_type in types:
                return s
        return None

    @property
    def flags(self) -> int | None:
        s = self._first(AD_FLAGS)
        if s is None or not s.value:
            return None
        return s.value[0]

    @property
    def local_name(self) -> LocalName | None:
        s = self._first(AD_SHORT_NAME, AD_COMPLETE_NAME)
        if s is None:
            return None
        completeness = NameCompleteness.COMPLETE if s.ad_type == AD_COMPLETE_NAME else NameCompleteness.SHORTENED
        return LocalName(s.value.decode("utf-8", errors="replace"), completeness)

    @property
    def manufacturer_data(self) -> ManufacturerData | None:
        s = self._first(AD_MANUFACTURER)
        if s is None or len(s.value) < 2:
            return None
        return ManufacturerData(int.from_bytes(s.value[:2], "little"), s.value[2:])

    @property
    def service_uuids(self) -> frozenset[ServiceUuid]:
        out = set()
        for s in self.structures:
            width = _UUID_WIDTH.get(s.ad_type)
            if width is None:
                continue
            # A trailing partial UUID is ignored by the view; the bytes stay in ``structures``.
            for i in range(0, len(s.value) - width + 1, width):
                chunk = s.value[i:i + width]
                if width == 16:
                    out.add(ServiceUuid(128, uuid.UUID(bytes=chunk[::-1])))
                else:
                    out.add(ServiceUuid.from_short(int.from_bytes(chunk, "little"), bits=width * 8))
        return frozenset(out)

    def encoded_size(self) -> int:
        return sum(len(s.value) + 2 for s in self.structures) + self.padding

    def to_dict(self) -> dict:
        name = self.local_name
        mfg = self.manufacturer_data
        return {
            "structures": [{"type": f"0x{s.ad_type:02x}", "value_hex": s.value.hex()} for s in self.structures],
            "padding": self.padding,
            "flags": None if self.flags is None else f"0x{self.flags:02x}",
            "local_name": None if name is None else {"text": name.text, "completeness": name.completeness.value},
            "manufacturer_data": None if mfg is None else {
                "company_id": f"{mfg.company_id:04x}", "payload_hex": mfg.payload.hex()},
            "service_uuids": [
                {"bits": s.bits, "uuid": str(s.uuid)}
                for s in sorted(self.service_uuids, key=lambda s: (s.bits, s.uuid.int))
            ],
        }


def parse_advertisement(payload: bytes) -> AdvertisementPdu:
    """Split ``payload`` into AD structures.

    Raises :class:`MalformedError` for any input that is not a valid
    advertising payload; no other exception escapes for ``bytes`` input.
    """
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise MalformedError(MAX_PAYLOAD, f"payload longer than {MAX_PAYLOAD} bytes")
    structs = []
    i = 0
    n = len(payload)
    while i < n:
        length = payload[i]
        if length == 0:
            if any(payload[i:]):
                j = i + next(k for k, b in enumerate(payload[i:]) if b)
                raise MalformedError(j, "non-zero byte after terminator")
            return AdvertisementPdu(tuple(structs), padding=n - i)
        if i + 1 + length > n:
            raise MalformedError(i, "length overrun")
        ad_type = payload[i + 1]
        value = payload[i + 2:i + 1 + length]
        if ad_type == AD_MANUFACTURER and len(value) < 2:
            raise MalformedError(i, "manufacturer data shorter than company id")
        structs.append(AdStructure(ad_type, value))
        i += 1 + length
    return AdvertisementPdu(tuple(structs))


def encode_advertisement(pdu: AdvertisementPdu) -> bytes:
    size = pdu.encoded_size()
    if size > MAX_PAYLOAD:
        raise OversizeError(f"encoded advertisement is {size} bytes (max {MAX_PAYLOAD})")
    return b"".join(s.to_bytes() for s in pdu.structures) + bytes(pdu.padding)


# -- capture files ----------------------------------------------------------

CAPTURE_KEYS = ("ts_ms", "source_id", "address", "address_type", "rssi_dbm", "data_hex")


@dataclass(frozen=True)
class RawObservation:
    ts_ms: int
    source_id: str
    address: str
    address_type: AddressType
    rssi_dbm: int
    payload: bytes
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "address_type", AddressType(self.address_type))
        object.__setattr__(self, "payload", bytes(self.payload))
        if self.ts_ms < 0:
            raise ValueError(f"ts_ms must be >= 0, got {self.ts_ms}")
        if not -127 <= self.rssi_dbm <= 20:
            raise ValueError(f"rssi_dbm out of range [-127, 20]: {self.rssi_dbm}")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload longer than {MAX_PAYLOAD} bytes")
        if not _ADDRESS_RE.match(self.address):
            raise ValueError(f"bad address {self.address!r}")

    def to_record(self) -> dict:
        return {
            "ts_ms": self.ts_ms,
            "source_id": self.source_id,
            "address": self.address,
            "address_type": self.address_type.value,
            "rssi_dbm": self.rssi_dbm,
            "data_hex": self.payload.hex(),
        }


def _observation_from_record(rec: object, lineno: int) -> RawObservation:
    if not isinstance(rec, dict):
        raise CaptureFormatError(lineno, "record is not a JSON object")
    missing = [k for k in CAPTURE_KEYS if k not in rec]
    if missing:
        raise CaptureFormatError(lineno, f"missing keys: {', '.join(missing)}")
    for key in ("ts_ms", "rssi_dbm"):
        if type(rec[key]) is not int:
            raise CaptureFormatError(lineno, f"{key} must be an integer")
    for key in ("source_id", "address", "address_type", "data_hex"):
        if not isinstance(rec[key], str):
            raise CaptureFormatError(lineno, f"{key} must be a string")
    if not _HEX_RE.match(rec["data_hex"]):
        raise CaptureFormatError(lineno, "data_hex must be even-length lowercase hex")
    try:
        return RawObservation(
            ts_ms=rec["ts_ms"],
            source_id=rec["source_id"],
            address=rec["address"],
            address_type=rec["address_type"],
            rssi_dbm=rec["rssi_dbm"],
            payload=bytes.fromhex(rec["data_hex"]),
            extra={k: v for k, v in rec.items() if k not in CAPTURE_KEYS},
        )
    except ValueError as exc:
        raise CaptureFormatError(lineno, str(exc)) from None


def iter_capture(stream: IO[str]) -> Iterator[RawObservation]:
    last_ts = None
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CaptureFormatError(lineno, f"invalid JSON: {exc.msg}") from None
        obs = _observation_from_record(rec, lineno)
        if last_ts is not None and obs.ts_ms < last_ts:
            raise CaptureFormatError(lineno, f"ts_ms {obs.ts_ms} is earlier than previous {last_ts}")
        last_ts = obs.ts_ms
        yield obs


def read_capture(stream: IO[str]) -> list[RawObservation]:
    """Read a JSON Lines capture. Unknown keys land in ``RawObservation.extra``."""
    return list(iter_capture(stream))


def format_observation(obs: RawObservation) -> str:
    return json.dumps(obs.to_record(), separators=(",", ":"), ensure_ascii=False)


def write_capture(observations: Iterable[RawObservation], stream: IO[str]) -> None:
    """Write canonical capture lines, stably sorted by ``ts_ms``."""
    for obs in sorted(observations, key=lambda o: o.ts_ms):
        stream.write(format_observation(obs))
        stream.write("\n")
