"""Rule-based device fingerprinting over decoded advertisements."""
from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .adv_model import AdvertisementPdu, ServiceUuid


class RegistryError(ValueError):
    pass


class Category(str, enum.Enum):
    ABUSE_GADGET = "abuse_gadget"
    MEDTECH = "medtech"
    WOMENS_HEALTH = "womens_health"
    SECURITY_TOOL = "security_tool"


class Confidence(str, enum.Enum):
    EXACT = "exact"
    PARTIAL = "partial"


NAME = "name"
COMPANY_ID = "company_id"
SERVICE_UUID = "service_uuid"


@lru_cache(maxsize=None)
def _glob_regex(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.IGNORECASE | re.DOTALL)


def glob_match(pattern: str, text: str) -> bool:
    """Case-insensitive glob with only ``*`` and ``?`` wildcards."""
    return _glob_regex(pattern).fullmatch(text) is not None


@dataclass(frozen=True)
class FingerprintRule:
    id: str
    device_label: str
    category: Category
    name_pattern: str | None = None
    company_ids: frozenset[int] = frozenset()
    required_service_uuids: frozenset[ServiceUuid] = frozenset()
    min_matchers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))
        object.__setattr__(self, "company_ids", frozenset(self.company_ids))
        object.__setattr__(self, "required_service_uuids", frozenset(self.required_service_uuids))
        if self.matcher_count == 0:
            raise RegistryError(f"rule {self.id!r} defines no matchers")
        if not 1 <= self.min_matchers <= self.matcher_count:
            raise RegistryError(
                f"rule {self.id!r}: min_matchers={self.min_matchers} but {self.matcher_count} matcher(s) defined")

    @property
    def matcher_count(self) -> int:
        return sum((self.name_pattern is not None, bool(self.company_ids), bool(self.required_service_uuids)))

    def evaluate(self, pdu: AdvertisementPdu) -> MatchResult | None:
        hits = set()
        if self.name_pattern is not None:
            name = pdu.local_name
            if name is not None and glob_match(self.name_pattern, name.text):
                hits.add(NAME)
        if self.company_ids:
            mfg = pdu.manufacturer_data
            if mfg is not None and mfg.company_id in self.company_ids:
                hits.add(COMPANY_ID)
        if self.required_service_uuids:
            present = {s.uuid for s in pdu.service_uuids}
            if all(s.uuid in present for s in self.required_service_uuids):
                hits.add(SERVICE_UUID)
        if len(hits) < self.min_matchers:
            return None
        confidence = Confidence.EXACT if len(hits) == self.matcher_count else Confidence.PARTIAL
        return MatchResult(self.id, frozenset(hits), confidence)


@dataclass(frozen=True)
class MatchResult:
    rule_id: str
    matched_fields: frozenset[str]
    confidence: Confidence

    def sort_key(self):
        return (self.confidence is not Confidence.EXACT, -len(self.matched_fields), self.rule_id)

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "matched_fields": sorted(self.matched_fields),
            "confidence": self.confidence.value,
        }


class FingerprintRegistry(Mapping[str, FingerprintRule]):
    """Immutable set of rules keyed by id."""

    def __init__(self, rules: Iterable[FingerprintRule] = ()):
        by_id: dict[str, FingerprintRule] = {}
        for rule in rules:
            if rule.id in by_id:
                raise RegistryError(f"duplicate rule id {rule.id!r}")
            by_id[rule.id] = rule
        self._rules = by_id

    def __getitem__(self, rule_id: str) -> FingerprintRule:
        return self._rules[rule_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self._rules)

    def __len__(self) -> int:
        return len(self._rules)

    def by_category(self, category: Category | str) -> list[FingerprintRule]:
        category = Category(category)
        return [r for r in self._rules.values() if r.category is category]

    def categories(self) -> dict[Category, int]:
        counts: dict[Category, int] = {}
        for r in self._rules.values():
            counts[r.category] = counts.get(r.category, 0) + 1
        return counts


def _rule_from_dict(d: Mapping, index: int) -> FingerprintRule:
    where = f"rules[{index}]"
    try:
        rule_id = d["id"]
        category = Category(d["category"])
        company_ids = frozenset(int(c, 16) for c in d.get("company_ids", []))
        uuids = frozenset(ServiceUuid.parse(u) for u in d.get("required_service_uuids", []))
        return FingerprintRule(
            id=rule_id,
            device_label=d.get("device_label", rule_id),
            category=category,
            name_pattern=d.get("name_pattern"),
            company_ids=company_ids,
            required_service_uuids=uuids,
            min_matchers=int(d.get("min_matchers", 1)),
        )
    except RegistryError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise RegistryError(f"{where}: {exc}") from None


def load_registry(document: Mapping | str | Path) -> FingerprintRegistry:
    """Build a registry from a parsed document or a path to a JSON file."""
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    if not isinstance(document, Mapping) or not isinstance(document.get("rules"), list):
        raise RegistryError("registry document must be an object with a 'rules' list")
    return FingerprintRegistry(_rule_from_dict(d, i) for i, d in enumerate(document["rules"]))


def bundled_registry() -> FingerprintRegistry:
    """Synthetic fingerprints for the fifteen scene devices."""
    text = resources.files("medjack").joinpath("data/registry/table2.json").read_text(encoding="utf-8")
    return load_registry(json.loads(text))


def classify(pdu: AdvertisementPdu, registry: Mapping[str, FingerprintRule]) -> list[MatchResult]:
    results = [m for rule in registry.values() if (m := rule.evaluate(pdu)) is not None]
    results.sort(key=MatchResult.sort_key)
    return results


@dataclass(frozen=True)
class DeviceIdentity:
    key: str

    def __str__(self) -> str:
        return self.key


def identity_key(pdu: AdvertisementPdu, address: str) -> DeviceIdentity:
    """Stable per-device key: local name, else manufacturer prefix, else address."""
    name = pdu.local_name
    if name is not None and name.text:
        return DeviceIdentity("name:" + name.text.lower())
    mfg = pdu.manufacturer_data
    if mfg is not None:
        return DeviceIdentity(f"mfg:{mfg.company_id:04x}:{mfg.payload[:2].hex()}")
    return DeviceIdentity("addr:" + address.replace(":", "").lower())
