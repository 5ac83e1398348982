"""Hazard-integrated AND/OR attack trees and their minimal cut sets."""
from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .fingerprint import Category


class TreeValidationError(ValueError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class PathOverflowError(RuntimeError):
    pass


class Goal(str, enum.Enum):
    CONFIDENTIALITY = "Confidentiality"
    INTEGRITY = "Integrity"
    AVAILABILITY = "Availability"


class NodeKind(str, enum.Enum):
    AND = "AND"
    OR = "OR"
    LEAF = "LEAF"


class AccessVector(str, enum.Enum):
    OWNERSHIP = "ownership"
    UI_BOUND = "ui_bound"
    COERCION = "coercion"
    PHYSICAL_ACCESS = "physical_access"
    REMOTE_WIRELESS = "remote_wireless"


class Sophistication(str, enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def rank(self) -> int:
        return _SOPH_RANK[self]


_SOPH_RANK = {Sophistication.LOW: 0, Sophistication.MEDIUM: 1, Sophistication.HIGH: 2}


class Onset(str, enum.Enum):
    ACUTE = "acute"
    SUBACUTE = "subacute"
    CHRONIC = "chronic"


class Severity(str, enum.Enum):
    MINOR = "minor"
    SERIOUS = "serious"
    CRITICAL = "critical"
    CATASTROPHIC = "catastrophic"

    @property
    def rank(self) -> int:
        return list(Severity).index(self)


@dataclass(frozen=True)
class HazardAnnotation:
    effect: str
    onset: Onset
    severity: Severity
    clinical_note: str = ""

    def to_dict(self) -> dict:
        return {"effect": self.effect, "onset": self.onset.value,
                "severity": self.severity.value, "clinical_note": self.clinical_note}


@dataclass(frozen=True)
class AbuseScenario:
    id: int
    name: str
    description: str = ""


@dataclass(frozen=True, eq=False)
class TreeNode:
    id: str
    label: str
    kind: NodeKind
    children: tuple[TreeNode, ...] = ()
    access_vectors: frozenset[AccessVector] = frozenset()
    sophistication: Sophistication | None = None
    hazards: tuple[HazardAnnotation, ...] = ()
    scenario_links: frozenset[int] = frozenset()
    applicable_categories: frozenset[Category] = frozenset()
    paper_anchor: str | None = None
    rationale: str | None = None

    @classmethod
    def leaf(cls, id: str, vectors: Iterable[AccessVector | str] = ("ui_bound",),
             sophistication: Sophistication | str = "low", **kw) -> TreeNode:
        """Convenience constructor, mostly for tests and ad-hoc trees."""
        return cls(id, kw.pop("label", id), NodeKind.LEAF,
                   access_vectors=frozenset(AccessVector(v) for v in vectors),
                   sophistication=Sophistication(sophistication), **kw)

    @classmethod
    def and_(cls, id: str, *children: TreeNode, label: str | None = None) -> TreeNode:
        return cls(id, label or id, NodeKind.AND, tuple(children))

    @classmethod
    def or_(cls, id: str, *children: TreeNode, label: str | None = None) -> TreeNode:
        return cls(id, label or id, NodeKind.OR, tuple(children))

    @property
    def is_leaf(self) -> bool:
        return self.kind is NodeKind.LEAF

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> dict[str, TreeNode]:
        return {n.id: n for n in self.walk() if n.is_leaf}


@dataclass(frozen=True)
class AttackTree:
    goal: Goal
    root: TreeNode
    title: str = ""
    source_anchor: str = ""
    scenarios: tuple[AbuseScenario, ...] = ()
    _leaves: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_leaves", self.root.leaves())

    def leaves(self) -> dict[str, TreeNode]:
        return dict(self._leaves)

    def leaf(self, leaf_id: str) -> TreeNode:
        return self._leaves[leaf_id]

    def find_anchor(self, anchor: str) -> list[TreeNode]:
        return [n for n in self.root.walk() if n.paper_anchor == anchor]

    def nodes(self) -> list[TreeNode]:
        return list(self.root.walk())


# -- parsing ----------------------------------------------------------------

_NODE_KEYS = {"id", "label", "kind", "children", "access_vectors", "sophistication", "hazards",
              "scenario_links", "applicable_categories", "paper_anchor", "rationale"}
_LEAF_ONLY = ("access_vectors", "sophistication", "hazards", "scenario_links", "applicable_categories")


def _enum(cls, token, path: str, what: str):
    try:
        return cls(token)
    except ValueError:
        raise TreeValidationError(path, f"unknown {what} {token!r}") from None


def _parse_node(d, path: str, seen: set[str]) -> TreeNode:
    if not isinstance(d, Mapping):
        raise TreeValidationError(path, "node must be an object")
    for key in ("id", "label", "kind"):
        if key not in d:
            raise TreeValidationError(path, f"missing {key!r}")
    node_id = d["id"]
    path = f"{path}[{node_id}]"
    extra = set(d) - _NODE_KEYS
    if extra:
        raise TreeValidationError(path, f"unknown keys {sorted(extra)}")
    if node_id in seen:
        raise TreeValidationError(path, f"duplicate node id {node_id!r}")
    seen.add(node_id)
    kind = _enum(NodeKind, d["kind"], path, "kind")
    children_raw = d.get("children", [])
    if kind is NodeKind.LEAF:
        if children_raw:
            raise TreeValidationError(path, "leaf has children")
        vectors = frozenset(_enum(AccessVector, v, path, "access vector") for v in d.get("access_vectors", []))
        if not vectors:
            raise TreeValidationError(path, "leaf needs at least one access vector")
        if "sophistication" not in d:
            raise TreeValidationError(path, "leaf needs a sophistication grade")
        hazards = []
        for i, h in enumerate(d.get("hazards", [])):
            hp = f"{path}.hazards[{i}]"
            if not h.get("effect"):
                raise TreeValidationError(hp, "hazard effect must be non-empty")
            hazards.append(HazardAnnotation(
                h["effect"],
                _enum(Onset, h.get("onset"), hp, "onset"),
                _enum(Severity, h.get("severity"), hp, "severity"),
                h.get("clinical_note", ""),
            ))
        return TreeNode(
            id=node_id, label=d["label"], kind=kind,
            access_vectors=vectors,
            sophistication=_enum(Sophistication, d["sophistication"], path, "sophistication"),
            hazards=tuple(hazards),
            scenario_links=frozenset(int(s) for s in d.get("scenario_links", [])),
            applicable_categories=frozenset(
                _enum(Category, c, path, "category") for c in d.get("applicable_categories", [])),
            paper_anchor=d.get("paper_anchor"),
            rationale=d.get("rationale"),
        )
    if not children_raw:
        raise TreeValidationError(path, f"{kind.value} node has no children")
    stray = [k for k in _LEAF_ONLY if k in d]
    if stray:
        raise TreeValidationError(path, f"gate node carries leaf-only keys {stray}")
    children = tuple(_parse_node(c, f"{path}.children", seen) for c in children_raw)
    return TreeNode(node_id, d["label"], kind, children,
                    paper_anchor=d.get("paper_anchor"), rationale=d.get("rationale"))


def parse_tree(document: Mapping | str | Path) -> AttackTree:
    """Validate and build an :class:`AttackTree` from a document or JSON file path."""
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text(encoding="utf-8"))
    if not isinstance(document, Mapping):
        raise TreeValidationError("$", "tree document must be an object")
    goal = _enum(Goal, document.get("goal"), "$", "goal")
    scenarios = []
    for i, s in enumerate(document.get("scenarios", [])):
        try:
            scenarios.append(AbuseScenario(int(s["id"]), s["name"], s.get("description", "")))
        except (KeyError, TypeError, ValueError):
            raise TreeValidationError(f"$.scenarios[{i}]", "scenario needs integer id and name") from None
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise TreeValidationError("$.scenarios", "duplicate scenario id")
    if "root" not in document:
        raise TreeValidationError("$", "missing root")
    root = _parse_node(document["root"], "$.root", set())
    known = set(ids)
    for leaf in root.leaves().values():
        missing = leaf.scenario_links - known
        if missing:
            raise TreeValidationError(f"$.root..[{leaf.id}]", f"unknown scenario ids {sorted(missing)}")
    return AttackTree(goal, root, document.get("title", ""), document.get("source_anchor", ""), tuple(scenarios))


TREE_FILES = {
    Goal.CONFIDENTIALITY: "confidentiality.json",
    Goal.INTEGRITY: "integrity.json",
    Goal.AVAILABILITY: "availability.json",
}


def bundled_tree_path(goal: Goal | str) -> Path:
    return Path(str(resources.files("medjack").joinpath("data/trees", TREE_FILES[Goal(goal)])))


def load_bundled_tree(goal: Goal | str) -> AttackTree:
    return parse_tree(bundled_tree_path(goal))


def load_bundled_trees() -> dict[Goal, AttackTree]:
    return {g: load_bundled_tree(g) for g in Goal}


# -- cut sets ---------------------------------------------------------------

@dataclass(frozen=True)
class AttackPath:
    leaves: frozenset[str]
    hazards: frozenset[HazardAnnotation] = frozenset()

    @property
    def sorted_leaves(self) -> tuple[str, ...]:
        return tuple(sorted(self.leaves))

    def sort_key(self):
        return (len(self.leaves), self.sorted_leaves)

    def to_dict(self) -> dict:
        return {"leaves": list(self.sorted_leaves),
                "hazards": [h.to_dict() for h in sorted(self.hazards, key=_hazard_key)]}


def _hazard_key(h: HazardAnnotation):
    return (-h.severity.rank, h.onset.value, h.effect)


def _minimize(family: Iterable[frozenset[str]]) -> list[frozenset[str]]:
    kept: list[frozenset[str]] = []
    for s in sorted(set(family), key=lambda s: (len(s), sorted(s))):
        if not any(k <= s for k in kept):
            kept.append(s)
    return kept


def enumerate_paths(tree: AttackTree | TreeNode, cap: int = 100_000) -> list[AttackPath]:
    """Minimal cut sets, sorted by size then leaf ids.

    A bare :class:`TreeNode` is accepted too; there the same leaf id may
    appear under several gates, which is how shared sub-goals are modelled.
    ``PathOverflowError`` is raised once any intermediate family would
    exceed ``cap`` sets.
    """
    root = tree.root if isinstance(tree, AttackTree) else tree
    leaves = root.leaves()

    def family(node: TreeNode) -> list[frozenset[str]]:
        if node.is_leaf:
            return [frozenset((node.id,))]
        fams = [family(c) for c in node.children]
        if node.kind is NodeKind.OR:
            total = sum(len(f) for f in fams)
            if total > cap:
                raise PathOverflowError(f"node {node.id!r}: {total} sets exceeds cap {cap}")
            return _minimize(s for f in fams for s in f)
        acc = [frozenset()]
        for f in fams:
            if len(acc) * len(f) > cap:
                raise PathOverflowError(f"node {node.id!r}: {len(acc) * len(f)} sets exceeds cap {cap}")
            acc = _minimize(a | b for a in acc for b in f)
        return acc

    out = []
    for s in _minimize(family(root)):
        hazards = frozenset(h for lid in s for h in leaves[lid].hazards)
        out.append(AttackPath(s, hazards))
    out.sort(key=AttackPath.sort_key)
    return out


def satisfies(node: TreeNode, chosen: frozenset[str] | set[str]) -> bool:
    """Whether succeeding at exactly the ``chosen`` leaves achieves ``node``."""
    if node.is_leaf:
        return node.id in chosen
    results = (satisfies(c, chosen) for c in node.children)
    return all(results) if node.kind is NodeKind.AND else any(results)


# -- adversary filtering ----------------------------------------------------

@dataclass(frozen=True)
class AdversaryProfile:
    vectors: frozenset[AccessVector]
    max_sophistication: Sophistication = Sophistication.HIGH

    def __post_init__(self):
        object.__setattr__(self, "vectors", frozenset(AccessVector(v) for v in self.vectors))
        object.__setattr__(self, "max_sophistication", Sophistication(self.max_sophistication))
        if not self.vectors:
            raise ValueError("adversary profile needs at least one access vector")

    def can_perform(self, leaf: TreeNode) -> bool:
        return bool(leaf.access_vectors & self.vectors) and leaf.sophistication.rank <= self.max_sophistication.rank


FULL_PROFILE = AdversaryProfile(frozenset(AccessVector), Sophistication.HIGH)
# Abuser working through ownership, the user interface or coercion, no hacking skills.
UI_BOUND_PROFILE = AdversaryProfile(
    frozenset({AccessVector.UI_BOUND, AccessVector.OWNERSHIP, AccessVector.COERCION}), Sophistication.LOW)


def filter_paths(paths: Sequence[AttackPath], profile: AdversaryProfile,
                 tree: AttackTree | TreeNode) -> list[AttackPath]:
    leaves = tree.leaves() if isinstance(tree, AttackTree) else tree.leaves()
    out = []
    for p in paths:
        unknown = p.leaves - leaves.keys()
        if unknown:
            raise KeyError(f"unknown leaf ids {sorted(unknown)}")
        if all(profile.can_perform(leaves[lid]) for lid in p.leaves):
            out.append(p)
    return out


# -- hazard report ----------------------------------------------------------

@dataclass(frozen=True)
class HazardCount:
    hazard: HazardAnnotation
    path_count: int


@dataclass(frozen=True)
class HazardGroup:
    onset: Onset
    severity: Severity
    hazards: tuple[HazardCount, ...]
    path_count: int


@dataclass(frozen=True)
class HazardReport:
    groups: tuple[HazardGroup, ...] = ()
    worst_severity: Severity | None = None
    exemplars: tuple[HazardAnnotation, ...] = ()

    def group(self, onset: Onset | str, severity: Severity | str) -> HazardGroup | None:
        for g in self.groups:
            if g.onset is Onset(onset) and g.severity is Severity(severity):
                return g
        return None

    @property
    def onsets(self) -> set[Onset]:
        return {g.onset for g in self.groups}

    def to_dict(self) -> dict:
        return {
            "groups": [{
                "onset": g.onset.value, "severity": g.severity.value, "path_count": g.path_count,
                "hazards": [{**hc.hazard.to_dict(), "path_count": hc.path_count} for hc in g.hazards],
            } for g in self.groups],
            "worst_severity": None if self.worst_severity is None else self.worst_severity.value,
            "exemplars": [h.to_dict() for h in self.exemplars],
        }


def hazard_summary(paths: Iterable[AttackPath]) -> HazardReport:
    per_hazard: dict[HazardAnnotation, int] = defaultdict(int)
    per_group: dict[tuple[Onset, Severity], int] = defaultdict(int)
    for p in paths:
        for h in p.hazards:
            per_hazard[h] += 1
        for key in {(h.onset, h.severity) for h in p.hazards}:
            per_group[key] += 1
    if not per_hazard:
        return HazardReport()
    groups = []
    for onset, severity in sorted(per_group, key=lambda k: (list(Onset).index(k[0]), -k[1].rank)):
        members = sorted((h for h in per_hazard if h.onset is onset and h.severity is severity), key=_hazard_key)
        groups.append(HazardGroup(onset, severity, tuple(HazardCount(h, per_hazard[h]) for h in members),
                                  per_group[(onset, severity)]))
    worst = max((h.severity for h in per_hazard), key=lambda s: s.rank)
    exemplars = tuple(sorted((h for h in per_hazard if h.severity is worst), key=_hazard_key))
    return HazardReport(tuple(groups), worst, exemplars)


# -- inventory mapping ------------------------------------------------------

NO_MODELED_SURFACE = "no modeled surface"
INFORMATIONAL = "informational"


@dataclass(frozen=True)
class LeafRef:
    goal: Goal
    leaf_id: str
    label: str
    paper_anchor: str | None


@dataclass(frozen=True)
class DeviceApplicability:
    device_label: str
    category: Category
    leaves: tuple[LeafRef, ...]
    flag: str | None = None


@dataclass(frozen=True)
class ApplicabilityReport:
    devices: tuple[DeviceApplicability, ...] = ()

    def __getitem__(self, label: str) -> DeviceApplicability:
        for d in self.devices:
            if d.device_label == label:
                return d
        raise KeyError(label)

    def to_dict(self) -> dict:
        return {"devices": [{
            "device": d.device_label, "category": d.category.value, "flag": d.flag,
            "leaves": [{"goal": r.goal.value, "leaf_id": r.leaf_id, "label": r.label,
                        "paper_anchor": r.paper_anchor} for r in d.leaves],
        } for d in self.devices]}


def map_inventory(devices: Iterable[tuple[str, Category | str]], trees: Iterable[AttackTree]) -> ApplicabilityReport:
    """List, per device, the leaves whose applicable categories include it.

    Security tools are flagged informational: they are instruments of an
    attack rather than victim devices. Other devices with no applicable leaf
    are flagged as having no modeled surface.
    """
    trees = list(trees)
    out = []
    for label, category in devices:
        category = Category(category)
        refs = tuple(
            LeafRef(t.goal, leaf.id, leaf.label, leaf.paper_anchor)
            for t in trees for leaf in t.root.walk()
            if leaf.is_leaf and category in leaf.applicable_categories
        )
        if category is Category.SECURITY_TOOL:
            flag = INFORMATIONAL
        elif not refs:
            flag = NO_MODELED_SURFACE
        else:
            flag = None
        out.append(DeviceApplicability(label, category, refs, flag))
    return ApplicabilityReport(tuple(out))
