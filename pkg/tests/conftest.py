from __future__ import annotations

import numpy as np
import pytest


def reference_decode(payload: bytes):
    """Deliberately naive length-type-value walker used as a test oracle.

    Returns ``(structures, padding)`` or ``None`` when the payload is invalid.
    """
    out = []
    pos = 0
    while pos < len(payload):
        n = payload[pos]
        if n == 0:
            rest = payload[pos:]
            return (out, len(rest)) if rest == bytes(len(rest)) else None
        chunk = payload[pos + 1:pos + 1 + n]
        if len(chunk) != n:
            return None
        if chunk[0] == 0xFF and n - 1 < 2:
            return None
        out.append((chunk[0], bytes(chunk[1:])))
        pos += 1 + n
    return out, 0


def random_valid_payload(rng: np.random.Generator) -> bytes:
    """A well-formed advertising payload of at most 255 bytes."""
    parts = []
    room = 255 - int(rng.integers(0, 4))
    for _ in range(int(rng.integers(0, 8))):
        ad_type = int(rng.integers(0, 256))
        min_len = 2 if ad_type == 0xFF else 0
        max_len = min(40, room - 2)
        if max_len < min_len:
            break
        value = rng.integers(0, 256, size=int(rng.integers(min_len, max_len + 1)), dtype=np.uint8).tobytes()
        parts.append(bytes((len(value) + 1, ad_type)) + value)
        room -= len(value) + 2
    body = b"".join(parts)
    pad = int(rng.integers(0, max(1, min(4, 255 - len(body)) + 1)))
    return body + bytes(pad)


@pytest.fixture
def model():
    from medjack.ranging import PathLossModel

    return PathLossModel(-59.0, 2.0)


# -- attack-tree oracle -----------------------------------------------------

def brute_force_cut_sets(root) -> set[frozenset[str]]:
    """Every minimal satisfying leaf subset, by exhaustive enumeration.

    Satisfaction is evaluated for all ``2**L`` subsets at once with boolean
    arrays; a satisfying subset is minimal when dropping any one of its
    leaves breaks it (the structure function is monotone).
    """
    from medjack.threat_tree import NodeKind

    ids = sorted({n.id for n in root.walk() if n.is_leaf})
    masks = np.arange(1 << len(ids), dtype=np.int64)
    bit = {lid: 1 << i for i, lid in enumerate(ids)}

    def sat(node):
        if node.is_leaf:
            return (masks & bit[node.id]) != 0
        parts = [sat(c) for c in node.children]
        return np.logical_and.reduce(parts) if node.kind is NodeKind.AND else np.logical_or.reduce(parts)

    ok = sat(root)
    minimal = ok.copy()
    for b in bit.values():
        has = (masks & b) != 0
        minimal &= ~(has & ok[masks ^ b])
    return {frozenset(lid for lid in ids if m & bit[lid]) for m in masks[minimal]}


def random_tree(rng: np.random.Generator, max_leaves: int = 12):
    """Random AND/OR tree over at most ``max_leaves`` distinct leaf ids, which may repeat."""
    from medjack.threat_tree import TreeNode

    n_ids = int(rng.integers(1, max_leaves + 1))
    counter = iter(range(10**6))

    def build(depth, root=False):
        if depth == 0 or (not root and rng.random() < 0.3):
            return TreeNode.leaf(f"l{int(rng.integers(0, n_ids))}")
        kids = [build(depth - 1) for _ in range(int(rng.integers(2, 5)))]
        gate = TreeNode.and_ if rng.random() < 0.5 else TreeNode.or_
        return gate(f"g{next(counter)}", *kids)

    return build(int(rng.integers(1, 5)), root=True)


# -- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[number]
        line = f"{verdict} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
