"""Independent oracles and generators used across the suite.

Everything here re-derives expected behaviour from first principles
(straight from the documented rules) without calling the code paths it
checks, so agreement is evidence and not tautology.
"""

from __future__ import annotations

import json
import random
from typing import Any

from rjs import Proxy
from rjs.model import ValueKind

# ---------------------------------------------------------------------------
# overload-resolution oracle: exhaustive scorer over the documented cost table
# ---------------------------------------------------------------------------


def chain_distance(dynamic: str, target: str, type_bases: dict[str, list[str]]) -> int | None:
    level = 0
    frontier = {dynamic}
    seen: set[str] = set()
    while frontier:
        if target in frontier:
            return level
        nxt: set[str] = set()
        for name in frontier:
            if name in seen:
                continue
            seen.add(name)
            nxt.update(type_bases.get(name, []))
        frontier = nxt
        level += 1
    return None


def oracle_cost(
    value: Any,
    kind: ValueKind,
    enums: dict[str, dict[str, int]],
    type_bases: dict[str, list[str]],
) -> int | None:
    tag = kind.tag
    if isinstance(value, bool):
        return 0 if tag == "bool" else None
    if isinstance(value, (int, float)):
        v = float(value)
        if tag == "f64":
            return 0
        if tag == "i64":
            return 1 if v == int(v) and -(2**63) <= v < 2**63 else None
        if tag == "enum":
            if v != int(v):
                return None
            return 2 if int(v) in enums.get(kind.name or "", {}).values() else None
        return None
    if isinstance(value, str):
        if tag == "cstr":
            return 0
        if tag == "str":
            return 1
        if tag == "enum":
            return 2 if value in enums.get(kind.name or "", {}) else None
        return None
    if value is None:
        return 1 if tag == "obj" else None
    if isinstance(value, Proxy):
        if tag != "obj":
            return None
        return chain_distance(value.type_name, kind.name or "", type_bases)
    return None


def oracle_classify(
    param_lists: list[tuple[ValueKind, ...]],
    args: list[Any],
    enums: dict[str, dict[str, int]],
    type_bases: dict[str, list[str]],
) -> tuple[str, Any]:
    """("ok", winner_index) | ("ambiguous", {indices}) | ("nomatch", None)."""
    totals: dict[int, int] = {}
    for index, params in enumerate(param_lists):
        if len(params) != len(args):
            continue
        total = 0
        for value, kind in zip(args, params):
            cost = oracle_cost(value, kind, enums, type_bases)
            if cost is None:
                total = -1
                break
            total += cost
        if total >= 0:
            totals[index] = total
    if not totals:
        return "nomatch", None
    best = min(totals.values())
    winners = {i for i, t in totals.items() if t == best}
    if len(winners) > 1:
        return "ambiguous", winners
    return "ok", winners.pop()


# ---------------------------------------------------------------------------
# alias-chain oracle
# ---------------------------------------------------------------------------


def follow_aliases(creation_log: dict[int, int], handle: int) -> int:
    """Resolve a handle by iteratively following recorded creation targets."""
    seen: set[int] = set()
    current = handle
    while current in creation_log and creation_log[current] != current:
        assert current not in seen, "alias cycle in test setup"
        seen.add(current)
        current = creation_log[current]
    return current


# ---------------------------------------------------------------------------
# manifest-name walker (merge completeness / enumerate agreement)
# ---------------------------------------------------------------------------


def manifest_names(ast) -> dict[str, set[str]]:
    namespaces: set[str] = set()

    def note(path: str) -> None:
        parts = path.split(".")
        for i in range(1, len(parts) + 1):
            namespaces.add(".".join(parts[:i]))

    for path in ast.namespaces:
        note(path)
    for spec in (*ast.types, *ast.functions, *ast.globals):
        if spec.namespace:
            note(spec.namespace)
    return {
        "namespace": namespaces,
        "type": {t.qualified for t in ast.types},
        "function": {f.qualified for f in ast.functions},
        "global": {g.qualified for g in ast.globals},
    }


# ---------------------------------------------------------------------------
# random generators
# ---------------------------------------------------------------------------

OVERLOAD_FIXTURE = {
    "enums": {
        "E1": {"ea": 1, "eb": 2, "ec": 5},
        "E2": {"zero": 0, "two": 2},
    },
    "types": [
        {"name": "Base", "fields": [{"name": "tag", "kind": "i64", "initial": 0}]},
        {"name": "Mid", "bases": ["Base"]},
        {"name": "Leaf", "bases": ["Mid"]},
        {"name": "Other"},
    ],
}

OVERLOAD_TYPE_BASES = {"Base": [], "Mid": ["Base"], "Leaf": ["Mid"], "Other": []}


def load_overload_fixture(bridge):
    """Merge the scoring corpus and return (proxies by type, enum tables)."""
    from rjs.registry import merge, parse_manifest

    merge(bridge.registry, parse_manifest(json.dumps(OVERLOAD_FIXTURE)), bridge.heap)
    bridge.refresh()
    proxies = {
        name: bridge.factory.proxy_for(bridge.heap, bridge.heap.construct(name))
        for name in ("Base", "Mid", "Leaf", "Other")
    }
    return proxies, OVERLOAD_FIXTURE["enums"]


def random_kind(rng: random.Random) -> ValueKind:
    choice = rng.randrange(11)
    if choice < 5:
        return ValueKind(("i64", "f64", "bool", "cstr", "str")[choice])
    if choice < 7:
        return ValueKind("enum", ("E1", "E2")[choice - 5])
    return ValueKind("obj", ("Base", "Mid", "Leaf", "Other")[choice - 7])


def random_arg(rng: random.Random, proxies: dict[str, Proxy]) -> Any:
    pool = [
        0.0,
        1.0,
        2.0,
        5.0,
        2.5,
        -3.0,
        1e20,
        "ea",
        "zero",
        "plain",
        "",
        True,
        False,
        None,
        proxies["Base"],
        proxies["Mid"],
        proxies["Leaf"],
        proxies["Other"],
    ]
    return rng.choice(pool)


def random_param_lists(rng: random.Random) -> list[tuple[ValueKind, ...]]:
    """1-4 signatures, pairwise distinguishable by (arity, kinds)."""
    lists: list[tuple[ValueKind, ...]] = []
    seen: set[tuple] = set()
    for _ in range(rng.randint(1, 4)):
        for _attempt in range(20):
            params = tuple(random_kind(rng) for _ in range(rng.randint(0, 3)))
            key = tuple((k.tag, k.name) for k in params)
            if key not in seen:
                seen.add(key)
                lists.append(params)
                break
    return lists
