"""State abstraction: reducers, abstraction levels, layout fingerprints.

Abstract states are built by applying a level's reducers to every interactable
node of a concrete GUI tree; nodes with identical reducer outputs merge into a
single attribute-valuation map with a cardinality.  Levels L1..L3 grow the
reducer set; L4 and L5 keep L2's reducers but additionally apply L1's / L2's
reducers to each widget's children.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .model import (
    AbstractState,
    AttributeValuationMap,
    GuiNode,
    GuiTree,
)


class AbstractionError(Exception):
    pass


@dataclass(frozen=True)
class Reducer:
    name: str
    property_name: str

    def extract(self, node: GuiNode) -> Any:
        if self.property_name not in node.properties:
            raise AbstractionError(
                f"node is missing property {self.property_name!r} required by {self.name}"
            )
        return node.properties[self.property_name]


R_RID = Reducer("R_RID", "resourceId")
R_CN = Reducer("R_CN", "className")
R_CD = Reducer("R_CD", "contentDescription")
R_P = Reducer("R_P", "password")
R_C = Reducer("R_C", "clickable")
R_LC = Reducer("R_LC", "longClickable")
R_SCROLLABLE = Reducer("R_Scrollable", "scrollable")
R_CH = Reducer("R_Ch", "checked")
R_E = Reducer("R_E", "enabled")
R_SELECTED = Reducer("R_Selected", "selected")
R_I = Reducer("R_I", "isInputField")
R_T = Reducer("R_T", "text")
R_HC = Reducer("R_HC", "hasChildren")

_L1_REDUCERS = (
    R_RID,
    R_CN,
    R_CD,
    R_P,
    R_C,
    R_LC,
    R_SCROLLABLE,
    R_CH,
    R_E,
    R_SELECTED,
    R_I,
)
_L2_REDUCERS = _L1_REDUCERS + (R_T,)
_L3_REDUCERS = _L2_REDUCERS + (R_HC,)


@dataclass(frozen=True)
class AbstractionLevel:
    name: str
    own_reducers: tuple[Reducer, ...]
    child_reducers: tuple[Reducer, ...] = ()


LEVELS: dict[str, AbstractionLevel] = {
    "L1": AbstractionLevel("L1", _L1_REDUCERS),
    "L2": AbstractionLevel("L2", _L2_REDUCERS),
    "L3": AbstractionLevel("L3", _L3_REDUCERS),
    "L4": AbstractionLevel("L4", _L2_REDUCERS, _L1_REDUCERS),
    "L5": AbstractionLevel("L5", _L2_REDUCERS, _L2_REDUCERS),
}

LEVEL_ORDER = ("L1", "L2", "L3", "L4", "L5")

#: Reducer names that make up a layout fingerprint (text and children excluded).
_L1_REDUCER_NAMES = tuple(r.name for r in _L1_REDUCERS)

LAYOUT_SIMILARITY_THRESHOLD = 0.8


def is_interactable(node: GuiNode) -> bool:
    props = node.properties
    return bool(
        props.get("clickable")
        or props.get("longClickable")
        or props.get("scrollable")
        or props.get("isInputField")
    )


def node_valuations(node: GuiNode, level: AbstractionLevel) -> dict[str, Any]:
    vals: dict[str, Any] = {}
    for reducer in level.own_reducers:
        vals[reducer.name] = reducer.extract(node)
    for reducer in level.child_reducers:
        child_values = sorted(json.dumps(reducer.extract(c)) for c in node.children)
        vals[f"child:{reducer.name}"] = "[" + ",".join(child_values) + "]"
    return vals


def derive_abstract_state(
    tree: GuiTree,
    level: AbstractionLevel,
    widget_map: Optional[Callable[[GuiNode], Optional[str]]] = None,
    state_id: str = "",
) -> AbstractState:
    """Abstract a concrete tree: one AVM per distinct valuation vector.

    ``widget_map`` associates nodes with static widget ids; by default the
    node's own ``widget_ref`` is used.
    """
    if widget_map is None:
        widget_map = lambda node: node.widget_ref  # noqa: E731

    groups: dict[tuple, dict] = {}
    order: list[tuple] = []
    for _path, node in tree.root.walk():
        if not is_interactable(node):
            continue
        vals = node_valuations(node, level)
        key = tuple(sorted(vals.items()))
        if key not in groups:
            groups[key] = {"valuations": vals, "count": 0, "widget_ids": []}
            order.append(key)
        groups[key]["count"] += 1
        wid = widget_map(node)
        if wid is not None:
            groups[key]["widget_ids"].append(wid)

    avms = []
    for index, key in enumerate(order, start=1):
        group = groups[key]
        widget_id = sorted(set(group["widget_ids"]))[0] if group["widget_ids"] else None
        avms.append(
            AttributeValuationMap(
                id=f"{state_id or tree.id}-avm{index}",
                valuations=group["valuations"],
                cardinality=group["count"],
                ewtg_widget_id=widget_id,
            )
        )
    return AbstractState(
        id=state_id or f"{tree.id}-state",
        window_id=tree.window_id,
        avms=avms,
        abstraction_level=level.name,
    )


def states_equal(a: AbstractState, b: AbstractState) -> bool:
    """True iff the AVM valuation multisets (with cardinalities) coincide."""
    if a.abstraction_level != b.abstraction_level:
        raise AbstractionError(
            f"cannot compare states at levels {a.abstraction_level} and {b.abstraction_level}"
        )
    if a.window_id != b.window_id:
        return False
    return a.valuation_multiset() == b.valuation_multiset()


# --- layout fingerprints -------------------------------------------------


def layout_fingerprint(state: AbstractState) -> Counter:
    """Multiset of layout-level valuations of the state's AVMs.

    States derived at finer levels are projected onto the layout reducers, so
    fingerprints are comparable across abstraction levels.
    """
    counts: Counter = Counter()
    for avm in state.avms:
        # keys are sorted so fingerprints survive serialization unchanged
        projected = tuple(
            sorted(
                (name, avm.valuations[name])
                for name in _L1_REDUCER_NAMES
                if name in avm.valuations
            )
        )
        counts[projected] += avm.cardinality
    return counts


def fingerprint_similarity(a: Counter, b: Counter) -> float:
    """Jaccard similarity over valuation multisets; 1.0 for two empty states."""
    if not a and not b:
        return 1.0
    keys = set(a) | set(b)
    inter = sum(min(a[k], b[k]) for k in keys)
    union = sum(max(a[k], b[k]) for k in keys)
    return inter / union


def layout_similarity(a: AbstractState, b: AbstractState) -> float:
    return fingerprint_similarity(layout_fingerprint(a), layout_fingerprint(b))


def fingerprint_to_dict(fp: Counter) -> dict:
    entries = sorted(
        ({"valuations": dict(key), "count": count} for key, count in fp.items()),
        key=lambda e: json.dumps(e["valuations"], sort_keys=True),
    )
    return {"entries": entries}


def fingerprint_from_dict(d: dict) -> Counter:
    counts: Counter = Counter()
    for entry in d.get("entries", []):
        key = tuple(sorted(entry["valuations"].items()))
        counts[key] += entry["count"]
    return counts


def make_layout_guard(
    destination: AbstractState,
    trace_states: list[AbstractState],
    threshold: float = LAYOUT_SIMILARITY_THRESHOLD,
) -> Optional[Counter]:
    """Fingerprint of the nearest previously visited state with a similar layout.

    ``trace_states`` is the session history in visit order; it is walked
    backward from the most recent entry.
    """
    dest_fp = layout_fingerprint(destination)
    for state in reversed(trace_states):
        if state.id == destination.id:
            continue
        fp = layout_fingerprint(state)
        if fingerprint_similarity(fp, dest_fp) >= threshold:
            return fp
    return None


# --- refinement ----------------------------------------------------------


def refine_level(
    current_level: str,
    tree_a: GuiTree,
    tree_b: GuiTree,
    widget_map: Optional[Callable[[GuiNode], Optional[str]]] = None,
) -> Optional[str]:
    """Lowest level above ``current_level`` that tells the two trees apart.

    Returns None when the trees stay indistinguishable through L5; the caller
    then has to accept the non-determinism.
    """
    start = LEVEL_ORDER.index(current_level)
    for name in LEVEL_ORDER[start + 1 :]:
        level = LEVELS[name]
        sa = derive_abstract_state(tree_a, level, widget_map, state_id="refine-a")
        sb = derive_abstract_state(tree_b, level, widget_map, state_id="refine-b")
        if sa.valuation_multiset() != sb.valuation_multiset():
            return name
    return None


# --- backward equivalence ------------------------------------------------


@dataclass
class BackwardEquivalenceContext:
    """Widget ids the diff marked as added or as replacement targets."""

    added_widget_ids: set[str] = field(default_factory=set)
    replaced_widget_ids: set[str] = field(default_factory=set)

    @property
    def excluded(self) -> set[str]:
        return self.added_widget_ids | self.replaced_widget_ids


def is_backward_equivalent(
    observed: AbstractState,
    expected: AbstractState,
    context: BackwardEquivalenceContext,
) -> bool:
    """An observed state may continue a sequence planned for an inherited state.

    Holds when both states belong to the same window, every expected AVM has a
    matching AVM in the observed state, and every observed AVM matches an
    expected one except those for widgets added or replaced by the update.
    """
    if observed.window_id != expected.window_id:
        return False
    observed_keys = {avm.valuation_key() for avm in observed.avms}
    expected_keys = {avm.valuation_key() for avm in expected.avms}
    for avm in expected.avms:
        if avm.valuation_key() not in observed_keys:
            return False
    excluded = context.excluded
    for avm in observed.avms:
        if avm.ewtg_widget_id is not None and avm.ewtg_widget_id in excluded:
            continue
        if avm.valuation_key() not in expected_keys:
            return False
    return True
