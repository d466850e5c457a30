"""Static-model diffing between two app versions.

Both window graphs are converted into element trees (windows at the top,
widgets and transitions below their window) and matched in three passes:
an exact pass, a greedy assignment of correspondence candidates scored by
string similarity, and a final classification into matched / replaced /
added / deleted.  Runtime-discovered elements are excluded on both sides
so that they are never reported as deletions.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from .model import Ewtg, WindowTransition


# --- string similarity ---------------------------------------------------


def levenshtein_ratio(a: str, b: str) -> float:
    """1 - editDistance / max(len); 1.0 when both strings are empty."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    if a == b:
        return 1.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))


def xpath_similarity(a: str, b: str) -> float:
    """Cosine similarity between '/'-token count vectors of two paths."""
    ta = Counter(t for t in a.split("/") if t)
    tb = Counter(t for t in b.split("/") if t)
    if not ta and not tb:
        return 1.0
    if not ta or not tb:
        return 0.0
    dot = sum(ta[t] * tb[t] for t in ta if t in tb)
    norm = math.sqrt(sum(v * v for v in ta.values())) * math.sqrt(
        sum(v * v for v in tb.values())
    )
    return dot / norm


# --- RCV-style element model --------------------------------------------


@dataclass
class MElement:
    id: str
    kind: str  # Window | Widget | Transition
    attributes: dict[str, str] = field(default_factory=dict)
    references: dict[str, str] = field(default_factory=dict)
    children: list["MElement"] = field(default_factory=list)


@dataclass
class RcvModel:
    roots: list[MElement] = field(default_factory=list)

    def elements_of_kind(self, kind: str) -> list[MElement]:
        out = []

        def visit(e: MElement):
            if e.kind == kind:
                out.append(e)
            for c in e.children:
                visit(c)

        for root in self.roots:
            visit(root)
        return out


def ewtg_to_rcv(ewtg: Ewtg) -> RcvModel:
    """Windows at the top level; widgets and outgoing transitions below them.

    Runtime-created elements and anything referencing them stay out of the
    model so the diff only compares what static analysis could see.
    """
    model = RcvModel()
    window_elements: dict[str, MElement] = {}
    for window in sorted(ewtg.windows.values(), key=lambda w: w.id):
        if window.runtime_created:
            continue
        elem = MElement(
            id=window.id,
            kind="Window",
            attributes={
                "name": window.name,
                "kind": window.kind.value,
                "className": window.class_name,
            },
        )
        window_elements[window.id] = elem
        model.roots.append(elem)

    for widget in sorted(ewtg.widgets.values(), key=lambda w: w.id):
        if widget.runtime_created:
            continue
        parent_window = window_elements.get(widget.window_id)
        if parent_window is None:
            continue
        elem = MElement(
            id=widget.id,
            kind="Widget",
            attributes={
                "resourceId": widget.resource_id,
                "className": widget.class_name,
                "contentDescription": widget.content_description,
                "xpath": widget.xpath,
            },
            references={"window": widget.window_id},
        )
        if widget.parent_id is not None:
            elem.references["parent"] = widget.parent_id
        parent_window.children.append(elem)

    for wt in sorted(ewtg.window_transitions.values(), key=lambda t: t.id):
        inp = ewtg.inputs.get(wt.input_id)
        if inp is None:
            continue
        source = window_elements.get(wt.source_window_id)
        if source is None or wt.destination_window_id not in window_elements:
            continue
        if inp.widget_id is not None:
            widget = ewtg.widgets.get(inp.widget_id)
            if widget is None or widget.runtime_created:
                continue
        elem = MElement(
            id=wt.id,
            kind="Transition",
            attributes={"actionType": inp.action_type.value},
            references={
                "source": wt.source_window_id,
                "destination": wt.destination_window_id,
            },
        )
        if inp.widget_id is not None:
            elem.references["widget"] = inp.widget_id
        source.children.append(elem)
    return model


# --- diff result ---------------------------------------------------------


@dataclass
class DiffResult:
    added_windows: set[str] = field(default_factory=set)
    deleted_windows: set[str] = field(default_factory=set)
    replaced_windows: dict[str, str] = field(default_factory=dict)
    added_widgets: set[str] = field(default_factory=set)
    deleted_widgets: set[str] = field(default_factory=set)
    replaced_widgets: dict[str, str] = field(default_factory=dict)
    added_transitions: set[str] = field(default_factory=set)
    deleted_transitions: set[str] = field(default_factory=set)
    replaced_transitions: dict[str, str] = field(default_factory=dict)
    # 1-to-1 pairing of unchanged elements, base id -> updated id
    matched_windows: dict[str, str] = field(default_factory=dict)
    matched_widgets: dict[str, str] = field(default_factory=dict)
    matched_transitions: dict[str, str] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (
            self.added_windows
            or self.deleted_windows
            or self.replaced_windows
            or self.added_widgets
            or self.deleted_widgets
            or self.replaced_widgets
            or self.added_transitions
            or self.deleted_transitions
            or self.replaced_transitions
        )

    def window_mapping(self) -> dict[str, str]:
        mapping = dict(self.matched_windows)
        mapping.update(self.replaced_windows)
        return mapping

    def widget_mapping(self) -> dict[str, str]:
        mapping = dict(self.matched_widgets)
        mapping.update(self.replaced_widgets)
        return mapping

    def to_dict(self) -> dict:
        return {
            "addedWindows": sorted(self.added_windows),
            "deletedWindows": sorted(self.deleted_windows),
            "replacedWindows": dict(sorted(self.replaced_windows.items())),
            "addedWidgets": sorted(self.added_widgets),
            "deletedWidgets": sorted(self.deleted_widgets),
            "replacedWidgets": dict(sorted(self.replaced_widgets.items())),
            "addedTransitions": sorted(self.added_transitions),
            "deletedTransitions": sorted(self.deleted_transitions),
            "replacedTransitions": dict(sorted(self.replaced_transitions.items())),
            "matchedWindows": dict(sorted(self.matched_windows.items())),
            "matchedWidgets": dict(sorted(self.matched_widgets.items())),
            "matchedTransitions": dict(sorted(self.matched_transitions.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffResult":
        return cls(
            added_windows=set(d.get("addedWindows", [])),
            deleted_windows=set(d.get("deletedWindows", [])),
            replaced_windows=dict(d.get("replacedWindows", {})),
            added_widgets=set(d.get("addedWidgets", [])),
            deleted_widgets=set(d.get("deletedWidgets", [])),
            replaced_widgets=dict(d.get("replacedWidgets", {})),
            added_transitions=set(d.get("addedTransitions", [])),
            deleted_transitions=set(d.get("deletedTransitions", [])),
            replaced_transitions=dict(d.get("replacedTransitions", {})),
            matched_windows=dict(d.get("matchedWindows", {})),
            matched_widgets=dict(d.get("matchedWidgets", {})),
            matched_transitions=dict(d.get("matchedTransitions", {})),
        )

    def to_json(self) -> bytes:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True).encode("utf-8")

    @classmethod
    def from_json(cls, data: bytes) -> "DiffResult":
        return cls.from_dict(json.loads(data.decode("utf-8")))


# --- matching ------------------------------------------------------------


def _greedy_assign(candidates: list[tuple[float, int, str, str]]) -> dict[str, str]:
    """1-to-1 assignment, highest score first, ties by insertion (document) order."""
    assignment: dict[str, str] = {}
    taken: set[str] = set()
    for _score, _order, base_id, upd_id in sorted(
        candidates, key=lambda c: (-c[0], c[1])
    ):
        if base_id in assignment or upd_id in taken:
            continue
        assignment[base_id] = upd_id
        taken.add(upd_id)
    return assignment


def _window_corresponds(a: MElement, b: MElement, threshold: float) -> Optional[float]:
    """Same window type, other attributes similar.  Returns a score or None."""
    if a.attributes["kind"] != b.attributes["kind"]:
        return None
    name_sim = levenshtein_ratio(a.attributes["name"], b.attributes["name"])
    class_sim = levenshtein_ratio(a.attributes["className"], b.attributes["className"])
    if name_sim < threshold or class_sim < threshold:
        return None
    return (name_sim + class_sim) / 2


def _parents_paired(a: MElement, b: MElement, widget_pairs: dict[str, str]) -> bool:
    base_parent = a.references.get("parent")
    upd_parent = b.references.get("parent")
    if base_parent is None or upd_parent is None:
        return base_parent is None and upd_parent is None
    return widget_pairs.get(base_parent) == upd_parent


def _parent_depth_order(widgets: list[MElement]) -> list[MElement]:
    """Parents before children so pairing can be checked incrementally."""
    by_id = {w.id: w for w in widgets}

    def depth(w: MElement) -> int:
        d = 0
        seen = set()
        parent = w.references.get("parent")
        while parent in by_id and parent not in seen:
            seen.add(parent)
            d += 1
            parent = by_id[parent].references.get("parent")
        return d

    return sorted(widgets, key=lambda w: (depth(w), w.id))


def _widget_corresponds(
    a: MElement,
    b: MElement,
    widget_pairs: dict[str, str],
    lev_threshold: float,
    xpath_threshold: float,
) -> Optional[float]:
    """Correspondence with a single allowed exception: parent or class name."""
    rid_sim = levenshtein_ratio(a.attributes["resourceId"], b.attributes["resourceId"])
    cd_sim = levenshtein_ratio(
        a.attributes["contentDescription"], b.attributes["contentDescription"]
    )
    xp_sim = xpath_similarity(a.attributes["xpath"], b.attributes["xpath"])
    class_sim = levenshtein_ratio(a.attributes["className"], b.attributes["className"])
    parent_ok = _parents_paired(a, b, widget_pairs)

    core_ok = rid_sim >= lev_threshold and cd_sim >= lev_threshold and xp_sim >= xpath_threshold
    if not core_ok:
        return None
    class_ok = class_sim >= lev_threshold
    if not class_ok and not parent_ok:
        # both the class name and the parent changed: not a correspondence
        return None
    if not class_ok:  # className is the single allowed exception
        return (rid_sim + cd_sim + xp_sim) / 3
    return (rid_sim + cd_sim + xp_sim + class_sim) / 4


def match_models(
    base: RcvModel,
    updated: RcvModel,
    lev_threshold: float = 0.4,
    xpath_threshold: float = 0.4,
) -> "RawMatching":
    """Exact matching pass followed by correspondence candidate assignment."""
    matching = RawMatching()

    # Windows: exact on all attributes, then correspondence.
    base_windows = base.elements_of_kind("Window")
    upd_windows = updated.elements_of_kind("Window")
    unmatched_upd = list(upd_windows)
    for bw in base_windows:
        for uw in list(unmatched_upd):
            if bw.attributes == uw.attributes:
                matching.matched_windows[bw.id] = uw.id
                unmatched_upd.remove(uw)
                break
    candidates = []
    order = 0
    for bw in base_windows:
        if bw.id in matching.matched_windows:
            continue
        for uw in unmatched_upd:
            score = _window_corresponds(bw, uw, lev_threshold)
            if score is not None:
                candidates.append((score, order, bw.id, uw.id))
                order += 1
    matching.corresponding_windows = _greedy_assign(candidates)

    window_pairs = dict(matching.matched_windows)
    window_pairs.update(matching.corresponding_windows)

    # Widgets: matched inside paired windows only.
    base_by_window = {w.id: [c for c in w.children if c.kind == "Widget"] for w in base_windows}
    upd_by_window = {w.id: [c for c in w.children if c.kind == "Widget"] for w in upd_windows}
    widget_pairs: dict[str, str] = {}
    for base_win_id, upd_win_id in sorted(window_pairs.items()):
        b_widgets = _parent_depth_order(base_by_window.get(base_win_id, []))
        u_widgets = list(upd_by_window.get(upd_win_id, []))
        # exact pass; parent-depth ordering guarantees parents are paired first
        for bw in b_widgets:
            for uw in list(u_widgets):
                if bw.attributes == uw.attributes and _parents_paired(bw, uw, widget_pairs):
                    matching.matched_widgets[bw.id] = uw.id
                    widget_pairs[bw.id] = uw.id
                    u_widgets.remove(uw)
                    break
        # correspondence pass
        candidates = []
        order = 0
        for bw in b_widgets:
            if bw.id in matching.matched_widgets:
                continue
            for uw in u_widgets:
                score = _widget_corresponds(
                    bw, uw, widget_pairs, lev_threshold, xpath_threshold
                )
                if score is not None:
                    candidates.append((score, order, bw.id, uw.id))
                    order += 1
        assigned = _greedy_assign(candidates)
        matching.corresponding_widgets.update(assigned)
        widget_pairs.update(assigned)

    # Transitions: sources must be paired windows, action type equal, widget paired.
    base_transitions = base.elements_of_kind("Transition")
    upd_transitions = updated.elements_of_kind("Transition")
    unmatched_upd_tr = list(upd_transitions)
    for bt in base_transitions:
        src_pair = window_pairs.get(bt.references["source"])
        if src_pair is None:
            continue
        for ut in list(unmatched_upd_tr):
            if ut.references["source"] != src_pair:
                continue
            if bt.attributes["actionType"] != ut.attributes["actionType"]:
                continue
            b_widget = bt.references.get("widget")
            u_widget = ut.references.get("widget")
            widgets_paired = (b_widget is None and u_widget is None) or (
                b_widget is not None and widget_pairs.get(b_widget) == u_widget
            )
            if not widgets_paired:
                continue
            dest_pair = window_pairs.get(bt.references["destination"])
            if dest_pair == ut.references["destination"]:
                matching.matched_transitions[bt.id] = ut.id
            else:
                # same trigger, different destination: behaviour change
                matching.corresponding_transitions[bt.id] = ut.id
            unmatched_upd_tr.remove(ut)
            break

    matching.base_windows = [w.id for w in base_windows]
    matching.updated_windows = [w.id for w in upd_windows]
    matching.base_widgets = [w.id for win in base_windows for w in win.children if w.kind == "Widget"]
    matching.updated_widgets = [
        w.id for win in upd_windows for w in win.children if w.kind == "Widget"
    ]
    matching.base_transitions = [t.id for t in base_transitions]
    matching.updated_transitions = [t.id for t in upd_transitions]
    return matching


@dataclass
class RawMatching:
    matched_windows: dict[str, str] = field(default_factory=dict)
    corresponding_windows: dict[str, str] = field(default_factory=dict)
    matched_widgets: dict[str, str] = field(default_factory=dict)
    corresponding_widgets: dict[str, str] = field(default_factory=dict)
    matched_transitions: dict[str, str] = field(default_factory=dict)
    corresponding_transitions: dict[str, str] = field(default_factory=dict)
    base_windows: list[str] = field(default_factory=list)
    updated_windows: list[str] = field(default_factory=list)
    base_widgets: list[str] = field(default_factory=list)
    updated_widgets: list[str] = field(default_factory=list)
    base_transitions: list[str] = field(default_factory=list)
    updated_transitions: list[str] = field(default_factory=list)


def classify_correspondence(matching: RawMatching) -> DiffResult:
    """Partition every element into matched / replaced / added / deleted."""
    result = DiffResult()
    result.matched_windows = dict(matching.matched_windows)
    result.replaced_windows = dict(matching.corresponding_windows)
    result.matched_widgets = dict(matching.matched_widgets)
    result.replaced_widgets = dict(matching.corresponding_widgets)
    result.matched_transitions = dict(matching.matched_transitions)
    result.replaced_transitions = dict(matching.corresponding_transitions)

    paired_base_windows = set(result.matched_windows) | set(result.replaced_windows)
    paired_upd_windows = set(result.matched_windows.values()) | set(
        result.replaced_windows.values()
    )
    result.deleted_windows = {w for w in matching.base_windows if w not in paired_base_windows}
    result.added_windows = {w for w in matching.updated_windows if w not in paired_upd_windows}

    paired_base_widgets = set(result.matched_widgets) | set(result.replaced_widgets)
    paired_upd_widgets = set(result.matched_widgets.values()) | set(
        result.replaced_widgets.values()
    )
    result.deleted_widgets = {w for w in matching.base_widgets if w not in paired_base_widgets}
    result.added_widgets = {w for w in matching.updated_widgets if w not in paired_upd_widgets}

    paired_base_tr = set(result.matched_transitions) | set(result.replaced_transitions)
    paired_upd_tr = set(result.matched_transitions.values()) | set(
        result.replaced_transitions.values()
    )
    result.deleted_transitions = {
        t for t in matching.base_transitions if t not in paired_base_tr
    }
    result.added_transitions = {
        t for t in matching.updated_transitions if t not in paired_upd_tr
    }
    return result


def diff_ewtg(
    base: Ewtg,
    updated: Ewtg,
    lev_threshold: float = 0.4,
    xpath_threshold: float = 0.4,
) -> DiffResult:
    matching = match_models(
        ewtg_to_rcv(base), ewtg_to_rcv(updated), lev_threshold, xpath_threshold
    )
    return classify_correspondence(matching)
