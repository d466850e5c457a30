"""Three-layer app model: static window graph, learned state graph, session trace.

The static layer (windows, widgets, inputs, window transitions) is produced by
the harness or hand-authored.  The dynamic layer (abstract states, abstract
transitions) is learned during test sessions and drives planning.  The session
layer (GUI trees plus the executed action trace) records what actually
happened and is discarded when a model is carried over to a new app version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

SCHEMA_VERSION = 1


class ModelError(Exception):
    """Raised for malformed or inconsistent model documents."""


class WindowKind(str, Enum):
    ACTIVITY = "Activity"
    DIALOG = "Dialog"
    OPTIONS_MENU = "OptionsMenu"
    CONTEXT_MENU = "ContextMenu"
    LAUNCHER = "Launcher"
    OUT_OF_APP = "OutOfApp"


class ActionType(str, Enum):
    CLICK = "Click"
    LONG_CLICK = "LongClick"
    SWIPE = "Swipe"
    TEXT_FILL = "TextFill"
    CLOSE_KEYBOARD = "CloseKeyboard"
    PRESS_BACK = "PressBack"
    PRESS_MENU = "PressMenu"
    ROTATE_SCREEN = "RotateScreen"
    RESET_APP = "ResetApp"
    INTENT = "Intent"
    ITEM_CLICK = "ItemClick"
    ITEM_LONG_CLICK = "ItemLongClick"


#: Window-level inputs act on no particular widget.
WINDOW_LEVEL_ACTIONS = {
    ActionType.PRESS_BACK,
    ActionType.PRESS_MENU,
    ActionType.ROTATE_SCREEN,
    ActionType.RESET_APP,
    ActionType.INTENT,
    ActionType.CLOSE_KEYBOARD,
}


def action_cost(action_type: ActionType) -> int:
    """App reset is an order of magnitude slower than any other action."""
    return 10 if action_type == ActionType.RESET_APP else 1


# The exact property set GUI nodes expose; reducers read nothing else.
GUI_NODE_PROPERTIES = (
    "resourceId",
    "className",
    "contentDescription",
    "text",
    "password",
    "clickable",
    "longClickable",
    "scrollable",
    "checked",
    "enabled",
    "selected",
    "isInputField",
    "hasChildren",
)


@dataclass
class Window:
    id: str
    name: str
    kind: WindowKind
    class_name: str
    runtime_created: bool = False
    widget_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "kind": self.kind.value,
            "className": self.class_name,
            "runtimeCreated": self.runtime_created,
            "widgetIds": sorted(self.widget_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Window":
        return cls(
            id=d["id"],
            name=d["name"],
            kind=WindowKind(d["kind"]),
            class_name=d["className"],
            runtime_created=d.get("runtimeCreated", False),
            widget_ids=set(d.get("widgetIds", [])),
        )


@dataclass
class EwtgWidget:
    id: str
    window_id: str
    class_name: str
    resource_id: str
    content_description: str
    xpath: str
    parent_id: Optional[str] = None
    runtime_created: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "windowId": self.window_id,
            "className": self.class_name,
            "resourceId": self.resource_id,
            "contentDescription": self.content_description,
            "xpath": self.xpath,
            "parentId": self.parent_id,
            "runtimeCreated": self.runtime_created,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EwtgWidget":
        return cls(
            id=d["id"],
            window_id=d["windowId"],
            class_name=d["className"],
            resource_id=d["resourceId"],
            content_description=d.get("contentDescription", ""),
            xpath=d["xpath"],
            parent_id=d.get("parentId"),
            runtime_created=d.get("runtimeCreated", False),
        )


@dataclass
class Input:
    id: str
    window_id: str
    action_type: ActionType
    widget_id: Optional[str] = None
    handler_method_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "windowId": self.window_id,
            "widgetId": self.widget_id,
            "actionType": self.action_type.value,
            "handlerMethodIds": sorted(self.handler_method_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Input":
        return cls(
            id=d["id"],
            window_id=d["windowId"],
            widget_id=d.get("widgetId"),
            action_type=ActionType(d["actionType"]),
            handler_method_ids=set(d.get("handlerMethodIds", [])),
        )


@dataclass
class WindowTransition:
    id: str
    source_window_id: str
    destination_window_id: str
    input_id: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sourceWindowId": self.source_window_id,
            "destinationWindowId": self.destination_window_id,
            "inputId": self.input_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowTransition":
        return cls(
            id=d["id"],
            source_window_id=d["sourceWindowId"],
            destination_window_id=d["destinationWindowId"],
            input_id=d["inputId"],
        )


@dataclass
class AttributeValuationMap:
    """Record of reducer outputs for one group of look-alike widgets."""

    id: str
    valuations: dict[str, Any]
    cardinality: int = 1
    ewtg_widget_id: Optional[str] = None

    def valuation_key(self) -> tuple:
        """Hashable canonical form of the valuations, used for comparisons."""
        return tuple(sorted(self.valuations.items()))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "ewtgWidgetId": self.ewtg_widget_id,
            "valuations": dict(sorted(self.valuations.items())),
            "cardinality": self.cardinality,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeValuationMap":
        return cls(
            id=d["id"],
            valuations=dict(d["valuations"]),
            cardinality=d.get("cardinality", 1),
            ewtg_widget_id=d.get("ewtgWidgetId"),
        )


@dataclass
class AbstractState:
    id: str
    window_id: str
    avms: list[AttributeValuationMap] = field(default_factory=list)
    abstraction_level: str = "L1"
    obsolete: bool = False
    observed_in_versions: set[str] = field(default_factory=set)

    def avm_by_id(self, avm_id: str) -> Optional[AttributeValuationMap]:
        for avm in self.avms:
            if avm.id == avm_id:
                return avm
        return None

    def avm_for_widget(self, widget_id: str) -> Optional[AttributeValuationMap]:
        for avm in self.avms:
            if avm.ewtg_widget_id == widget_id:
                return avm
        return None

    def valuation_multiset(self) -> dict[tuple, int]:
        counts: dict[tuple, int] = {}
        for avm in self.avms:
            key = avm.valuation_key()
            counts[key] = counts.get(key, 0) + avm.cardinality
        return counts

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "windowId": self.window_id,
            "avms": [a.to_dict() for a in sorted(self.avms, key=lambda a: a.id)],
            "abstractionLevel": self.abstraction_level,
            "obsolete": self.obsolete,
            "observedInVersions": sorted(self.observed_in_versions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AbstractState":
        return cls(
            id=d["id"],
            window_id=d["windowId"],
            avms=[AttributeValuationMap.from_dict(a) for a in d.get("avms", [])],
            abstraction_level=d.get("abstractionLevel", "L1"),
            obsolete=d.get("obsolete", False),
            observed_in_versions=set(d.get("observedInVersions", [])),
        )


@dataclass
class AbstractTransition:
    id: str
    source_state_id: str
    source_avm_id: Optional[str]
    action_type: ActionType
    destination_state_id: str
    data_payload: Optional[str] = None
    layout_guard: Optional[dict] = None  # serialized layout fingerprint
    provenance_version: str = ""

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "sourceStateId": self.source_state_id,
            "sourceAvmId": self.source_avm_id,
            "actionType": self.action_type.value,
            "dataPayload": self.data_payload,
            "destinationStateId": self.destination_state_id,
            "layoutGuard": self.layout_guard,
            "provenanceVersion": self.provenance_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AbstractTransition":
        return cls(
            id=d["id"],
            source_state_id=d["sourceStateId"],
            source_avm_id=d.get("sourceAvmId"),
            action_type=ActionType(d["actionType"]),
            destination_state_id=d["destinationStateId"],
            data_payload=d.get("dataPayload"),
            layout_guard=d.get("layoutGuard"),
            provenance_version=d.get("provenanceVersion", ""),
        )


@dataclass
class GuiNode:
    properties: dict[str, Any]
    children: list["GuiNode"] = field(default_factory=list)
    bounds_hint: Optional[dict] = None
    widget_ref: Optional[str] = None  # association to a static widget; not a property

    def walk(self, path: tuple[int, ...] = ()) -> list[tuple[tuple[int, ...], "GuiNode"]]:
        out = [(path, self)]
        for i, child in enumerate(self.children):
            out.extend(child.walk(path + (i,)))
        return out

    def node_at(self, path: tuple[int, ...]) -> "GuiNode":
        node = self
        for i in path:
            node = node.children[i]
        return node

    def to_dict(self) -> dict:
        return {
            "properties": dict(sorted(self.properties.items())),
            "children": [c.to_dict() for c in self.children],
            "boundsHint": self.bounds_hint,
            "widgetRef": self.widget_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuiNode":
        return cls(
            properties=dict(d["properties"]),
            children=[cls.from_dict(c) for c in d.get("children", [])],
            bounds_hint=d.get("boundsHint"),
            widget_ref=d.get("widgetRef"),
        )


@dataclass
class GuiTree:
    id: str
    window_id: str
    root: GuiNode
    abstract_state_id: Optional[str] = None
    session_index: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "windowId": self.window_id,
            "root": self.root.to_dict(),
            "abstractStateId": self.abstract_state_id,
            "sessionIndex": self.session_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuiTree":
        return cls(
            id=d["id"],
            window_id=d["windowId"],
            root=GuiNode.from_dict(d["root"]),
            abstract_state_id=d.get("abstractStateId"),
            session_index=d.get("sessionIndex", 0),
        )


@dataclass
class Action:
    input_id: str
    action_type: ActionType
    concrete_node_path: Optional[tuple[int, ...]] = None
    data_payload: Optional[str] = None

    @property
    def cost(self) -> int:
        return action_cost(self.action_type)

    def to_dict(self) -> dict:
        return {
            "inputId": self.input_id,
            "actionType": self.action_type.value,
            "concreteNodePath": list(self.concrete_node_path)
            if self.concrete_node_path is not None
            else None,
            "dataPayload": self.data_payload,
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Action":
        return cls(
            input_id=d["inputId"],
            action_type=ActionType(d["actionType"]),
            concrete_node_path=tuple(d["concreteNodePath"])
            if d.get("concreteNodePath") is not None
            else None,
            data_payload=d.get("dataPayload"),
        )


@dataclass
class TraceStep:
    """One executed action with the trees observed around it."""

    action: Action
    before_tree_id: str
    after_tree_id: str

    def to_dict(self) -> dict:
        return {
            "action": self.action.to_dict(),
            "beforeTreeId": self.before_tree_id,
            "afterTreeId": self.after_tree_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceStep":
        return cls(
            action=Action.from_dict(d["action"]),
            before_tree_id=d["beforeTreeId"],
            after_tree_id=d["afterTreeId"],
        )


@dataclass
class Ewtg:
    windows: dict[str, Window] = field(default_factory=dict)
    widgets: dict[str, EwtgWidget] = field(default_factory=dict)
    inputs: dict[str, Input] = field(default_factory=dict)
    window_transitions: dict[str, WindowTransition] = field(default_factory=dict)
    launcher_window_id: Optional[str] = None

    def inputs_of_window(self, window_id: str) -> list[Input]:
        return sorted(
            (i for i in self.inputs.values() if i.window_id == window_id),
            key=lambda i: i.id,
        )

    def to_dict(self) -> dict:
        return {
            "windows": [w.to_dict() for w in sorted(self.windows.values(), key=lambda w: w.id)],
            "widgets": [w.to_dict() for w in sorted(self.widgets.values(), key=lambda w: w.id)],
            "inputs": [i.to_dict() for i in sorted(self.inputs.values(), key=lambda i: i.id)],
            "windowTransitions": [
                t.to_dict() for t in sorted(self.window_transitions.values(), key=lambda t: t.id)
            ],
            "launcherWindowId": self.launcher_window_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ewtg":
        return cls(
            windows={w["id"]: Window.from_dict(w) for w in d.get("windows", [])},
            widgets={w["id"]: EwtgWidget.from_dict(w) for w in d.get("widgets", [])},
            inputs={i["id"]: Input.from_dict(i) for i in d.get("inputs", [])},
            window_transitions={
                t["id"]: WindowTransition.from_dict(t) for t in d.get("windowTransitions", [])
            },
            launcher_window_id=d.get("launcherWindowId"),
        )


@dataclass
class Dstg:
    abstract_states: dict[str, AbstractState] = field(default_factory=dict)
    abstract_transitions: dict[str, AbstractTransition] = field(default_factory=dict)
    abstraction_policy: dict[str, str] = field(default_factory=dict)  # window id -> level

    def level_for(self, window_id: str) -> str:
        return self.abstraction_policy.get(window_id, "L1")

    def states_of_window(self, window_id: str) -> list[AbstractState]:
        return sorted(
            (s for s in self.abstract_states.values() if s.window_id == window_id),
            key=lambda s: s.id,
        )

    def transitions_from(self, state_id: str) -> list[AbstractTransition]:
        return sorted(
            (t for t in self.abstract_transitions.values() if t.source_state_id == state_id),
            key=lambda t: t.id,
        )

    def transitions_to(self, state_id: str) -> list[AbstractTransition]:
        return sorted(
            (t for t in self.abstract_transitions.values() if t.destination_state_id == state_id),
            key=lambda t: t.id,
        )

    def to_dict(self) -> dict:
        return {
            "abstractStates": [
                s.to_dict() for s in sorted(self.abstract_states.values(), key=lambda s: s.id)
            ],
            "abstractTransitions": [
                t.to_dict() for t in sorted(self.abstract_transitions.values(), key=lambda t: t.id)
            ],
            "abstractionPolicy": dict(sorted(self.abstraction_policy.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dstg":
        return cls(
            abstract_states={
                s["id"]: AbstractState.from_dict(s) for s in d.get("abstractStates", [])
            },
            abstract_transitions={
                t["id"]: AbstractTransition.from_dict(t) for t in d.get("abstractTransitions", [])
            },
            abstraction_policy=dict(d.get("abstractionPolicy", {})),
        )


@dataclass
class Gstg:
    gui_trees: list[GuiTree] = field(default_factory=list)
    trace: list[TraceStep] = field(default_factory=list)

    def tree_by_id(self, tree_id: str) -> Optional[GuiTree]:
        for t in self.gui_trees:
            if t.id == tree_id:
                return t
        return None

    def to_dict(self) -> dict:
        return {
            "guiTrees": [t.to_dict() for t in self.gui_trees],
            "trace": [s.to_dict() for s in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Gstg":
        return cls(
            gui_trees=[GuiTree.from_dict(t) for t in d.get("guiTrees", [])],
            trace=[TraceStep.from_dict(s) for s in d.get("trace", [])],
        )


@dataclass
class AppModel:
    version: str
    ewtg: Ewtg = field(default_factory=Ewtg)
    dstg: Dstg = field(default_factory=Dstg)
    gstg: Gstg = field(default_factory=Gstg)
    # Added/replaced widget ids from the diff that produced this model;
    # consumed by backward-equivalence checks during the next session.
    diff_context: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "version": self.version,
            "ewtg": self.ewtg.to_dict(),
            "dstg": self.dstg.to_dict(),
            "gstg": self.gstg.to_dict(),
            "diffContext": {k: sorted(v) for k, v in sorted(self.diff_context.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AppModel":
        return cls(
            version=d["version"],
            ewtg=Ewtg.from_dict(d.get("ewtg", {})),
            dstg=Dstg.from_dict(d.get("dstg", {})),
            gstg=Gstg.from_dict(d.get("gstg", {})),
            diff_context={k: list(v) for k, v in d.get("diffContext", {}).items()},
        )


def validate_integrity(model: AppModel) -> list[str]:
    """Check cross-layer referential integrity; returns human-readable violations."""
    violations: list[str] = []
    ewtg = model.ewtg

    seen_window_ids: set[str] = set()
    for w in ewtg.windows.values():
        if w.id in seen_window_ids:
            violations.append(f"duplicate window id {w.id}")
        seen_window_ids.add(w.id)
        for wid in w.widget_ids:
            widget = ewtg.widgets.get(wid)
            if widget is None:
                violations.append(f"window {w.id} references missing widget {wid}")
            elif widget.window_id != w.id:
                violations.append(
                    f"window {w.id} lists widget {wid} that belongs to {widget.window_id}"
                )

    for widget in ewtg.widgets.values():
        if widget.window_id not in ewtg.windows:
            violations.append(f"widget {widget.id} references missing window {widget.window_id}")
        if not widget.xpath:
            violations.append(f"widget {widget.id} has empty xpath")
        if widget.parent_id is not None:
            parent = ewtg.widgets.get(widget.parent_id)
            if parent is None:
                violations.append(f"widget {widget.id} references missing parent {widget.parent_id}")
            elif parent.window_id != widget.window_id:
                violations.append(
                    f"widget {widget.id} has parent {widget.parent_id} in another window"
                )

    for inp in ewtg.inputs.values():
        if inp.window_id not in ewtg.windows:
            violations.append(f"input {inp.id} references missing window {inp.window_id}")
        if inp.widget_id is not None:
            widget = ewtg.widgets.get(inp.widget_id)
            if widget is None:
                violations.append(f"input {inp.id} references missing widget {inp.widget_id}")
            elif widget.window_id != inp.window_id:
                violations.append(f"input {inp.id} widget {inp.widget_id} is in another window")

    for wt in ewtg.window_transitions.values():
        if wt.source_window_id not in ewtg.windows:
            violations.append(f"transition {wt.id} references missing source {wt.source_window_id}")
        if wt.destination_window_id not in ewtg.windows:
            violations.append(
                f"transition {wt.id} references missing destination {wt.destination_window_id}"
            )
        inp = ewtg.inputs.get(wt.input_id)
        if inp is None:
            violations.append(f"transition {wt.id} references missing input {wt.input_id}")
        elif inp.window_id != wt.source_window_id:
            violations.append(
                f"transition {wt.id} input {wt.input_id} does not belong to its source window"
            )

    if ewtg.launcher_window_id is not None and ewtg.launcher_window_id not in ewtg.windows:
        violations.append(f"launcher window {ewtg.launcher_window_id} missing")

    dstg = model.dstg
    for state in dstg.abstract_states.values():
        if state.window_id not in ewtg.windows:
            violations.append(f"state {state.id} references missing window {state.window_id}")
        for avm in state.avms:
            if avm.cardinality < 1:
                violations.append(f"avm {avm.id} of state {state.id} has cardinality < 1")
            if avm.ewtg_widget_id is not None and avm.ewtg_widget_id not in ewtg.widgets:
                violations.append(
                    f"avm {avm.id} of state {state.id} references missing widget "
                    f"{avm.ewtg_widget_id}"
                )

    for tr in dstg.abstract_transitions.values():
        src = dstg.abstract_states.get(tr.source_state_id)
        if src is None:
            violations.append(f"abstract transition {tr.id} references missing source state "
                              f"{tr.source_state_id}")
        elif tr.source_avm_id is not None and src.avm_by_id(tr.source_avm_id) is None:
            violations.append(
                f"abstract transition {tr.id} source avm {tr.source_avm_id} not in state {src.id}"
            )
        if tr.destination_state_id not in dstg.abstract_states:
            violations.append(
                f"abstract transition {tr.id} references missing destination state "
                f"{tr.destination_state_id}"
            )

    for window_id in dstg.abstraction_policy:
        if window_id not in ewtg.windows:
            violations.append(f"abstraction policy references missing window {window_id}")

    prev_index = -1
    for tree in model.gstg.gui_trees:
        if tree.window_id not in ewtg.windows:
            violations.append(f"gui tree {tree.id} references missing window {tree.window_id}")
        if tree.abstract_state_id is not None:
            state = dstg.abstract_states.get(tree.abstract_state_id)
            if state is None:
                violations.append(
                    f"gui tree {tree.id} references missing state {tree.abstract_state_id}"
                )
            elif state.window_id != tree.window_id:
                violations.append(f"gui tree {tree.id} maps to a state of another window")
        if tree.session_index <= prev_index:
            violations.append(f"gui tree {tree.id} breaks session index ordering")
        prev_index = tree.session_index

    tree_ids = {t.id for t in model.gstg.gui_trees}
    for step in model.gstg.trace:
        if step.before_tree_id not in tree_ids or step.after_tree_id not in tree_ids:
            violations.append("trace step references a missing gui tree")

    return violations


def serialize_model(model: AppModel) -> bytes:
    """Serialize a validated model to a canonical JSON document."""
    violations = validate_integrity(model)
    if violations:
        raise ModelError("model failed integrity validation: " + "; ".join(violations))
    return json.dumps(model.to_dict(), indent=2, sort_keys=True).encode("utf-8")


def deserialize_model(data: bytes) -> AppModel:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"malformed model document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError("malformed model document: top level must be an object")
    schema = doc.get("schema_version")
    if schema != SCHEMA_VERSION:
        raise ModelError(f"unsupported schema version {schema!r}, expected {SCHEMA_VERSION}")
    if "version" not in doc:
        raise ModelError("model document missing version tag")
    model = AppModel.from_dict(doc)
    violations = validate_integrity(model)
    if violations:
        raise ModelError("model failed integrity validation: " + "; ".join(violations))
    return model


def models_equal(a: AppModel, b: AppModel) -> bool:
    """Structural equality, ignoring in-memory object identity."""
    return a.to_dict() == b.to_dict()
