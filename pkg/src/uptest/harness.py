"""Deterministic simulated app platform.

Apps are declared as versioned JSON documents: windows with widgets, inputs
wired to guarded-command handlers over named state variables, and optional
per-launch content generators.  A driver session renders GUI trees, executes
handlers with per-instruction-range coverage reporting, and is fully
deterministic given (spec, seed, action sequence).  The same documents also
yield the static window graph and the per-version updated-method manifest.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .model import (
    Action,
    ActionType,
    Ewtg,
    EwtgWidget,
    GuiNode,
    Input,
    Window,
    WindowKind,
    WindowTransition,
)


class SpecError(Exception):
    pass


class DriverRejection(Exception):
    """Action on a hidden, absent, or non-interactable node."""


_WIDGET_BOOL_PROPS = (
    "password",
    "clickable",
    "longClickable",
    "scrollable",
    "checked",
    "enabled",
    "selected",
    "isInputField",
)


@dataclass
class WidgetSpec:
    id: str
    resource_id: str
    class_name: str
    xpath: str
    content_description: str = ""
    parent: Optional[str] = None
    text: str = ""
    visible: bool = True
    dynamic_only: bool = False
    tiny: bool = False
    properties: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "WidgetSpec":
        props = {p: bool(d.get(p, p == "enabled")) for p in _WIDGET_BOOL_PROPS}
        return cls(
            id=d["id"],
            resource_id=d.get("resourceId", d["id"]),
            class_name=d.get("className", "View"),
            xpath=d.get("xpath", f"/{d.get('resourceId', d['id'])}"),
            content_description=d.get("contentDescription", ""),
            parent=d.get("parent"),
            text=d.get("text", ""),
            visible=d.get("visible", True),
            dynamic_only=d.get("dynamicOnly", False),
            tiny=d.get("tiny", False),
            properties=props,
        )


@dataclass
class WindowSpec:
    id: str
    name: str
    kind: WindowKind
    class_name: str
    launcher: bool = False
    dynamic_only: bool = False
    widgets: dict[str, WidgetSpec] = field(default_factory=dict)
    widget_order: list[str] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSpec":
        widgets = {}
        order = []
        for wd in d.get("widgets", []):
            spec = WidgetSpec.from_dict(wd)
            if spec.id in widgets:
                raise SpecError(f"duplicate widget id {spec.id}")
            widgets[spec.id] = spec
            order.append(spec.id)
        return cls(
            id=d["id"],
            name=d.get("name", d["id"]),
            kind=WindowKind(d.get("kind", "Activity")),
            class_name=d.get("className", d.get("name", d["id"])),
            launcher=d.get("launcher", False),
            dynamic_only=d.get("dynamicOnly", False),
            widgets=widgets,
            widget_order=order,
        )


@dataclass
class InputSpec:
    id: str
    window: str
    action_type: ActionType
    widget: Optional[str] = None
    handler: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "InputSpec":
        return cls(
            id=d["id"],
            window=d["window"],
            action_type=ActionType(d["actionType"]),
            widget=d.get("widget"),
            handler=d.get("handler"),
        )


@dataclass
class CommandSpec:
    guard: list[dict]
    effects: list[dict]
    instructions: tuple[int, int]
    hidden: bool = False  # window navigation invisible to static analysis

    @classmethod
    def from_dict(cls, d: dict) -> "CommandSpec":
        instructions = tuple(d.get("instructions", (0, 0)))
        return cls(
            guard=list(d.get("guard", [])),
            effects=list(d.get("effects", [])),
            instructions=(int(instructions[0]), int(instructions[1])),
            hidden=d.get("hidden", False),
        )


@dataclass
class HandlerSpec:
    method_id: str
    instruction_count: int
    body: list[CommandSpec]

    @classmethod
    def from_dict(cls, d: dict) -> "HandlerSpec":
        return cls(
            method_id=d["methodId"],
            instruction_count=int(d["instructionCount"]),
            body=[CommandSpec.from_dict(c) for c in d.get("body", [])],
        )

    def canonical(self) -> str:
        return json.dumps(
            {
                "methodId": self.method_id,
                "instructionCount": self.instruction_count,
                "body": [
                    {
                        "guard": c.guard,
                        "effects": c.effects,
                        "instructions": list(c.instructions),
                        "hidden": c.hidden,
                    }
                    for c in self.body
                ],
            },
            sort_keys=True,
        )


@dataclass
class VariableSpec:
    name: str
    type: str
    initial: Any
    persistent: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "VariableSpec":
        return cls(
            name=d["name"],
            type=d.get("type", "int"),
            initial=d.get("initial", 0),
            persistent=d.get("persistent", False),
        )


@dataclass
class GeneratorSpec:
    pool: list[Any]
    widget: Optional[str] = None
    var: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(pool=list(d["pool"]), widget=d.get("widget"), var=d.get("var"))


@dataclass
class VersionSpec:
    version: str
    windows: dict[str, WindowSpec]
    window_order: list[str]
    inputs: dict[str, InputSpec]
    handlers: dict[str, HandlerSpec]
    variables: dict[str, VariableSpec]
    related_windows: dict[str, list[str]] = field(default_factory=dict)
    generators: list[GeneratorSpec] = field(default_factory=list)
    text_inputs: dict[str, list[str]] = field(default_factory=dict)

    @property
    def launcher_window(self) -> WindowSpec:
        for wid in self.window_order:
            if self.windows[wid].launcher:
                return self.windows[wid]
        raise SpecError("no launcher window")

    def widget_window(self, widget_id: str) -> Optional[WindowSpec]:
        for window in self.windows.values():
            if widget_id in window.widgets:
                return window
        return None

    def methods(self) -> dict[str, HandlerSpec]:
        return {h.method_id: h for h in self.handlers.values()}

    @classmethod
    def from_dict(cls, d: dict) -> "VersionSpec":
        windows = {}
        order = []
        for wd in d.get("windows", []):
            spec = WindowSpec.from_dict(wd)
            if spec.id in windows:
                raise SpecError(f"duplicate window id {spec.id}")
            windows[spec.id] = spec
            order.append(spec.id)
        inputs = {}
        for idd in d.get("inputs", []):
            spec = InputSpec.from_dict(idd)
            if spec.id in inputs:
                raise SpecError(f"duplicate input id {spec.id}")
            inputs[spec.id] = spec
        return cls(
            version=d["version"],
            windows=windows,
            window_order=order,
            inputs=inputs,
            handlers={k: HandlerSpec.from_dict(v) for k, v in d.get("handlers", {}).items()},
            variables={
                v["name"]: VariableSpec.from_dict(v) for v in d.get("stateVariables", [])
            },
            related_windows={k: list(v) for k, v in d.get("relatedWindows", {}).items()},
            generators=[GeneratorSpec.from_dict(g) for g in d.get("generators", [])],
            text_inputs={k: list(v) for k, v in d.get("textInputs", {}).items()},
        )


@dataclass
class AppSpec:
    app_id: str
    versions: list[VersionSpec]

    def version_index(self, version: str) -> int:
        for i, v in enumerate(self.versions):
            if v.version == version:
                return i
        raise SpecError(f"unknown version {version!r}")


def _validate_version(v: VersionSpec) -> None:
    launchers = [w for w in v.windows.values() if w.launcher]
    if len(launchers) != 1:
        raise SpecError(
            f"version {v.version}: expected exactly one launcher window, found {len(launchers)}"
        )
    if launchers[0].dynamic_only:
        raise SpecError(f"version {v.version}: launcher window cannot be dynamic-only")
    for window in v.windows.values():
        for widget in window.widgets.values():
            if widget.parent is not None and widget.parent not in window.widgets:
                raise SpecError(
                    f"widget {widget.id} references unknown parent {widget.parent}"
                )
    for inp in v.inputs.values():
        if inp.window not in v.windows:
            raise SpecError(f"input {inp.id} references unknown window {inp.window}")
        if inp.widget is not None and inp.widget not in v.windows[inp.window].widgets:
            raise SpecError(f"input {inp.id} references unknown widget {inp.widget}")
        if inp.handler is not None and inp.handler not in v.handlers:
            raise SpecError(f"input {inp.id} references unknown handler {inp.handler}")
    for key, handler in v.handlers.items():
        if handler.instruction_count < 1:
            raise SpecError(f"handler {key} must declare a positive instruction count")
        for cmd in handler.body:
            lo, hi = cmd.instructions
            if not (1 <= lo <= hi <= handler.instruction_count):
                raise SpecError(
                    f"handler {key} command instruction range {cmd.instructions} "
                    f"outside [1, {handler.instruction_count}]"
                )
            for cond in cmd.guard:
                if cond.get("var") not in v.variables:
                    raise SpecError(f"handler {key} guard references unknown variable")
            for effect in cmd.effects:
                for var_key in ("set", "inc"):
                    if var_key in effect and effect[var_key].get("var") not in v.variables:
                        raise SpecError(f"handler {key} effect references unknown variable")
                if "goto" in effect and effect["goto"] not in v.windows:
                    raise SpecError(f"handler {key} goto references unknown window")
    for gen in v.generators:
        if not gen.pool:
            raise SpecError("generator pool must be non-empty")
        if gen.widget is not None and v.widget_window(gen.widget) is None:
            raise SpecError(f"generator references unknown widget {gen.widget}")
        if gen.var is not None and gen.var not in v.variables:
            raise SpecError(f"generator references unknown variable {gen.var}")


def load_spec(source: Union[str, Path, bytes, dict]) -> AppSpec:
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, bytes):
        doc = json.loads(source.decode("utf-8"))
    else:
        doc = json.loads(Path(source).read_text("utf-8"))
    if "appId" not in doc or "versions" not in doc:
        raise SpecError("app spec must declare appId and versions")
    versions = [VersionSpec.from_dict(v) for v in doc["versions"]]
    if not versions:
        raise SpecError("app spec declares no versions")
    for v in versions:
        if not v.windows:
            raise SpecError(f"version {v.version} declares no windows")
        _validate_version(v)
    return AppSpec(app_id=doc["appId"], versions=versions)


# --- static export -------------------------------------------------------


def export_ewtg(spec: AppSpec, version: str) -> Ewtg:
    """Static model of one version, blind to dynamic-only elements."""
    v = spec.versions[spec.version_index(version)]
    ewtg = Ewtg()
    for wid in v.window_order:
        window = v.windows[wid]
        if window.dynamic_only:
            continue
        exported_widgets = {
            w.id for w in window.widgets.values() if not w.dynamic_only
        }
        ewtg.windows[window.id] = Window(
            id=window.id,
            name=window.name,
            kind=window.kind,
            class_name=window.class_name,
            widget_ids=set(exported_widgets),
        )
        if window.launcher:
            ewtg.launcher_window_id = window.id
        for widget_id in window.widget_order:
            widget = window.widgets[widget_id]
            if widget.dynamic_only:
                continue
            parent = widget.parent
            if parent is not None and window.widgets[parent].dynamic_only:
                parent = None
            ewtg.widgets[widget.id] = EwtgWidget(
                id=widget.id,
                window_id=window.id,
                class_name=widget.class_name,
                resource_id=widget.resource_id,
                content_description=widget.content_description,
                xpath=widget.xpath,
                parent_id=parent,
            )
    for inp in sorted(v.inputs.values(), key=lambda i: i.id):
        if inp.window not in ewtg.windows:
            continue
        if inp.widget is not None and inp.widget not in ewtg.widgets:
            continue
        methods = set()
        if inp.handler is not None:
            methods.add(v.handlers[inp.handler].method_id)
        ewtg.inputs[inp.id] = Input(
            id=inp.id,
            window_id=inp.window,
            widget_id=inp.widget,
            action_type=inp.action_type,
            handler_method_ids=methods,
        )
        if inp.handler is not None:
            for ci, cmd in enumerate(v.handlers[inp.handler].body):
                if cmd.hidden:
                    continue
                for effect in cmd.effects:
                    dest = effect.get("goto")
                    if dest is None or dest not in ewtg.windows:
                        continue
                    tid = f"wt-{inp.id}-{ci}-{dest}"
                    ewtg.window_transitions[tid] = WindowTransition(
                        id=tid,
                        source_window_id=inp.window,
                        destination_window_id=dest,
                        input_id=inp.id,
                    )
    return ewtg


def updated_methods(spec: AppSpec, version: str) -> set[str]:
    """Methods new or changed relative to the previous version (all, for the first)."""
    index = spec.version_index(version)
    current = spec.versions[index].methods()
    if index == 0:
        return set(current)
    previous = spec.versions[index - 1].methods()
    changed = set()
    for method_id, handler in current.items():
        old = previous.get(method_id)
        if old is None or old.canonical() != handler.canonical():
            changed.add(method_id)
    return changed


def method_instruction_counts(spec: AppSpec, version: str) -> dict[str, int]:
    v = spec.versions[spec.version_index(version)]
    return {h.method_id: h.instruction_count for h in v.handlers.values()}


def target_manifest(spec: AppSpec) -> dict:
    return {
        "appId": spec.app_id,
        "versions": [
            {
                "version": v.version,
                "updatedMethodIds": sorted(updated_methods(spec, v.version)),
                "instructionCounts": dict(
                    sorted(method_instruction_counts(spec, v.version).items())
                ),
            }
            for v in spec.versions
        ],
    }


# --- driver --------------------------------------------------------------


@dataclass
class PerformResult:
    window_id: str
    window_kind: WindowKind
    window_class_name: str
    root: GuiNode
    executed: list[tuple[str, int, int]]  # (method id, range lo, range hi)


class DriverSession:
    """One app run; deterministic given (spec, version, seed, actions)."""

    def __init__(self, spec: AppSpec, version: str, seed: int = 0):
        self.spec = spec
        self.version_spec = spec.versions[spec.version_index(version)]
        self.seed = seed
        self.launch_counter = 0
        self.variables: dict[str, Any] = {}
        self.window_stack: list[str] = []
        # per-widget runtime overrides
        self._visible: dict[str, bool] = {}
        self._text: dict[str, str] = {}
        self._checked: dict[str, bool] = {}
        self.reset()

    # -- state management

    def reset(self) -> PerformResult:
        persistent = {
            name: self.variables[name]
            for name, var in self.version_spec.variables.items()
            if var.persistent and name in self.variables
        }
        self.variables = {
            name: var.initial for name, var in self.version_spec.variables.items()
        }
        self.variables.update(persistent)
        self._visible = {}
        self._text = {}
        self._checked = {}
        self.window_stack = [self.version_spec.launcher_window.id]
        self.launch_counter += 1
        self._apply_generators()
        return self._result([])

    def _result(self, executed: list[tuple[str, int, int]]) -> PerformResult:
        window = self.version_spec.windows[self.current_window_id]
        return PerformResult(
            window.id, window.kind, window.class_name, self.render(), executed
        )

    def _apply_generators(self) -> None:
        for gi, gen in enumerate(self.version_spec.generators):
            rng = random.Random(f"{self.seed}:{self.launch_counter}:{gi}")
            index = rng.randrange(len(gen.pool))
            if gen.widget is not None:
                self._text[gen.widget] = str(gen.pool[index])
            if gen.var is not None:
                self.variables[gen.var] = index

    @property
    def current_window_id(self) -> str:
        return self.window_stack[-1]

    def widget_visible(self, widget: WidgetSpec) -> bool:
        return self._visible.get(widget.id, widget.visible)

    def widget_text(self, widget: WidgetSpec) -> str:
        return self._text.get(widget.id, widget.text)

    def widget_checked(self, widget: WidgetSpec) -> bool:
        return self._checked.get(widget.id, widget.properties["checked"])

    # -- rendering

    def render(self) -> GuiNode:
        window = self.version_spec.windows[self.current_window_id]
        visible = [
            window.widgets[wid]
            for wid in window.widget_order
            if self.widget_visible(window.widgets[wid])
        ]
        visible_ids = {w.id for w in visible}
        children_of: dict[Optional[str], list[WidgetSpec]] = {}
        for widget in visible:
            parent = widget.parent if widget.parent in visible_ids else None
            children_of.setdefault(parent, []).append(widget)

        def build(widget: WidgetSpec) -> GuiNode:
            kids = [build(c) for c in children_of.get(widget.id, [])]
            props = {
                "resourceId": widget.resource_id,
                "className": widget.class_name,
                "contentDescription": widget.content_description,
                "text": self.widget_text(widget),
                "checked": self.widget_checked(widget),
                "hasChildren": bool(kids),
            }
            for p in _WIDGET_BOOL_PROPS:
                if p == "checked":
                    continue
                props[p] = widget.properties[p]
            return GuiNode(
                properties=props,
                children=kids,
                bounds_hint={"tiny": True} if widget.tiny else None,
                widget_ref=widget.id,
            )

        root_props = {
            "resourceId": window.name,
            "className": window.class_name,
            "contentDescription": "",
            "text": "",
            "password": False,
            "clickable": False,
            "longClickable": False,
            "scrollable": False,
            "checked": False,
            "enabled": True,
            "selected": False,
            "isInputField": False,
            "hasChildren": bool(children_of.get(None)),
        }
        return GuiNode(
            properties=root_props,
            children=[build(w) for w in children_of.get(None, [])],
            widget_ref=None,
        )

    # -- execution

    _ACTION_PROPERTY = {
        ActionType.CLICK: "clickable",
        ActionType.LONG_CLICK: "longClickable",
        ActionType.ITEM_CLICK: "clickable",
        ActionType.ITEM_LONG_CLICK: "longClickable",
        ActionType.SWIPE: "scrollable",
        ActionType.TEXT_FILL: "isInputField",
    }

    def _find_input(self, widget_id: Optional[str], action_type: ActionType) -> Optional[InputSpec]:
        for inp in sorted(self.version_spec.inputs.values(), key=lambda i: i.id):
            if (
                inp.window == self.current_window_id
                and inp.widget == widget_id
                and inp.action_type == action_type
            ):
                return inp
        return None

    def perform(self, action: Action) -> PerformResult:
        if action.action_type == ActionType.RESET_APP:
            return self.reset()

        window = self.version_spec.windows[self.current_window_id]
        widget_id: Optional[str] = None
        if action.concrete_node_path is not None:
            root = self.render()
            try:
                node = root.node_at(action.concrete_node_path)
            except IndexError:
                raise DriverRejection("node path no longer resolves")
            widget_id = node.widget_ref
            if widget_id is None:
                raise DriverRejection("window root is not interactable")
            widget = window.widgets[widget_id]
            if not self.widget_visible(widget) or not widget.properties["enabled"]:
                raise DriverRejection(f"widget {widget_id} is not interactable")
            required = self._ACTION_PROPERTY.get(action.action_type)
            if required is not None and not widget.properties[required]:
                raise DriverRejection(
                    f"widget {widget_id} does not support {action.action_type.value}"
                )
            if widget.tiny:
                raise DriverRejection(f"widget {widget_id} is below the size hint")

        if action.action_type == ActionType.TEXT_FILL and widget_id is not None:
            # typing fills the field; a handler (if any) reacts afterwards
            self._text[widget_id] = action.data_payload or ""

        inp = self._find_input(widget_id, action.action_type)
        executed: list[tuple[str, int, int]] = []
        if inp is not None and inp.handler is not None:
            handler = self.version_spec.handlers[inp.handler]
            for cmd in handler.body:
                if self._guard_holds(cmd.guard):
                    self._apply_effects(cmd.effects, action, widget_id)
                    if cmd.instructions != (0, 0):
                        executed.append(
                            (handler.method_id, cmd.instructions[0], cmd.instructions[1])
                        )
                    break
        elif inp is None and action.action_type == ActionType.PRESS_BACK:
            self._go_back()

        return self._result(executed)

    def _guard_holds(self, guard: list[dict]) -> bool:
        for cond in guard:
            value = self.variables.get(cond["var"])
            op = cond.get("op", "==")
            ref = cond.get("value")
            if op == "==" and not value == ref:
                return False
            if op == "!=" and not value != ref:
                return False
            if op == "<" and not value < ref:
                return False
            if op == "<=" and not value <= ref:
                return False
            if op == ">" and not value > ref:
                return False
            if op == ">=" and not value >= ref:
                return False
        return True

    def _go_back(self) -> bool:
        if len(self.window_stack) > 1:
            self.window_stack.pop()
            return True
        return False

    def _apply_effects(
        self, effects: list[dict], action: Action, widget_id: Optional[str]
    ) -> bool:
        navigated = False
        for effect in effects:
            if "set" in effect:
                self.variables[effect["set"]["var"]] = effect["set"]["value"]
            if "inc" in effect:
                var = effect["inc"]["var"]
                self.variables[var] = self.variables.get(var, 0) + effect["inc"].get("by", 1)
            if "show" in effect:
                self._visible[effect["show"]] = True
            if "hide" in effect:
                self._visible[effect["hide"]] = False
            if "setText" in effect:
                self._text[effect["setText"]["widget"]] = str(effect["setText"]["value"])
            if "setTextFromPayload" in effect:
                self._text[effect["setTextFromPayload"]] = action.data_payload or ""
            if "setVarFromPayload" in effect:
                self.variables[effect["setVarFromPayload"]] = action.data_payload or ""
            if "setChecked" in effect:
                self._checked[effect["setChecked"]["widget"]] = bool(
                    effect["setChecked"]["value"]
                )
            if "toggle" in effect:
                widget = self.version_spec.widget_window(effect["toggle"]).widgets[
                    effect["toggle"]
                ]
                self._checked[effect["toggle"]] = not self.widget_checked(widget)
            if "goto" in effect:
                self.window_stack.append(effect["goto"])
                navigated = True
            if "back" in effect:
                navigated = self._go_back() or navigated
        return navigated
