"""The test session loop.

A session runs three phases against a driver: trigger every target input once,
re-trigger inputs whose target methods are not fully covered, and exercise
target windows after their related windows.  Every executed action lands in
the session trace; actions that strictly increase target-instruction coverage
are recorded as unique target actions for the report.  Mismatches between the
planned and observed state trigger online refinement: either the predecessor
window's abstraction is sharpened or the stale learned transition is dropped.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .abstraction import (
    LEVELS,
    LEVEL_ORDER,
    BackwardEquivalenceContext,
    derive_abstract_state,
    fingerprint_from_dict,
    fingerprint_similarity,
    fingerprint_to_dict,
    is_backward_equivalent,
    is_interactable,
    layout_fingerprint,
    make_layout_guard,
)
from .config import EngineConfig
from .harness import DriverRejection, PerformResult
from .model import (
    AbstractState,
    AbstractTransition,
    Action,
    ActionType,
    AppModel,
    EwtgWidget,
    GuiTree,
    Input,
    TraceStep,
    Window,
    WindowKind,
)
from .planner import ActionSequence, MetaState, PlanStep, plan_to_target
from .refinement import propagate_obsolescence


class EngineError(Exception):
    pass


@dataclass
class TargetSet:
    target_method_ids: set[str]
    instruction_counts: dict[str, int]

    @property
    def total_target_instructions(self) -> int:
        return sum(
            self.instruction_counts.get(m, 0) for m in self.target_method_ids
        )


@dataclass
class CoverageLedger:
    """Covered instructions per method, with one event per executed action."""

    covered: dict[str, set[int]] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)

    def record(
        self, action_index: int, ranges: list[tuple[str, int, int]], targets: TargetSet
    ) -> dict[str, set[int]]:
        newly: dict[str, set[int]] = {}
        for method_id, lo, hi in ranges:
            instructions = set(range(lo, hi + 1))
            fresh = instructions - self.covered.setdefault(method_id, set())
            self.covered[method_id] |= instructions
            if fresh and method_id in targets.target_method_ids:
                newly.setdefault(method_id, set()).update(fresh)
        self.events.append(
            {
                "actionIndex": action_index,
                "newTargetInstructions": sum(len(v) for v in newly.values()),
            }
        )
        return newly

    def covered_target_instructions(self, targets: TargetSet) -> int:
        return sum(
            len(self.covered.get(m, ())) for m in targets.target_method_ids
        )

    def covered_target_methods(self, targets: TargetSet) -> int:
        return sum(
            1 for m in targets.target_method_ids if self.covered.get(m)
        )


@dataclass
class UtaRecord:
    before_tree: GuiTree
    action: Action
    after_tree: GuiTree
    newly_covered: dict[str, list[int]]

    @property
    def newly_covered_instruction_count(self) -> int:
        return sum(len(v) for v in self.newly_covered.values())

    def to_dict(self) -> dict:
        return {
            "beforeTree": self.before_tree.to_dict(),
            "action": self.action.to_dict(),
            "afterTree": self.after_tree.to_dict(),
            "newlyCovered": {
                k: sorted(v) for k, v in sorted(self.newly_covered.items())
            },
            "newlyCoveredInstructionCount": self.newly_covered_instruction_count,
        }


@dataclass
class SessionResult:
    model: AppModel
    ledger: CoverageLedger
    utas: list[UtaRecord]
    plan_log: list[dict]
    executed_actions: int
    actions_to_first_target_coverage: Optional[int]
    observed_state_ids: set[str] = field(default_factory=set)

    def report(self, targets: TargetSet) -> dict:
        total = targets.total_target_instructions
        covered = self.ledger.covered_target_instructions(targets)
        n_methods = len(targets.target_method_ids)
        return {
            "summary": {
                "version": self.model.version,
                "executedActions": self.executed_actions,
                "utaCount": len(self.utas),
                "targetMethodCount": n_methods,
                "coveredTargetMethods": self.ledger.covered_target_methods(targets),
                "targetMethodCoverage": (
                    self.ledger.covered_target_methods(targets) / n_methods
                    if n_methods
                    else 0.0
                ),
                "totalTargetInstructions": total,
                "coveredTargetInstructions": covered,
                "targetInstructionCoverage": covered / total if total else 0.0,
                "actionsToFirstTargetCoverage": self.actions_to_first_target_coverage,
            },
            "utas": [u.to_dict() for u in self.utas],
        }


def emit_report(result: SessionResult, targets: TargetSet, out_path) -> dict:
    doc = result.report(targets)
    Path(out_path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    return doc


_NODE_ACTIONS = (
    ("clickable", ActionType.CLICK),
    ("longClickable", ActionType.LONG_CLICK),
    ("scrollable", ActionType.SWIPE),
    ("isInputField", ActionType.TEXT_FILL),
)


class TestEngine:
    __test__ = False  # not a test class despite the name

    def __init__(
        self,
        model: AppModel,
        targets: TargetSet,
        driver,
        budget: int,
        seed: int = 0,
        config: Optional[EngineConfig] = None,
        related_windows: Optional[dict[str, list[str]]] = None,
        text_pools: Optional[dict[str, list[str]]] = None,
    ):
        self.model = model
        self.targets = targets
        self.driver = driver
        self.budget = budget
        self.config = config or EngineConfig()
        self.rng = random.Random(seed)
        self.related_windows = related_windows or {}
        self.text_pools = text_pools or {}

        self.ledger = CoverageLedger()
        self.utas: list[UtaRecord] = []
        self.plan_log: list[dict] = []
        self.executed = 0
        self.first_coverage_at: Optional[int] = None

        self.current_state: Optional[AbstractState] = None
        self.current_tree: Optional[GuiTree] = None
        self.state_history: list[AbstractState] = []
        self.visited_layouts: list = []
        self.observed_this_session: set[str] = set()
        self.created_this_session: set[str] = set()
        self.retraversal_failures: dict[str, int] = {}
        self.retraversal_successes: dict[str, int] = {}
        self.triggered_inputs: set[str] = set()
        self.attempts_without_gain: dict[str, int] = {}
        self.guard_checks: list[dict] = []
        # windows already carrying obsolete states; scope for propagation
        self.obsolete_scope = {
            s.window_id for s in model.dstg.abstract_states.values() if s.obsolete
        }
        # continue numbering after inherited states so new ids never collide
        taken = re.compile(r"^(?:st|at)-(\d+)$")
        self._counter = max(
            (
                int(m.group(1))
                for key in (
                    list(model.dstg.abstract_states)
                    + list(model.dstg.abstract_transitions)
                )
                if (m := taken.match(key))
            ),
            default=0,
        )

    # -- model bookkeeping ------------------------------------------------

    def _next_id(self, prefix: str) -> str:
        self._counter += 1
        return f"{prefix}{self._counter}"

    def _ensure_window(self, result: PerformResult) -> None:
        ewtg = self.model.ewtg
        if result.window_id in ewtg.windows:
            return
        ewtg.windows[result.window_id] = Window(
            id=result.window_id,
            name=result.window_id,
            kind=result.window_kind,
            class_name=result.window_class_name,
            runtime_created=True,
        )
        back_id = f"ri-{result.window_id}-back"
        ewtg.inputs[back_id] = Input(
            id=back_id,
            window_id=result.window_id,
            action_type=ActionType.PRESS_BACK,
        )

    def _ensure_runtime_widgets(self, result: PerformResult) -> None:
        ewtg = self.model.ewtg
        window = ewtg.windows[result.window_id]
        for path, node in result.root.walk():
            ref = node.widget_ref
            if ref is None or ref in ewtg.widgets:
                continue
            xpath = "/" + "/".join(
                result.root.node_at(path[: i + 1]).properties["className"]
                for i in range(len(path))
            )
            ewtg.widgets[ref] = EwtgWidget(
                id=ref,
                window_id=result.window_id,
                class_name=node.properties["className"],
                resource_id=node.properties["resourceId"],
                content_description=node.properties["contentDescription"],
                xpath=xpath or f"/{ref}",
                runtime_created=True,
            )
            window.widget_ids.add(ref)
            for prop, action_type in _NODE_ACTIONS:
                if node.properties.get(prop):
                    input_id = f"ri-{ref}-{action_type.value}"
                    if input_id not in ewtg.inputs:
                        ewtg.inputs[input_id] = Input(
                            id=input_id,
                            window_id=result.window_id,
                            widget_id=ref,
                            action_type=action_type,
                        )

    def _observe(self, result: PerformResult) -> AbstractState:
        self._ensure_window(result)
        self._ensure_runtime_widgets(result)
        dstg = self.model.dstg
        index = len(self.model.gstg.gui_trees) + 1
        tree = GuiTree(
            id=f"t{index}",
            window_id=result.window_id,
            root=result.root,
            session_index=index,
        )
        level = LEVELS[dstg.level_for(result.window_id)]
        derived = derive_abstract_state(tree, level, state_id="observe")
        match = None
        for candidate in dstg.states_of_window(result.window_id):
            if candidate.abstraction_level != level.name:
                continue
            if candidate.valuation_multiset() == derived.valuation_multiset():
                match = candidate
                break
        if match is None:
            sid = self._next_id("st-")
            match = derive_abstract_state(tree, level, state_id=sid)
            dstg.abstract_states[sid] = match
            self.created_this_session.add(sid)
        match.observed_in_versions.add(self.model.version)
        if match.obsolete:
            match.obsolete = False
        self.observed_this_session.add(match.id)
        tree.abstract_state_id = match.id
        self.model.gstg.gui_trees.append(tree)
        self.state_history.append(match)
        self.visited_layouts.append(layout_fingerprint(match))
        self.current_state = match
        self.current_tree = tree
        return match

    def _is_closing(self, action: Action, before: AbstractState, after: AbstractState) -> bool:
        if action.action_type == ActionType.PRESS_BACK:
            return True
        source_window = self.model.ewtg.windows.get(before.window_id)
        return (
            source_window is not None
            and source_window.kind == WindowKind.DIALOG
            and after.window_id != before.window_id
        )

    def _record_transition(
        self, before: AbstractState, action: Action, widget_id: Optional[str], after: AbstractState
    ) -> AbstractTransition:
        dstg = self.model.dstg
        payload = action.data_payload if action.action_type == ActionType.TEXT_FILL else None
        avm = before.avm_for_widget(widget_id) if widget_id else None
        avm_id = avm.id if avm else None
        closing = self._is_closing(action, before, after)
        for tr in dstg.transitions_from(before.id):
            if (
                tr.source_avm_id == avm_id
                and tr.action_type == action.action_type
                and tr.data_payload == payload
            ):
                if tr.destination_state_id == after.id:
                    return tr
                # same state and input, different outcome: non-determinism.
                # Closing actions legitimately land wherever the closed screen
                # was opened from; the layout guard covers that case.
                if not closing:
                    self._refine_window(before.window_id)
        guard = None
        if closing:
            fp = make_layout_guard(after, self.state_history[:-1])
            guard = fingerprint_to_dict(fp if fp is not None else layout_fingerprint(after))
        tr = AbstractTransition(
            id=self._next_id("at-"),
            source_state_id=before.id,
            source_avm_id=avm_id,
            action_type=action.action_type,
            destination_state_id=after.id,
            data_payload=payload,
            layout_guard=guard,
            provenance_version=self.model.version,
        )
        dstg.abstract_transitions[tr.id] = tr
        return tr

    def _refine_window(self, window_id: str) -> None:
        current = self.model.dstg.level_for(window_id)
        index = LEVEL_ORDER.index(current)
        if index + 1 < len(LEVEL_ORDER):
            self.model.dstg.abstraction_policy[window_id] = LEVEL_ORDER[index + 1]
            self.plan_log.append(
                {"event": "refine", "window": window_id, "level": LEVEL_ORDER[index + 1]}
            )

    # -- execution --------------------------------------------------------

    def _budget_left(self) -> int:
        return self.budget - self.executed

    def _payload_for(self, widget_id: Optional[str]) -> str:
        pool = list(self.text_pools.get(widget_id, ())) or list(
            self.config.text_dictionary
        )
        return pool[self.rng.randrange(len(pool))]

    def _node_path_for_widget(self, widget_id: str) -> Optional[tuple[int, ...]]:
        if self.current_tree is None:
            return None
        for path, node in self.current_tree.root.walk():
            if node.widget_ref == widget_id:
                return path
        return None

    def _matched_input(
        self, window_id: str, widget_id: Optional[str], action_type: ActionType
    ) -> Optional[Input]:
        for inp in self.model.ewtg.inputs_of_window(window_id):
            if inp.widget_id == widget_id and inp.action_type == action_type:
                return inp
        return None

    def _perform(self, action: Action, widget_id: Optional[str]) -> Optional[PerformResult]:
        """Execute one action; returns None on driver rejection."""
        before_state = self.current_state
        before_tree = self.current_tree
        self.executed += 1
        try:
            result = self.driver.perform(action)
        except DriverRejection:
            self.ledger.events.append(
                {"actionIndex": self.executed, "newTargetInstructions": 0}
            )
            return None
        matched = None
        if before_state is not None:
            matched = self._matched_input(
                before_state.window_id, widget_id, action.action_type
            )
        if matched is not None:
            self.triggered_inputs.add(matched.id)
            # dynamically discovered handler methods enrich the static input
            matched.handler_method_ids.update(m for m, _, _ in result.executed)
        after_state = self._observe(result)
        newly = self.ledger.record(self.executed, result.executed, self.targets)
        if newly and self.first_coverage_at is None:
            self.first_coverage_at = self.executed
        if newly:
            self.utas.append(
                UtaRecord(
                    before_tree=before_tree,
                    action=action,
                    after_tree=self.current_tree,
                    newly_covered={k: sorted(v) for k, v in newly.items()},
                )
            )
        if matched is not None:
            if newly:
                self.attempts_without_gain[matched.id] = 0
            else:
                self.attempts_without_gain[matched.id] = (
                    self.attempts_without_gain.get(matched.id, 0) + 1
                )
        if before_state is not None and before_tree is not None:
            self._record_transition(before_state, action, widget_id, after_state)
            self.model.gstg.trace.append(
                TraceStep(
                    action=action,
                    before_tree_id=before_tree.id,
                    after_tree_id=self.current_tree.id,
                )
            )
        return result

    def _guard_holds_now(self, guard: Optional[dict]) -> bool:
        if guard is None:
            return True
        guard_fp = fingerprint_from_dict(guard)
        return any(
            fingerprint_similarity(guard_fp, fp)
            >= self.config.layout_similarity_threshold
            for fp in self.visited_layouts
        )

    def _execute_step(self, step: PlanStep) -> str:
        """Run one planned step; outcome is as-expected, backward-equivalent, or mismatch."""
        if step.guard is not None:
            satisfied = self._guard_holds_now(step.guard)
            self.guard_checks.append(
                {
                    "guard": step.guard,
                    "visitedCount": len(self.visited_layouts),
                    "satisfied": satisfied,
                }
            )
            if not satisfied:
                return "mismatch"
        path: Optional[tuple[int, ...]] = None
        if step.widget_id is not None:
            path = self._node_path_for_widget(step.widget_id)
            if path is None:
                # MetaState expectation with the required widget absent, or a
                # stale deterministic step: either way the sequence dies here.
                return "mismatch"
        payload = step.data_payload
        if step.action_type == ActionType.TEXT_FILL and payload is None:
            payload = self._payload_for(step.widget_id)
        action = Action(
            input_id=step.input_id,
            action_type=step.action_type,
            concrete_node_path=path,
            data_payload=payload,
        )
        predecessor = self.current_state
        result = self._perform(action, step.widget_id)
        if result is None:
            return "mismatch"
        observed = self.current_state

        if isinstance(step.expected, MetaState):
            return (
                "as-expected"
                if observed.window_id == step.expected.window_id
                else "mismatch"
            )

        expected_id = step.expected
        if observed.id == expected_id:
            self.retraversal_successes[expected_id] = (
                self.retraversal_successes.get(expected_id, 0) + 1
            )
            return "as-expected"
        expected = self.model.dstg.abstract_states.get(expected_id)
        self.retraversal_failures[expected_id] = (
            self.retraversal_failures.get(expected_id, 0) + 1
        )
        if expected is not None:
            context = BackwardEquivalenceContext(
                added_widget_ids=set(self.model.diff_context.get("addedWidgets", [])),
                replaced_widget_ids=set(
                    self.model.diff_context.get("replacedWidgets", [])
                ),
            )
            try:
                equivalent = is_backward_equivalent(observed, expected, context)
            except Exception:
                equivalent = False
            if equivalent:
                return "backward-equivalent"
        self._online_refine(expected_id, observed, predecessor, step)
        return "mismatch"

    def _online_refine(
        self,
        expected_id: str,
        observed: AbstractState,
        predecessor: Optional[AbstractState],
        step: PlanStep,
    ) -> None:
        expected = self.model.dstg.abstract_states.get(expected_id)
        seen_this_version = expected is not None and (
            self.model.version in expected.observed_in_versions
        )
        if seen_this_version:
            if predecessor is not None:
                self._refine_window(predecessor.window_id)
            return
        # the expectation came from a past version and never materialized:
        # the learned edge is stale
        if predecessor is None:
            return
        dstg = self.model.dstg
        avm = predecessor.avm_for_widget(step.widget_id) if step.widget_id else None
        avm_id = avm.id if avm else None
        for tr in dstg.transitions_from(predecessor.id):
            if (
                tr.destination_state_id == expected_id
                and tr.action_type == step.action_type
                and tr.source_avm_id == avm_id
            ):
                del dstg.abstract_transitions[tr.id]

    # -- exploration ------------------------------------------------------

    def random_explore(self, budget_slice: int) -> None:
        for _ in range(max(0, min(budget_slice, self._budget_left()))):
            if self.current_tree is None:
                break
            candidates: list[tuple[tuple[int, ...], Optional[str], ActionType]] = []
            for path, node in self.current_tree.root.walk():
                if not is_interactable(node):
                    continue
                if node.bounds_hint and node.bounds_hint.get("tiny"):
                    continue
                for prop, action_type in _NODE_ACTIONS:
                    if node.properties.get(prop):
                        candidates.append((path, node.widget_ref, action_type))
            if candidates:
                path, widget_id, action_type = candidates[
                    self.rng.randrange(len(candidates))
                ]
                payload = (
                    self._payload_for(widget_id)
                    if action_type == ActionType.TEXT_FILL
                    else None
                )
                action = Action(
                    input_id=f"explore-{self.executed + 1}",
                    action_type=action_type,
                    concrete_node_path=path,
                    data_payload=payload,
                )
                self._perform(action, widget_id)
            else:
                action = Action(
                    input_id=f"explore-{self.executed + 1}",
                    action_type=ActionType.PRESS_BACK,
                )
                self._perform(action, None)

    # -- phases -----------------------------------------------------------

    def _target_inputs(self) -> list[Input]:
        return sorted(
            (
                i
                for i in self.model.ewtg.inputs.values()
                if i.handler_method_ids & self.targets.target_method_ids
            ),
            key=lambda i: i.id,
        )

    def _fully_covered(self, inp: Input) -> bool:
        for method_id in sorted(inp.handler_method_ids & self.targets.target_method_ids):
            total = self.targets.instruction_counts.get(method_id, 0)
            if len(self.ledger.covered.get(method_id, ())) < total:
                return False
        return True

    def _pursue_input(self, inp: Input, phase: int) -> int:
        start = self.executed
        sequence = plan_to_target(
            self.model,
            self.current_state,
            inp,
            visited_layouts=self.visited_layouts,
            default_meta_probability=self.config.default_meta_probability,
            max_plan_length=self.config.max_plan_length,
            guard_threshold=self.config.layout_similarity_threshold,
        )
        self._log_plan(phase, inp.id, sequence)
        if sequence is None:
            self.random_explore(min(5, self._budget_left()))
            return self.executed - start
        for step in sequence.steps:
            if self._budget_left() <= 0:
                break
            outcome = self._execute_step(step)
            self.plan_log[-1]["outcomes"].append(outcome)
            if outcome == "mismatch":
                break
        return self.executed - start

    def _log_plan(self, phase: int, target: str, sequence: Optional[ActionSequence]) -> None:
        entry: dict = {"event": "plan", "phase": phase, "target": target}
        if sequence is None:
            entry["steps"] = None
        else:
            entry["steps"] = [
                {
                    "inputId": s.input_id,
                    "actionType": s.action_type.value,
                    "widgetId": s.widget_id,
                    "expected": (
                        s.expected
                        if isinstance(s.expected, str)
                        else {"metaWindow": s.expected.window_id}
                    ),
                    "guarded": s.guard is not None,
                }
                for s in sequence.steps
            ]
            entry["cost"] = sequence.cost
        entry["outcomes"] = []
        self.plan_log.append(entry)

    def _visit_window(self, window_id: str, phase: int) -> None:
        window = self.model.ewtg.windows.get(window_id)
        if window is None or self.current_state is None:
            return
        if self.current_state.window_id == window_id:
            return
        sequence = plan_to_target(
            self.model,
            self.current_state,
            window,
            visited_layouts=self.visited_layouts,
            default_meta_probability=self.config.default_meta_probability,
            max_plan_length=self.config.max_plan_length,
            guard_threshold=self.config.layout_similarity_threshold,
        )
        self._log_plan(phase, f"window:{window_id}", sequence)
        if sequence is None:
            return
        for step in sequence.steps:
            if self._budget_left() <= 0:
                break
            outcome = self._execute_step(step)
            self.plan_log[-1]["outcomes"].append(outcome)
            if outcome == "mismatch":
                break

    def _run_phase(self, phase: int, cap: int, pending_fn) -> None:
        used_at_start = self.executed
        pursuits: dict[str, int] = {}
        while self._budget_left() > 0 and self.executed - used_at_start < cap:
            pending = [
                i
                for i in pending_fn()
                if pursuits.get(i.id, 0) < self.config.retrigger_cap
            ]
            if not pending:
                break
            progressed = False
            for inp in pending:
                if self._budget_left() <= 0 or self.executed - used_at_start >= cap:
                    break
                pursuits[inp.id] = pursuits.get(inp.id, 0) + 1
                if phase == 3:
                    for related_id in self.related_windows.get(inp.window_id, []):
                        self._visit_window(related_id, phase)
                consumed = self._pursue_input(inp, phase)
                if consumed > 0:
                    progressed = True
            if not progressed:
                break

    def run_session(self) -> SessionResult:
        if self.budget > 0:
            self._observe(self.driver.reset())
            caps = [max(1, int(self.budget * c)) for c in self.config.phase_caps]

            def phase1_pending():
                return [
                    i for i in self._target_inputs() if i.id not in self.triggered_inputs
                ]

            def phase2_pending():
                return [
                    i
                    for i in self._target_inputs()
                    if not self._fully_covered(i)
                    and self.attempts_without_gain.get(i.id, 0)
                    < self.config.retrigger_cap
                ]

            self._run_phase(1, caps[0], phase1_pending)
            self._run_phase(2, caps[1], phase2_pending)
            self._run_phase(3, caps[2], phase2_pending)
            # residual budget goes to free exploration
            self.random_explore(self._budget_left())

            observations = {
                "created": sorted(self.created_this_session),
                "retraversal_failures": dict(self.retraversal_failures),
                "retraversal_successes": dict(self.retraversal_successes),
            }
            propagate_obsolescence(
                self.model, observations, scope_window_ids=self.obsolete_scope or None
            )
        return SessionResult(
            model=self.model,
            ledger=self.ledger,
            utas=self.utas,
            plan_log=self.plan_log,
            executed_actions=self.executed,
            actions_to_first_target_coverage=self.first_coverage_at,
            observed_state_ids=set(self.observed_this_session),
        )


def run_session(
    model: AppModel,
    targets: TargetSet,
    driver,
    budget: int,
    seed: int = 0,
    config: Optional[EngineConfig] = None,
    related_windows: Optional[dict[str, list[str]]] = None,
    text_pools: Optional[dict[str, list[str]]] = None,
) -> SessionResult:
    engine = TestEngine(
        model,
        targets,
        driver,
        budget,
        seed=seed,
        config=config,
        related_windows=related_windows,
        text_pools=text_pools,
    )
    return engine.run_session()
