"""Action-sequence planning over the merged static/learned transition graph.

Deterministic steps follow recorded abstract transitions.  Where an input was
never exercised in the current state, episode-local meta transitions are
synthesized: their destination summarizes which widgets were ever seen in the
reached window, with a presence probability per widget.  Sequence cost adds an
infeasibility penalty to probabilistic sequences so that, at equal length,
deterministic ones win.  All meta machinery lives only inside one planning
episode; the persistent model is never touched.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Union

from .abstraction import fingerprint_from_dict, fingerprint_similarity
from .model import (
    AbstractState,
    ActionType,
    AppModel,
    Input,
    Window,
    action_cost,
)

DEFAULT_META_PROBABILITY = 0.5
DEFAULT_MAX_PLAN_LENGTH = 8
LAYOUT_GUARD_THRESHOLD = 0.8


@dataclass(frozen=True)
class MetaState:
    """Episode-local summary of a window's likely widgets after an input."""

    window_id: str
    source_input_id: str
    widget_presence: tuple[tuple[str, float], ...] = ()

    def presence(self) -> dict[str, float]:
        return dict(self.widget_presence)


ExpectedState = Union[str, MetaState]  # abstract state id or a meta state


@dataclass
class PlanStep:
    input_id: str
    action_type: ActionType
    widget_id: Optional[str]
    expected: ExpectedState
    probability: float  # p(action | previous expected state)
    data_payload: Optional[str] = None
    guard: Optional[dict] = None  # serialized fingerprint of a traversed guard

    @property
    def cost(self) -> int:
        return action_cost(self.action_type)

    @property
    def is_meta(self) -> bool:
        return isinstance(self.expected, MetaState)


@dataclass
class ActionSequence:
    steps: list[PlanStep] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return "probabilistic" if any(s.is_meta for s in self.steps) else "deterministic"

    @property
    def cost_full(self) -> float:
        return float(sum(s.cost for s in self.steps))

    @property
    def cost_partial(self) -> float:
        return self.cost_full / 2.0

    @property
    def likelihood_partial(self) -> float:
        if self.kind == "deterministic":
            return 0.0
        product = 1.0
        for step in self.steps:
            product *= step.probability
        return _truncate2(1.0 - product)

    @property
    def cost(self) -> float:
        return self.cost_full + self.cost_partial * self.likelihood_partial


def sequence_cost(sequence: ActionSequence) -> float:
    return sequence.cost


def _truncate2(x: float) -> float:
    """Two-decimal truncation used when reporting partial-execution likelihood."""
    return math.floor(x * 100.0 + 1e-9) / 100.0


# --- graph access helpers ------------------------------------------------


def _input_lookup(model: AppModel) -> dict[tuple[str, Optional[str], ActionType], Input]:
    table: dict[tuple[str, Optional[str], ActionType], Input] = {}
    for inp in sorted(model.ewtg.inputs.values(), key=lambda i: i.id):
        key = (inp.window_id, inp.widget_id, inp.action_type)
        table.setdefault(key, inp)
    return table


def _transition_widget(model: AppModel, tr) -> Optional[str]:
    state = model.dstg.abstract_states.get(tr.source_state_id)
    if state is None or tr.source_avm_id is None:
        return None
    avm = state.avm_by_id(tr.source_avm_id)
    return avm.ewtg_widget_id if avm else None


def windows_reached_by_input(model: AppModel, inp: Input) -> list[str]:
    """Destination windows of recorded transitions exercising this input."""
    windows = set()
    for tr in model.dstg.abstract_transitions.values():
        src = model.dstg.abstract_states.get(tr.source_state_id)
        dst = model.dstg.abstract_states.get(tr.destination_state_id)
        if src is None or dst is None or dst.obsolete:
            continue
        if src.window_id != inp.window_id:
            continue
        if tr.action_type != inp.action_type:
            continue
        if _transition_widget(model, tr) != inp.widget_id:
            continue
        windows.add(dst.window_id)
    return sorted(windows)


def build_meta_state(model: AppModel, inp: Input, destination_window_id: str) -> MetaState:
    """Widget presence ratios over the destination window's known states."""
    states = [
        s
        for s in model.dstg.states_of_window(destination_window_id)
        if not s.obsolete
    ]
    presence: dict[str, float] = {}
    if states:
        counts: Counter = Counter()
        for state in states:
            widgets = {
                avm.ewtg_widget_id for avm in state.avms if avm.ewtg_widget_id is not None
            }
            counts.update(widgets)
        presence = {w: counts[w] / len(states) for w in sorted(counts)}
    return MetaState(
        window_id=destination_window_id,
        source_input_id=inp.id,
        widget_presence=tuple(sorted(presence.items())),
    )


# --- search --------------------------------------------------------------


@dataclass(frozen=True)
class _Edge:
    input_id: str
    action_type: ActionType
    widget_id: Optional[str]
    probability: float
    cost: int
    dest_key: tuple
    expected: ExpectedState
    guard: Optional[dict] = None
    payload: Optional[str] = None


class Planner:
    def __init__(
        self,
        model: AppModel,
        visited_layouts: Optional[list[Counter]] = None,
        default_meta_probability: float = DEFAULT_META_PROBABILITY,
        max_plan_length: int = DEFAULT_MAX_PLAN_LENGTH,
        guard_threshold: float = LAYOUT_GUARD_THRESHOLD,
    ):
        self.model = model
        self.visited_layouts = visited_layouts or []
        self.default_meta_probability = default_meta_probability
        self.max_plan_length = max_plan_length
        self.guard_threshold = guard_threshold
        self._meta_states: dict[tuple, MetaState] = {}
        self._target: Optional[Union[Window, AbstractState, Input]] = None

    # node keys: ("state", state_id) or ("meta", window_id, presence tuple)

    def _meta_node(self, meta: MetaState) -> tuple:
        key = ("meta", meta.window_id, meta.widget_presence)
        self._meta_states[key] = meta
        return key

    def _guard_satisfied(self, guard: Optional[dict]) -> bool:
        if guard is None:
            return True
        guard_fp = fingerprint_from_dict(guard)
        return any(
            fingerprint_similarity(guard_fp, fp) >= self.guard_threshold
            for fp in self.visited_layouts
        )

    def _destinations_for_input(self, inp: Input) -> list[tuple[tuple, ExpectedState]]:
        """Meta destinations for an input never exercised in the source node."""
        reached = windows_reached_by_input(self.model, inp)
        out: list[tuple[tuple, ExpectedState]] = []
        if reached:
            for window_id in reached:
                meta = build_meta_state(self.model, inp, window_id)
                out.append((self._meta_node(meta), meta))
            return out
        for wt in sorted(
            self.model.ewtg.window_transitions.values(), key=lambda t: t.id
        ):
            if wt.input_id != inp.id:
                continue
            meta = MetaState(
                window_id=wt.destination_window_id,
                source_input_id=inp.id,
                widget_presence=(),
            )
            out.append((self._meta_node(meta), meta))
        if not out and isinstance(self._target, Input) and self._target.id == inp.id:
            # destination unknown, but executing the target input is the goal
            meta = MetaState(window_id=inp.window_id, source_input_id=inp.id)
            out.append((self._meta_node(meta), meta))
        return out

    def _edges_from_state(self, state: AbstractState, at_start: bool) -> list[_Edge]:
        edges: list[_Edge] = []
        lookup = _input_lookup(self.model)
        exercised: set[tuple[Optional[str], ActionType]] = set()
        for tr in self.model.dstg.transitions_from(state.id):
            dest = self.model.dstg.abstract_states.get(tr.destination_state_id)
            if dest is None:
                continue
            widget_id = _transition_widget(self.model, tr)
            exercised.add((widget_id, tr.action_type))
            if dest.obsolete:
                continue
            if not self._guard_satisfied(tr.layout_guard):
                continue
            inp = lookup.get((state.window_id, widget_id, tr.action_type))
            input_id = inp.id if inp else f"runtime:{state.window_id}:{widget_id}:{tr.action_type.value}"
            edges.append(
                _Edge(
                    input_id=input_id,
                    action_type=tr.action_type,
                    widget_id=widget_id,
                    probability=1.0,
                    cost=action_cost(tr.action_type),
                    dest_key=("state", dest.id),
                    expected=dest.id,
                    guard=tr.layout_guard,
                    payload=tr.data_payload,
                )
            )
        present_widgets = {
            avm.ewtg_widget_id for avm in state.avms if avm.ewtg_widget_id is not None
        }
        for inp in self.model.ewtg.inputs_of_window(state.window_id):
            if inp.action_type == ActionType.RESET_APP and not at_start:
                continue
            if (inp.widget_id, inp.action_type) in exercised:
                continue
            if inp.widget_id is not None and inp.widget_id not in present_widgets:
                continue
            for dest_key, expected in self._destinations_for_input(inp):
                edges.append(
                    _Edge(
                        input_id=inp.id,
                        action_type=inp.action_type,
                        widget_id=inp.widget_id,
                        probability=1.0,
                        cost=action_cost(inp.action_type),
                        dest_key=dest_key,
                        expected=expected,
                    )
                )
        return edges

    def _edges_from_meta(self, meta: MetaState) -> list[_Edge]:
        edges: list[_Edge] = []
        presence = meta.presence()
        has_presence_data = bool(presence)
        for inp in self.model.ewtg.inputs_of_window(meta.window_id):
            if inp.action_type == ActionType.RESET_APP:
                continue
            if inp.widget_id is None:
                probability = 1.0
            elif has_presence_data:
                probability = presence.get(inp.widget_id, 0.0)
            else:
                probability = self.default_meta_probability
            if probability <= 0.0:
                continue
            for dest_key, expected in self._destinations_for_input(inp):
                edges.append(
                    _Edge(
                        input_id=inp.id,
                        action_type=inp.action_type,
                        widget_id=inp.widget_id,
                        probability=probability,
                        cost=action_cost(inp.action_type),
                        dest_key=dest_key,
                        expected=expected,
                    )
                )
        return edges

    def plan(
        self,
        current_state: AbstractState,
        target: Union[Window, AbstractState, Input],
    ) -> Optional[ActionSequence]:
        """Minimum-cost acyclic sequence from the current state to the target.

        Returns None when no sequence within the length bound reaches the
        target.  The returned cost is exact per the sequence cost model; best
        candidates are expanded first and path extension only increases cost,
        so the first completed candidate is optimal.
        """
        self._target = target
        if isinstance(target, AbstractState):
            target_state = self.model.dstg.abstract_states.get(target.id)
            if target_state is not None and target_state.obsolete:
                return None

        def node_is_goal(key: tuple) -> bool:
            if isinstance(target, AbstractState):
                return key == ("state", target.id)
            if isinstance(target, Window):
                if key[0] == "state":
                    state = self.model.dstg.abstract_states[key[1]]
                    return state.window_id == target.id
                return key[1] == target.id
            return False

        def edge_is_goal(edge: _Edge) -> bool:
            return isinstance(target, Input) and edge.input_id == target.id

        start_key = ("state", current_state.id)
        if node_is_goal(start_key):
            return ActionSequence(steps=[])

        counter = 0
        # frontier entries: cost, meta steps, tiebreak, node key, steps, cost_full, prod
        frontier: list[tuple] = []
        heapq.heappush(frontier, (0.0, 0, counter, start_key, [], 0.0, 1.0))
        # Pareto frontiers per node: lower cost_full and higher probability
        # dominate, but only when the dominating path visited no extra nodes
        # (otherwise it might forbid a suffix the dominated path still allows)
        best: dict[tuple, list[tuple[float, float, frozenset]]] = {}

        def dominated(key: tuple, cost_full: float, prod: float, visited: frozenset) -> bool:
            for cf, pr, vs in best.get(key, []):
                if cf <= cost_full and pr >= prod and vs <= visited:
                    return True
            return False

        def record(key: tuple, cost_full: float, prod: float, visited: frozenset) -> None:
            entries = best.setdefault(key, [])
            entries[:] = [
                (cf, pr, vs)
                for cf, pr, vs in entries
                if not (cost_full <= cf and prod >= pr and visited <= vs)
            ]
            entries.append((cost_full, prod, visited))

        while frontier:
            cost, meta_count, _, key, steps, cost_full, prod = heapq.heappop(frontier)
            if key == "GOAL" or node_is_goal(key):
                return ActionSequence(steps=list(steps))
            if len(steps) >= self.max_plan_length:
                continue
            visited_keys = frozenset(
                {start_key} | {self._step_key(s) for s in steps}
            )
            if dominated(key, cost_full, prod, visited_keys):
                continue
            record(key, cost_full, prod, visited_keys)

            if key[0] == "state":
                state = self.model.dstg.abstract_states[key[1]]
                edges = self._edges_from_state(state, at_start=not steps)
            else:
                edges = self._edges_from_meta(self._meta_states[key])
            for edge in edges:
                # a goal edge may revisit a node (e.g. a self-loop input)
                if not edge_is_goal(edge) and edge.dest_key in visited_keys:
                    continue
                new_cost_full = cost_full + edge.cost
                new_prod = prod * edge.probability
                likelihood = (
                    0.0 if new_prod == 1.0 else _truncate2(1.0 - new_prod)
                )
                new_cost = new_cost_full + (new_cost_full / 2.0) * likelihood
                new_steps = steps + [
                    PlanStep(
                        input_id=edge.input_id,
                        action_type=edge.action_type,
                        widget_id=edge.widget_id,
                        expected=edge.expected,
                        probability=edge.probability,
                        data_payload=edge.payload,
                        guard=edge.guard,
                    )
                ]
                new_meta_count = meta_count + (1 if isinstance(edge.expected, MetaState) else 0)
                counter += 1
                entry = (
                    new_cost,
                    new_meta_count,
                    counter,
                    edge.dest_key,
                    new_steps,
                    new_cost_full,
                    new_prod,
                )
                if edge_is_goal(edge):
                    # target input reached; candidate completes with this step
                    heapq.heappush(frontier, (new_cost, new_meta_count, counter, "GOAL", new_steps, new_cost_full, new_prod))
                    continue
                if dominated(
                    edge.dest_key, new_cost_full, new_prod, visited_keys | {edge.dest_key}
                ):
                    continue
                heapq.heappush(frontier, entry)
        return None

    @staticmethod
    def _step_key(step: PlanStep) -> tuple:
        if isinstance(step.expected, MetaState):
            return ("meta", step.expected.window_id, step.expected.widget_presence)
        return ("state", step.expected)


def plan_to_target(
    model: AppModel,
    current_state: AbstractState,
    target: Union[Window, AbstractState, Input],
    visited_layouts: Optional[list[Counter]] = None,
    default_meta_probability: float = DEFAULT_META_PROBABILITY,
    max_plan_length: int = DEFAULT_MAX_PLAN_LENGTH,
    guard_threshold: float = LAYOUT_GUARD_THRESHOLD,
) -> Optional[ActionSequence]:
    planner = Planner(
        model,
        visited_layouts=visited_layouts,
        default_meta_probability=default_meta_probability,
        max_plan_length=max_plan_length,
        guard_threshold=guard_threshold,
    )
    return planner.plan(current_state, target)
