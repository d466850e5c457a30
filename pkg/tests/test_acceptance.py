"""Acceptance criteria A1-A10.

Each test prints one "<criterion>: PASS" or "<criterion>: FAIL" line
(run pytest with -s or check the captured output section on failure).
"""

import copy
import json
import random
import time
from contextlib import contextmanager

import pytest

from uptest.abstraction import (
    BackwardEquivalenceContext,
    fingerprint_from_dict,
    fingerprint_to_dict,
    is_backward_equivalent,
    layout_fingerprint,
)
from uptest.adaptation import adapt_model
from uptest.config import EngineConfig
from uptest.cli import pipeline_run
from uptest.diff import diff_ewtg
from uptest.engine import TargetSet, TestEngine, run_session
from uptest.harness import (
    DriverSession,
    export_ewtg,
    load_spec,
    method_instruction_counts,
    updated_methods,
)
from uptest.model import (
    AbstractState,
    AbstractTransition,
    ActionType,
    AppModel,
    AttributeValuationMap,
    Dstg,
    deserialize_model,
    serialize_model,
)
from uptest.planner import PlanStep, plan_to_target, sequence_cost
from uptest.refinement import prune_unvisited, replay_flag_obsolete

from uptest import fixture_path
from planner_oracle import exhaustive_min_cost, random_model
from test_planner import (
    deterministic_sequence,
    probabilistic_sequence,
    route_choice_model,
)


@contextmanager
def criterion(name):
    """Print one pass/fail line per acceptance criterion."""
    try:
        yield
    except BaseException:
        print(f"{name}: FAIL")
        raise
    print(f"{name}: PASS")


class ExplodingDriver:
    """A driver that must never be touched."""

    def reset(self):
        raise AssertionError("driver must not be touched")

    def perform(self, action):
        raise AssertionError("driver must not be touched")


def test_a1_cost_model_reproduction():
    with criterion("A1 cost-model reproduction"):
        start_time = time.perf_counter()
        assert sequence_cost(probabilistic_sequence()) == pytest.approx(3.99, abs=1e-9)
        assert sequence_cost(deterministic_sequence()) == pytest.approx(5.0, abs=1e-9)
        model = route_choice_model()
        seq = plan_to_target(
            model, model.dstg.abstract_states["s9"], model.ewtg.inputs["i3"]
        )
        assert seq is not None
        assert [s.input_id for s in seq.steps] == ["i1", "i2", "i3"]
        assert sequence_cost(seq) == pytest.approx(3.99, abs=1e-9)
        assert time.perf_counter() - start_time < 1.0


def test_a2_diff_reproduction():
    with criterion("A2 diff reproduction"):
        start_time = time.perf_counter()
        spec = load_spec(fixture_path("diary"))
        base = export_ewtg(spec, "v0")
        updated = export_ewtg(spec, "v1")
        diff = diff_ewtg(base, updated)
        # w3 = addNewItem Button, w8 = addNewItem ImageView,
        # w7 = createdTime, w9 = cancel
        assert base.widgets["w3"].resource_id == "addNewItem"
        assert base.widgets["w3"].class_name == "Button"
        assert updated.widgets["w8"].resource_id == "addNewItem"
        assert updated.widgets["w8"].class_name == "ImageView"
        assert base.widgets["w7"].resource_id == "createdTime"
        assert updated.widgets["w9"].resource_id == "cancel"
        assert json.loads(diff.to_json()) == {
            "addedTransitions": ["wt-i-cancel-0-home"],
            "addedWidgets": ["w9"],
            "addedWindows": [],
            "deletedTransitions": [],
            "deletedWidgets": ["w7"],
            "deletedWindows": [],
            "matchedTransitions": {"wt-i-add-0-edit": "wt-i-add-0-edit"},
            "matchedWidgets": {"w10": "w10", "w6": "w6"},
            "matchedWindows": {"edit": "edit"},
            "replacedTransitions": {},
            "replacedWidgets": {"w3": "w8"},
            "replacedWindows": {"main": "home"},
        }
        # the added transition is triggered by the cancel widget's input
        wt = updated.window_transitions["wt-i-cancel-0-home"]
        assert updated.inputs[wt.input_id].widget_id == "w9"
        for version, ewtg in (("v0", base), ("v1", updated)):
            assert diff_ewtg(ewtg, export_ewtg(spec, version)).is_empty()
        assert time.perf_counter() - start_time < 1.0


def _avm(avm_id, widget_id, rid):
    return AttributeValuationMap(
        id=avm_id, valuations={"R_RID": rid}, ewtg_widget_id=widget_id
    )


def diary_base_model() -> AppModel:
    """Learned model of the diary app's first version (two states, one edge)."""
    spec = load_spec(fixture_path("diary"))
    ewtg = export_ewtg(spec, "v0")
    dstg = Dstg(abstraction_policy={"main": "L1"})
    dstg.abstract_states["s1"] = AbstractState(
        id="s1", window_id="main",
        avms=[_avm("avm2", "w3", "add")],
        observed_in_versions={"v0"},
    )
    dstg.abstract_states["s2"] = AbstractState(
        id="s2", window_id="edit",
        avms=[
            _avm("avm4", "w6", "name"),
            _avm("avm5", "w7", "created"),
            _avm("avm6", "w10", "ok"),
        ],
        observed_in_versions={"v0"},
    )
    dstg.abstract_transitions["at1"] = AbstractTransition(
        id="at1", source_state_id="s1", source_avm_id="avm2",
        action_type=ActionType.CLICK, destination_state_id="s2",
        provenance_version="v0",
    )
    return AppModel(version="v0", ewtg=ewtg, dstg=dstg)


def golden_adapted_dstg() -> Dstg:
    """Hand-built expected carry-over of the diary base model to v1."""
    dstg = Dstg(abstraction_policy={"home": "L1"})
    dstg.abstract_states["s1"] = AbstractState(
        id="s1", window_id="home",
        avms=[_avm("avm2", "w8", "add")],
        observed_in_versions={"v0"},
    )
    dstg.abstract_states["s2"] = AbstractState(
        id="s2", window_id="edit",
        avms=[_avm("avm4", "w6", "name"), _avm("avm6", "w10", "ok")],
        observed_in_versions={"v0"},
    )
    dstg.abstract_transitions["at1"] = AbstractTransition(
        id="at1", source_state_id="s1", source_avm_id="avm2",
        action_type=ActionType.CLICK, destination_state_id="s2",
        provenance_version="v0",
    )
    return dstg


def test_a3_adaptation_reproduction():
    with criterion("A3 adaptation reproduction"):
        base = diary_base_model()
        spec = load_spec(fixture_path("diary"))
        updated = export_ewtg(spec, "v1")
        adapted = adapt_model(
            base, updated, diff_ewtg(base.ewtg, updated), version="v1"
        )
        assert adapted.dstg.to_dict() == golden_adapted_dstg().to_dict()
        # the added cancel widget (w9) carries no learned element
        for state in adapted.dstg.abstract_states.values():
            assert state.avm_for_widget("w9") is None


def _equivalence_oracle(observed, expected, excluded_widget_ids):
    """Independent restatement of the backward-equivalence predicate."""
    if observed.window_id != expected.window_id:
        return False
    observed_keys = {tuple(sorted(a.valuations.items())) for a in observed.avms}
    expected_keys = {tuple(sorted(a.valuations.items())) for a in expected.avms}
    if not expected_keys <= observed_keys:
        return False
    for avm in observed.avms:
        if avm.ewtg_widget_id in excluded_widget_ids:
            continue
        if tuple(sorted(avm.valuations.items())) not in expected_keys:
            return False
    return True


def test_a4_backward_equivalence_property():
    with criterion("A4 backward equivalence"):
        context = BackwardEquivalenceContext(
            added_widget_ids={"w9"}, replaced_widget_ids={"w8"}
        )
        s2 = golden_adapted_dstg().abstract_states["s2"]
        s3 = copy.deepcopy(s2)
        s3.id = "s3"
        s3.avms.append(_avm("avm9", "w9", "cancel"))
        assert is_backward_equivalent(s3, s2, context)
        # flipping any non-added AVM valuation breaks equivalence
        for index in range(len(s2.avms)):
            broken = copy.deepcopy(s3)
            broken.avms[index].valuations["R_RID"] = "flipped"
            assert not is_backward_equivalent(broken, s2, context)

        rng = random.Random(404)
        widget_pool = ["w6", "w10", "w9", "w8", "w3", None]
        for _ in range(1000):
            observed = copy.deepcopy(s3)
            for _ in range(rng.randrange(1, 4)):
                kind = rng.randrange(4)
                if kind == 0 and observed.avms:
                    avm = rng.choice(observed.avms)
                    avm.valuations["R_RID"] = rng.choice(
                        ["name", "ok", "cancel", "zzz", "flip"]
                    )
                elif kind == 1 and observed.avms:
                    observed.avms.pop(rng.randrange(len(observed.avms)))
                elif kind == 2:
                    observed.avms.append(
                        AttributeValuationMap(
                            id=f"r{rng.randrange(10**6)}",
                            valuations={"R_RID": rng.choice(["name", "ok", "new"])},
                            ewtg_widget_id=rng.choice(widget_pool),
                        )
                    )
                else:
                    observed.window_id = rng.choice(["edit", "edit", "home"])
            assert is_backward_equivalent(observed, s2, context) == \
                _equivalence_oracle(observed, s2, context.excluded)


def _session(spec, version, model, budget, seed):
    counts = method_instruction_counts(spec, version)
    method_ids = updated_methods(spec, version)
    targets = TargetSet(
        target_method_ids=method_ids,
        instruction_counts={m: counts[m] for m in method_ids},
    )
    driver = DriverSession(spec, version, seed=seed)
    return run_session(model, targets, driver, budget=budget, seed=seed)


def test_a5_reuse_beats_cold_start():
    with criterion("A5 reuse benefit"):
        start_time = time.perf_counter()
        spec = load_spec(fixture_path("deep"))
        wins = 0
        for seed in range(10):
            v1_model = AppModel(version="v1", ewtg=export_ewtg(spec, "v1"))
            learned = _session(spec, "v1", v1_model, budget=150, seed=seed).model
            diff = diff_ewtg(learned.ewtg, export_ewtg(spec, "v2"))
            warm_model = adapt_model(
                learned, export_ewtg(spec, "v2"), diff, version="v2"
            )
            warm = _session(spec, "v2", warm_model, budget=80, seed=seed + 100)
            cold_model = AppModel(version="v2", ewtg=export_ewtg(spec, "v2"))
            cold = _session(spec, "v2", cold_model, budget=80, seed=seed + 100)

            warm_first = warm.actions_to_first_target_coverage
            cold_first = cold.actions_to_first_target_coverage
            if warm_first is not None and (
                cold_first is None or warm_first < cold_first
            ):
                wins += 1
        assert wins >= 9
        assert time.perf_counter() - start_time < 30.0


def test_a6_uta_economy_on_every_fixture(tmp_path):
    with criterion("A6 UTA economy"):
        budgets = {"diary": 60, "dialog": 100, "news": 100, "deep": 120}
        for name, budget in budgets.items():
            spec = load_spec(fixture_path(name))
            workdir = tmp_path / name
            workdir.mkdir()
            versions = [v.version for v in spec.versions]
            pipeline_run(
                spec, versions[0], versions[-1], budget=budget, seed=7,
                workdir=workdir, config=EngineConfig(),
            )
            reports = sorted(workdir.glob("report_*.json"))
            assert reports, name
            for path in reports:
                doc = json.loads(path.read_text("utf-8"))
                summary = doc["summary"]
                assert summary["utaCount"] < 0.2 * summary["executedActions"], path
                union: dict[str, set[int]] = {}
                for uta in doc["utas"]:
                    assert uta["newlyCoveredInstructionCount"] > 0
                    for method, instrs in uta["newlyCovered"].items():
                        assert not union.get(method, set()) & set(instrs)
                        union.setdefault(method, set()).update(instrs)
                covered = sum(len(v) for v in union.values())
                assert covered == summary["coveredTargetInstructions"], path


def test_a7_planner_matches_exhaustive_enumeration():
    with criterion("A7 planner optimality"):
        start_time = time.perf_counter()
        rng = random.Random(77)
        nontrivial = 0
        for _ in range(100):
            model, start, target = random_model(rng)
            assert len(model.dstg.abstract_states) <= 12
            seq = plan_to_target(model, start, target)
            oracle = exhaustive_min_cost(model, start, target)
            if seq is None:
                assert oracle is None
            else:
                assert oracle is not None
                assert sequence_cost(seq) == pytest.approx(oracle, abs=1e-9)
                nontrivial += 1
        assert nontrivial > 20  # the sample is not degenerate
        assert time.perf_counter() - start_time < 60.0


def _launch2_choice(seed: int) -> int:
    """Index the news headline generator picks on the session's second launch."""
    return random.Random(f"{seed}:2:0").randrange(2)


def test_a8_obsolescence_flagging_and_avoidance():
    with criterion("A8 obsolescence"):
        spec = load_spec(fixture_path("news"))
        # the learning session and the replay must see different headlines,
        # so the guarded detail path stops reproducing on replay
        learn_seed = next(s for s in range(100) if _launch2_choice(s) == 0)
        replay_seed = next(s for s in range(100) if _launch2_choice(s) == 1)
        next_seed = next(
            s for s in range(100)
            if _launch2_choice(s) == 1 and s != replay_seed
        )

        model = AppModel(version="v1", ewtg=export_ewtg(spec, "v1"))
        model.dstg.abstraction_policy["list"] = "L2"
        counts = method_instruction_counts(spec, "v1")
        targets = TargetSet(set(counts), counts)
        result = run_session(
            model, targets, DriverSession(spec, "v1", seed=learn_seed),
            budget=60, seed=learn_seed,
        )
        model = result.model
        prune_unvisited(model, result.observed_state_ids)

        # every traversed state on the headline-dependent path must be flagged
        expected_flags = set()
        for step in model.gstg.trace:
            tree = model.gstg.tree_by_id(step.after_tree_id)
            state_id = tree.abstract_state_id
            if state_id is None:
                continue
            if model.dstg.abstract_states[state_id].window_id in ("list", "detail"):
                expected_flags.add(state_id)
        assert expected_flags

        replay_flag_obsolete(model, DriverSession(spec, "v1", seed=replay_seed))
        flagged = {
            s.id for s in model.dstg.abstract_states.values() if s.obsolete
        }
        assert flagged == expected_flags

        follow_up = run_session(
            model, targets, DriverSession(spec, "v1", seed=next_seed),
            budget=40, seed=next_seed,
        )
        planned_through = set()
        for entry in follow_up.plan_log:
            for step in entry.get("steps") or []:
                if isinstance(step.get("expected"), str):
                    planned_through.add(step["expected"])
        assert not planned_through & expected_flags


def _jaccard(a, b):
    intersection = sum((a & b).values())
    union = sum((a | b).values())
    return intersection / union if union else 1.0


def test_a9_guard_soundness_over_seeded_sessions():
    with criterion("A9 guard soundness"):
        spec = load_spec(fixture_path("dialog"))
        counts = method_instruction_counts(spec, "v1")
        targets = TargetSet(set(counts), counts)
        total_checks = 0
        for seed in range(10):
            model = AppModel(version="v1", ewtg=copy.deepcopy(export_ewtg(spec, "v1")))
            engine = TestEngine(
                model, targets, DriverSession(spec, "v1", seed=seed),
                budget=80, seed=seed,
            )
            engine.run_session()
            threshold = engine.config.layout_similarity_threshold
            for check in engine.guard_checks:
                total_checks += 1
                guard_fp = fingerprint_from_dict(check["guard"])
                visited = engine.visited_layouts[: check["visitedCount"]]
                expected = any(
                    _jaccard(guard_fp, fp) >= threshold for fp in visited
                )
                assert check["satisfied"] == expected, (seed, check)
        assert total_checks >= 1

        # a guarded step is refused outright from a layout-incompatible state:
        # the driver is never touched
        model = route_choice_model()
        targets = TargetSet({"m"}, {"m": 1})
        engine = TestEngine(model, targets, ExplodingDriver(), budget=0, seed=0)
        guard = fingerprint_to_dict(
            layout_fingerprint(model.dstg.abstract_states["t1"])
        )
        step = PlanStep("i3", ActionType.CLICK, "w3", "done", 1.0, guard=guard)
        assert engine._execute_step(step) == "mismatch"
        assert engine.guard_checks[-1]["satisfied"] is False


def test_a10_determinism_and_round_trip(tmp_path):
    with criterion("A10 determinism and round-trip"):
        spec = load_spec(fixture_path("diary"))
        outputs = []
        for run in ("first", "second"):
            workdir = tmp_path / run
            workdir.mkdir()
            pipeline_run(
                spec, "v0", "v1", budget=50, seed=9,
                workdir=workdir, config=EngineConfig(),
            )
            outputs.append(
                {p.name: p.read_bytes() for p in sorted(workdir.iterdir())}
            )
        assert outputs[0] == outputs[1]
        model_files = [n for n in outputs[0] if n.startswith("model_")]
        assert model_files
        for name in model_files:
            payload = outputs[0][name].rstrip(b"\n")
            assert serialize_model(deserialize_model(payload)) == payload
