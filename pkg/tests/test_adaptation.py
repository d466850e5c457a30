"""Model carry-over across versions."""

import copy

import pytest

from uptest.adaptation import AdaptationError, adapt_model, update_dstg
from uptest.diff import DiffResult, diff_ewtg
from uptest.harness import export_ewtg, load_spec
from uptest.model import (
    AbstractState,
    AbstractTransition,
    ActionType,
    AppModel,
    AttributeValuationMap,
    Dstg,
    Ewtg,
    Window,
    WindowKind,
    validate_integrity,
)

from uptest import fixture_path


def avm(avm_id, widget_id=None, rid=""):
    return AttributeValuationMap(
        id=avm_id, valuations={"R_RID": rid or avm_id}, ewtg_widget_id=widget_id
    )


def diary_base_model() -> AppModel:
    """Learned model of the diary app's first version: two states, one edge."""
    spec = load_spec(fixture_path("diary"))
    ewtg = export_ewtg(spec, "v0")
    dstg = Dstg(abstraction_policy={"main": "L1"})
    dstg.abstract_states["s1"] = AbstractState(
        id="s1", window_id="main",
        avms=[avm("avm2", "w3", "add")],
        observed_in_versions={"v0"},
    )
    dstg.abstract_states["s2"] = AbstractState(
        id="s2", window_id="edit",
        avms=[avm("avm4", "w6", "name"), avm("avm5", "w7", "created"), avm("avm6", "w10", "ok")],
        observed_in_versions={"v0"},
    )
    dstg.abstract_transitions["at1"] = AbstractTransition(
        id="at1", source_state_id="s1", source_avm_id="avm2",
        action_type=ActionType.CLICK, destination_state_id="s2",
        provenance_version="v0",
    )
    return AppModel(version="v0", ewtg=ewtg, dstg=dstg)


def diary_diff():
    spec = load_spec(fixture_path("diary"))
    return diff_ewtg(export_ewtg(spec, "v0"), export_ewtg(spec, "v1"))


def test_adapt_diary_rebinds_and_prunes():
    base = diary_base_model()
    spec = load_spec(fixture_path("diary"))
    updated_ewtg = export_ewtg(spec, "v1")
    adapted = adapt_model(base, updated_ewtg, diary_diff(), version="v1")

    s1 = adapted.dstg.abstract_states["s1"]
    s2 = adapted.dstg.abstract_states["s2"]
    # the main screen's state now lives in the replacement window
    assert s1.window_id == "home"
    # its add button AVM rebinds to the replacement widget
    assert s1.avm_by_id("avm2").ewtg_widget_id == "w8"
    # the deleted created-time widget loses its AVM
    assert s2.avm_by_id("avm5") is None
    assert {a.id for a in s2.avms} == {"avm4", "avm6"}
    # the learned edge survives
    at1 = adapted.dstg.abstract_transitions["at1"]
    assert at1.source_state_id == "s1" and at1.destination_state_id == "s2"
    # the added cancel widget has no learned element yet
    for state in adapted.dstg.abstract_states.values():
        assert state.avm_for_widget("w9") is None
    assert validate_integrity(adapted) == []


def test_adapt_discards_the_session_layer_and_diff_context_is_set():
    base = diary_base_model()
    spec = load_spec(fixture_path("diary"))
    adapted = adapt_model(base, export_ewtg(spec, "v1"), diary_diff(), version="v1")
    assert adapted.version == "v1"
    assert adapted.gstg.gui_trees == [] and adapted.gstg.trace == []
    assert adapted.diff_context == {"addedWidgets": ["w9"], "replacedWidgets": ["w8"]}


def test_adapt_with_empty_diff_preserves_the_learned_graph():
    base = diary_base_model()
    spec = load_spec(fixture_path("diary"))
    same_ewtg = export_ewtg(spec, "v0")
    adapted = adapt_model(base, same_ewtg, diff_ewtg(base.ewtg, same_ewtg), version="v0")
    assert adapted.dstg.to_dict() == base.dstg.to_dict()


def test_adapt_does_not_mutate_the_base_model():
    base = diary_base_model()
    snapshot = copy.deepcopy(base.to_dict())
    spec = load_spec(fixture_path("diary"))
    adapt_model(base, export_ewtg(spec, "v1"), diary_diff(), version="v1")
    assert base.to_dict() == snapshot


def test_deleted_window_drops_states_and_edges():
    base = diary_base_model()
    diff = DiffResult(deleted_windows={"edit"}, matched_windows={"main": "main"})
    updated = update_dstg(copy.deepcopy(base.dstg), diff, base.ewtg)
    assert "s2" not in updated.abstract_states
    assert updated.abstract_transitions == {}


def test_disconnected_component_is_pruned():
    base = diary_base_model()
    # an island state in the edit window, unreachable from the launcher's states
    base.dstg.abstract_states["s9"] = AbstractState(id="s9", window_id="edit")
    diff = DiffResult(
        matched_windows={"main": "main", "edit": "edit"},
        matched_widgets={w: w for w in ("w3", "w6", "w7", "w10")},
    )
    updated = update_dstg(copy.deepcopy(base.dstg), diff, base.ewtg)
    assert "s9" not in updated.abstract_states
    assert {"s1", "s2"} <= set(updated.abstract_states)


def test_replaced_transition_drops_its_learned_instances():
    base = diary_base_model()
    spec = load_spec(fixture_path("diary"))
    updated_ewtg = export_ewtg(spec, "v1")
    diff = diary_diff()
    # force the recorded v0 transition to be classified as replaced
    assert "wt-i-add-0-edit" in base.ewtg.window_transitions
    diff.matched_transitions.pop("wt-i-add-0-edit", None)
    diff.replaced_transitions["wt-i-add-0-edit"] = "wt-i-add-0-edit"
    adapted = adapt_model(base, updated_ewtg, diff, version="v1")
    assert "at1" not in adapted.dstg.abstract_transitions
    # with its only edge gone, the edit state is disconnected and pruned
    assert "s2" not in adapted.dstg.abstract_states


def test_abstraction_policy_follows_replaced_windows():
    base = diary_base_model()
    base.dstg.abstraction_policy = {"main": "L3", "edit": "L2"}
    spec = load_spec(fixture_path("diary"))
    adapted = adapt_model(base, export_ewtg(spec, "v1"), diary_diff(), version="v1")
    assert adapted.dstg.abstraction_policy == {"home": "L3", "edit": "L2"}


def test_adapt_rejects_diff_with_unknown_windows():
    base = diary_base_model()
    spec = load_spec(fixture_path("diary"))
    updated_ewtg = export_ewtg(spec, "v1")
    bad = DiffResult(replaced_windows={"no-such-window": "home"})
    with pytest.raises(AdaptationError):
        adapt_model(base, updated_ewtg, bad)
    bad = DiffResult(replaced_windows={"main": "no-such-window"})
    with pytest.raises(AdaptationError):
        adapt_model(base, updated_ewtg, bad)
