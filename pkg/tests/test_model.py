"""Model layer: construction, validation, serialization."""

import copy
import json

import pytest

from uptest.model import (
    AbstractState,
    AbstractTransition,
    Action,
    ActionType,
    AppModel,
    AttributeValuationMap,
    Dstg,
    Ewtg,
    EwtgWidget,
    Gstg,
    GuiTree,
    Input,
    ModelError,
    TraceStep,
    Window,
    WindowKind,
    WindowTransition,
    action_cost,
    deserialize_model,
    models_equal,
    serialize_model,
    validate_integrity,
)

from conftest import make_node


def small_model() -> AppModel:
    ewtg = Ewtg(launcher_window_id="w-main")
    ewtg.windows["w-main"] = Window(
        id="w-main", name="Main", kind=WindowKind.ACTIVITY,
        class_name="com.app.Main", widget_ids={"wd-ok"},
    )
    ewtg.windows["w-edit"] = Window(
        id="w-edit", name="Edit", kind=WindowKind.ACTIVITY, class_name="com.app.Edit",
    )
    ewtg.widgets["wd-ok"] = EwtgWidget(
        id="wd-ok", window_id="w-main", class_name="Button",
        resource_id="ok", content_description="", xpath="/LinearLayout/Button",
    )
    ewtg.inputs["i-ok"] = Input(
        id="i-ok", window_id="w-main", widget_id="wd-ok",
        action_type=ActionType.CLICK, handler_method_ids={"m-ok"},
    )
    ewtg.window_transitions["wt-1"] = WindowTransition(
        id="wt-1", source_window_id="w-main",
        destination_window_id="w-edit", input_id="i-ok",
    )

    dstg = Dstg(abstraction_policy={"w-main": "L2"})
    avm = AttributeValuationMap(
        id="avm-1", valuations={"R_RID": "ok", "R_CN": "Button"},
        cardinality=1, ewtg_widget_id="wd-ok",
    )
    dstg.abstract_states["s1"] = AbstractState(
        id="s1", window_id="w-main", avms=[avm], abstraction_level="L2",
        observed_in_versions={"v1"},
    )
    dstg.abstract_states["s2"] = AbstractState(id="s2", window_id="w-edit")
    dstg.abstract_transitions["at-1"] = AbstractTransition(
        id="at-1", source_state_id="s1", source_avm_id="avm-1",
        action_type=ActionType.CLICK, destination_state_id="s2",
        provenance_version="v1",
    )

    gstg = Gstg()
    root = make_node(widget_ref="wd-ok", clickable=True, resourceId="ok")
    gstg.gui_trees.append(
        GuiTree(id="t1", window_id="w-main", root=root, abstract_state_id="s1", session_index=1)
    )
    gstg.gui_trees.append(
        GuiTree(id="t2", window_id="w-edit", root=make_node(), session_index=2)
    )
    gstg.trace.append(
        TraceStep(
            action=Action("i-ok", ActionType.CLICK, concrete_node_path=()),
            before_tree_id="t1",
            after_tree_id="t2",
        )
    )
    return AppModel(version="v1", ewtg=ewtg, dstg=dstg, gstg=gstg)


def test_action_costs():
    assert action_cost(ActionType.RESET_APP) == 10
    for at in ActionType:
        if at != ActionType.RESET_APP:
            assert action_cost(at) == 1


def test_valid_model_has_no_violations():
    assert validate_integrity(small_model()) == []


def test_serialize_round_trip():
    model = small_model()
    data = serialize_model(model)
    restored = deserialize_model(data)
    assert models_equal(model, restored)
    # canonical: serializing again yields the same bytes
    assert serialize_model(restored) == data


def test_deserialize_rejects_garbage():
    with pytest.raises(ModelError):
        deserialize_model(b"not json at all")
    with pytest.raises(ModelError):
        deserialize_model(b"[1, 2, 3]")


def test_deserialize_rejects_wrong_schema_version():
    doc = json.loads(serialize_model(small_model()).decode("utf-8"))
    doc["schema_version"] = 99
    with pytest.raises(ModelError):
        deserialize_model(json.dumps(doc).encode("utf-8"))


def test_deserialize_rejects_missing_version():
    doc = json.loads(serialize_model(small_model()).decode("utf-8"))
    del doc["version"]
    with pytest.raises(ModelError):
        deserialize_model(json.dumps(doc).encode("utf-8"))


def test_validation_catches_dangling_references():
    model = small_model()
    model.dstg.abstract_states["s3"] = AbstractState(id="s3", window_id="w-missing")
    violations = validate_integrity(model)
    assert any("missing window" in v for v in violations)
    with pytest.raises(ModelError):
        serialize_model(model)


def test_validation_catches_bad_avm():
    model = small_model()
    state = model.dstg.abstract_states["s1"]
    state.avms[0].cardinality = 0
    assert any("cardinality" in v for v in validate_integrity(model))
    state.avms[0].cardinality = 1
    state.avms[0].ewtg_widget_id = "wd-missing"
    assert any("missing widget" in v for v in validate_integrity(model))


def test_validation_catches_transition_avm_mismatch():
    model = small_model()
    model.dstg.abstract_transitions["at-1"].source_avm_id = "avm-unknown"
    assert any("avm-unknown" in v for v in validate_integrity(model))


def test_validation_catches_input_in_wrong_window():
    model = small_model()
    model.ewtg.inputs["i-ok"].window_id = "w-edit"
    violations = validate_integrity(model)
    assert any("another window" in v for v in violations)


def test_validation_catches_trace_without_tree():
    model = small_model()
    model.gstg.trace[0] = TraceStep(
        action=model.gstg.trace[0].action,
        before_tree_id="t1",
        after_tree_id="t-missing",
    )
    assert any("missing gui tree" in v for v in validate_integrity(model))


def test_validation_catches_session_index_disorder():
    model = small_model()
    model.gstg.gui_trees[1].session_index = 0
    assert any("session index" in v for v in validate_integrity(model))


def test_models_equal_is_structural():
    a = small_model()
    b = copy.deepcopy(a)
    assert models_equal(a, b)
    b.dstg.abstract_states["s1"].obsolete = True
    assert not models_equal(a, b)


def test_valuation_multiset_counts_cardinality():
    state = AbstractState(
        id="s",
        window_id="w",
        avms=[
            AttributeValuationMap(id="a1", valuations={"R_CN": "Button"}, cardinality=2),
            AttributeValuationMap(id="a2", valuations={"R_CN": "Button"}, cardinality=1),
            AttributeValuationMap(id="a3", valuations={"R_CN": "TextView"}, cardinality=1),
        ],
    )
    assert state.valuation_multiset() == {
        (("R_CN", "Button"),): 3,
        (("R_CN", "TextView"),): 1,
    }


def test_gui_node_walk_and_node_at():
    leaf = make_node(resourceId="leaf")
    root = make_node(children=[make_node(children=[leaf]), make_node()])
    paths = [p for p, _ in root.walk()]
    assert paths == [(), (0,), (0, 0), (1,)]
    assert root.node_at((0, 0)) is leaf
