"""Shared builders for the test suite."""

from __future__ import annotations

import pytest

from uptest.model import GuiNode, GuiTree, GUI_NODE_PROPERTIES


_PROPERTY_DEFAULTS = {
    "resourceId": "",
    "className": "View",
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
    "hasChildren": False,
}

assert set(_PROPERTY_DEFAULTS) == set(GUI_NODE_PROPERTIES)


def make_node(children=None, widget_ref=None, bounds_hint=None, **overrides) -> GuiNode:
    props = dict(_PROPERTY_DEFAULTS)
    props.update(overrides)
    children = list(children or [])
    props["hasChildren"] = bool(children)
    return GuiNode(
        properties=props,
        children=children,
        bounds_hint=bounds_hint,
        widget_ref=widget_ref,
    )


def make_tree(window_id: str, root: GuiNode, tree_id: str = "t1", session_index: int = 0) -> GuiTree:
    return GuiTree(id=tree_id, window_id=window_id, root=root, session_index=session_index)


def path_of(root: GuiNode, widget_ref: str):
    for path, node in root.walk():
        if node.widget_ref == widget_ref:
            return path
    raise AssertionError(f"no node references widget {widget_ref}")


@pytest.fixture
def node_factory():
    return make_node


@pytest.fixture
def tree_factory():
    return make_tree
