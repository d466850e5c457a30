"""Post-session model refinement.

After a session the learned graph is pruned of states that should have been
seen but were not, and the recorded trace is replayed to discover states that
the app no longer reproduces; those are flagged obsolete rather than deleted,
so the planner avoids them while the model keeps their history.
"""

from __future__ import annotations

import warnings
from typing import Iterable, Optional

from .abstraction import LEVELS, derive_abstract_state
from .harness import DriverRejection
from .model import AppModel, GuiTree


def prune_unvisited(model: AppModel, observed_state_ids: Iterable[str]) -> AppModel:
    """Drop never-observed states of windows that the session did visit."""
    observed = set(observed_state_ids)
    dstg = model.dstg
    visited_windows = {
        dstg.abstract_states[sid].window_id
        for sid in observed
        if sid in dstg.abstract_states
    }
    doomed = {
        sid
        for sid, state in dstg.abstract_states.items()
        if state.window_id in visited_windows and sid not in observed
    }
    for sid in doomed:
        del dstg.abstract_states[sid]
    for tr_id in list(dstg.abstract_transitions):
        tr = dstg.abstract_transitions[tr_id]
        if tr.source_state_id in doomed or tr.destination_state_id in doomed:
            del dstg.abstract_transitions[tr_id]
    return model


def _states_match(model: AppModel, expected_tree: GuiTree, observed_result) -> bool:
    expected_state = (
        model.dstg.abstract_states.get(expected_tree.abstract_state_id)
        if expected_tree.abstract_state_id
        else None
    )
    if expected_state is None:
        return True  # nothing to check against
    if observed_result.window_id != expected_state.window_id:
        return False
    level = LEVELS[expected_state.abstraction_level]
    observed_tree = GuiTree(
        id="replay", window_id=observed_result.window_id, root=observed_result.root
    )
    derived = derive_abstract_state(observed_tree, level, state_id="replay")
    return derived.valuation_multiset() == expected_state.valuation_multiset()


def replay_flag_obsolete(model: AppModel, driver) -> AppModel:
    """Re-run the recorded trace; expected states that fail to reappear are flagged."""
    trace = model.gstg.trace
    if not trace:
        return model
    try:
        driver.reset()
    except Exception as exc:  # pragma: no cover - defensive
        warnings.warn(f"replay aborted at reset: {exc}")
        return model
    for step in trace:
        expected_tree = model.gstg.tree_by_id(step.after_tree_id)
        try:
            result = driver.perform(step.action)
        except DriverRejection:
            result = None
        except Exception as exc:
            warnings.warn(f"replay aborted mid-trace: {exc}")
            return model
        if expected_tree is None:
            continue
        matched = result is not None and _states_match(model, expected_tree, result)
        if not matched and expected_tree.abstract_state_id:
            state = model.dstg.abstract_states.get(expected_tree.abstract_state_id)
            if state is not None:
                state.obsolete = True
    return model


def propagate_obsolescence(
    model: AppModel,
    session_observations: dict,
    scope_window_ids: Optional[set[str]] = None,
) -> AppModel:
    """Flag session-created states whose incoming edges never re-traversed.

    ``session_observations`` carries ``created`` state ids plus per-state
    ``retraversal_failures`` and ``retraversal_successes`` counters collected
    by the engine.  When ``scope_window_ids`` is given, only states of those
    windows are considered (windows already known to shed states quickly).
    """
    created = set(session_observations.get("created", ()))
    failures = session_observations.get("retraversal_failures", {})
    successes = session_observations.get("retraversal_successes", {})
    for sid in sorted(created):
        state = model.dstg.abstract_states.get(sid)
        if state is None:
            continue
        if scope_window_ids is not None and state.window_id not in scope_window_ids:
            continue
        if failures.get(sid, 0) > 0 and successes.get(sid, 0) == 0:
            state.obsolete = True
    return model
