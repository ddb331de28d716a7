"""Comparison techniques, each producing a GlobalPolicy over the same model.

Objective 0 is taken to be the task (goal-reaching) objective.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .conflicts import compile_global_policy
from .lexi import lvi
from .mdp import DEFAULT_TOLERANCE, value_iteration
from .model import Clmdp, GlobalPolicy


def _uniform(model: Clmdp, actions: np.ndarray, context: int) -> GlobalPolicy:
    return GlobalPolicy(actions, np.full(model.base.num_states, context))


def b1_task_only(model: Clmdp, tolerance: float = DEFAULT_TOLERANCE) -> GlobalPolicy:
    """Task objective only, with the top context's reward table."""
    top = model.top_context
    _, actions, _ = value_iteration(model.base, model.f_r(top)[0], None, tolerance)
    return _uniform(model, actions, top)


def b2_lmdp_omega(
    model: Clmdp, slack: float = 0.0, tolerance: float = DEFAULT_TOLERANCE
) -> GlobalPolicy:
    """One lexicographic solve with the top context applied to every state."""
    top = model.top_context
    actions, _ = lvi(model.base, model.f_r(top), model.f_w(top), None, slack, tolerance)
    return _uniform(model, actions, top)


def default_weights(ordering: Sequence[int]) -> np.ndarray:
    """Geometric weights 10^(n-1), ..., 10, 1 assigned along ``ordering``."""
    n = len(ordering)
    weights = np.empty(n)
    for rank, objective in enumerate(ordering):
        weights[objective] = 10.0 ** (n - 1 - rank)
    return weights


def b3_scalarization(
    model: Clmdp, weights: Sequence[float] | None = None, tolerance: float = DEFAULT_TOLERANCE
) -> GlobalPolicy:
    """Weighted-sum value iteration with the top context's rewards.

    ``weights`` are indexed by objective; by default they follow the top
    context's ordering (see ``default_weights``).
    """
    top = model.top_context
    w = default_weights(model.f_w(top)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (model.num_objectives,) or np.any(w < 0):
        raise ValueError(f"need {model.num_objectives} non-negative weights, got {weights}")
    scalar = np.tensordot(w, model.f_r(top), axes=1)
    _, actions, _ = value_iteration(model.base, scalar, None, tolerance)
    return _uniform(model, actions, top)


def b4_lmdp_contexts(
    model: Clmdp, slack: float = 0.0, tolerance: float = DEFAULT_TOLERANCE
) -> GlobalPolicy:
    """Partition-wise lexicographic planning in meta-ordering order, without conflict handling.

    Each context is solved over the full state space with its own ordering
    and rewards, while the states of already-solved partitions keep the
    values (not the actions) they were assigned. Actions are committed only
    on the context's own partition.
    """
    base, z = model.base, model.z
    committed = np.zeros(base.num_states, dtype=bool)
    frozen = np.zeros((model.num_objectives, base.num_states))
    actions = np.zeros(base.num_states, dtype=np.int64)
    for c in model.meta_ordering:
        order = model.f_w(c)
        fixed = (committed.copy(), frozen.copy()) if committed.any() else None
        policy, values = lvi(base, model.f_r(c), order, None, slack, tolerance, fixed)
        part = z == c
        actions[part] = policy[part]
        for objective, v in zip(order, values):
            frozen[objective, part] = v[part]
        committed |= part
    return GlobalPolicy(actions, z.copy())


def b6_no_resolver(
    model: Clmdp, slack: float = 0.0, tolerance: float = DEFAULT_TOLERANCE
) -> GlobalPolicy:
    return compile_global_policy(model, slack, tolerance)[0]
