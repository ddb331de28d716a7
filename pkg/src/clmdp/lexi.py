"""Lexicographic value iteration over an ordered set of objectives."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .mdp import DEFAULT_TOLERANCE, TabularMdp, greedy, value_iteration


def check_ordering(order: Sequence[int], num_objectives: int) -> tuple[int, ...]:
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(num_objectives)):
        raise ValueError(f"{order} is not a permutation of 0..{num_objectives - 1}")
    return order


def lvi(
    mdp: TabularMdp,
    rewards,
    ordering: Sequence[int],
    mask: np.ndarray | None = None,
    slack: float = 0.0,
    tolerance: float = DEFAULT_TOLERANCE,
    fixed_values: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Solve objectives in priority order, pruning to near-optimal actions after each.

    Args:
        mdp: the model.
        rewards: ``(n, S, A)`` per-objective reward tables, indexed by objective.
        ordering: objective indices, highest priority first.
        mask: initial allowed actions; ``None`` allows everything. A singleton
            row pins the action at that state.
        slack: absolute Q-value slack kept after each objective pass.
        tolerance: value iteration accuracy; actions within ``slack +
            tolerance`` of the best Q are retained.
        fixed_values: optional ``(state_mask, values)`` with ``values`` of
            shape ``(n, S)``; frozen states keep ``values[objective]`` in
            every pass instead of being backed up.

    Returns:
        ``(policy, values)`` where ``values[k]`` is the value function of
        ``ordering[k]``.
    """
    if slack < 0:
        raise ValueError("slack must be non-negative")
    rewards = np.asarray(rewards, dtype=float)
    order = check_ordering(ordering, rewards.shape[0])
    allowed = mdp.full_mask() if mask is None else np.array(mask, dtype=bool)
    values: list[np.ndarray] = []
    q = None
    for objective in order:
        frozen = None
        if fixed_values is not None:
            frozen = (fixed_values[0], np.asarray(fixed_values[1])[objective])
        v, _, q = value_iteration(mdp, rewards[objective], allowed, tolerance, frozen)
        values.append(v)
        best = q.max(axis=1, keepdims=True)
        allowed = allowed & (q >= best - slack - tolerance)
    return greedy(q, tolerance), values
