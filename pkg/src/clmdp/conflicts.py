"""Global policy compilation, conflict detection and conflict resolution."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .lexi import lvi
from .mdp import DEFAULT_TOLERANCE, TabularMdp
from .model import Clmdp, GlobalPolicy

CHECKER_EPSILON = 1e-6


@dataclass(eq=False)
class ConflictReport:
    has_conflict: bool
    conflict_states: frozenset[int]
    reachability: np.ndarray
    log_reachability: np.ndarray | None = None
    sweeps: int = 0

    def to_dict(self) -> dict:
        return {
            "has_conflict": self.has_conflict,
            "conflict_states": sorted(self.conflict_states),
            "reachability": self.reachability.tolist(),
            "sweeps": self.sweeps,
        }


def context_policies(
    model: Clmdp, slack: float = 0.0, tolerance: float = DEFAULT_TOLERANCE
) -> list[np.ndarray]:
    """LVI policy of every context, each solved as if it covered the whole state space."""
    return [
        lvi(model.base, model.f_r(c), model.f_w(c), None, slack, tolerance)[0]
        for c in range(model.num_contexts)
    ]


def stitch(policies: list[np.ndarray], z: np.ndarray) -> GlobalPolicy:
    z = np.asarray(z)
    stacked = np.stack(policies)
    return GlobalPolicy(stacked[z, np.arange(z.size)], z.copy())


def compile_global_policy(
    model: Clmdp, slack: float = 0.0, tolerance: float = DEFAULT_TOLERANCE
) -> tuple[GlobalPolicy, list[np.ndarray]]:
    if model.z is None:
        raise ValueError("model has no state-context mapping")
    policies = context_policies(model, slack, tolerance)
    return stitch(policies, model.z), policies


def _policy_actions(policy) -> np.ndarray:
    return policy.actions if isinstance(policy, GlobalPolicy) else np.asarray(policy, dtype=np.int64)


def conflict_checker(
    policy, mdp: TabularMdp, log_space: bool = False, epsilon: float = CHECKER_EPSILON
) -> ConflictReport:
    """Goal reachability of every state under ``policy``.

    Backs up ``V_r(s) = R_e(s) + gamma * sum_s' T(s, pi(s), s') V_r(s')`` with
    ``R_e`` equal to 1 at the goal and 0 elsewhere. States are frozen once
    they lead to a frozen state and their value stopped changing; the goal is
    frozen from the start at ``V_r = 1``. Iteration stops when every state is
    frozen or the largest change of a sweep drops below ``epsilon``. A state
    whose value leaves exact zero counts as an infinite change, so the sweep
    never stops while reachability is still spreading.

    Unreachable states never receive a non-zero update, so conflicts are the
    states with ``V_r`` exactly zero. With ``log_space`` the values are kept
    as logarithms (``-inf`` for zero) and changes are measured on the log
    scale, which keeps long low-probability chains from underflowing.
    """
    actions = _policy_actions(policy)
    p_pi = mdp.policy_matrix(actions).tocsr()
    p_pi.sort_indices()
    n = mdp.num_states
    goal = mdp.goal_state
    gamma = mdp.discount
    if np.any(np.diff(p_pi.indptr) == 0):
        raise ValueError("policy selects a state-action pair without successors")

    solved = np.zeros(n, dtype=bool)
    solved[goal] = True
    row_of_entry = np.repeat(np.arange(n), np.diff(p_pi.indptr))
    starts = p_pi.indptr[:-1]

    if log_space:
        log_weights = np.log(p_pi.data) + np.log(gamma)
        values = np.full(n, -np.inf)
        values[goal] = 0.0
    else:
        values = np.zeros(n)
        values[goal] = 1.0

    sweeps = 0
    with np.errstate(invalid="ignore", over="ignore"):
        while True:
            sweeps += 1
            unsolved = ~solved
            if log_space:
                terms = log_weights + values[p_pi.indices]
                row_max = np.maximum.reduceat(terms, starts)
                finite = np.isfinite(row_max)
                shifted = np.exp(terms - np.where(finite, row_max, 0.0)[row_of_entry])
                shifted[~finite[row_of_entry]] = 0.0
                totals = np.add.reduceat(shifted, starts)
                backed = np.where(finite, row_max + np.log(np.where(finite, totals, 1.0)), -np.inf)
                was_zero = np.isneginf(values)
                now_zero = np.isneginf(backed)
                change = np.where(was_zero & now_zero, 0.0, np.abs(backed - values))
                change[was_zero != now_zero] = np.inf
            else:
                backed = gamma * (p_pi @ values)
                change = np.abs(backed - values)
                change[(values == 0.0) & (backed != 0.0)] = np.inf
            values = np.where(unsolved, backed, values)
            change = np.where(unsolved, change, 0.0)

            leads_to_solved = (p_pi @ solved.astype(float)) > 0.0
            newly_solved = unsolved & leads_to_solved & (change < epsilon)
            solved |= newly_solved
            delta = change.max(initial=0.0)
            if delta < epsilon or solved.all():
                break

    if log_space:
        zero = np.isneginf(values)
        reach = np.exp(values)
        log_values = values
    else:
        zero = values == 0.0
        reach = values
        log_values = None
    conflicts = frozenset(np.flatnonzero(zero).tolist())
    return ConflictReport(bool(conflicts), conflicts, reach, log_values, sweeps)


def reachable_from(policy, mdp: TabularMdp, sources) -> np.ndarray:
    """Boolean mask of states reachable from ``sources`` under ``policy``."""
    adjacency = mdp.policy_matrix(_policy_actions(policy)).T.tocsr()
    seen = np.zeros(mdp.num_states, dtype=bool)
    frontier = np.zeros(mdp.num_states, dtype=bool)
    frontier[list(sources)] = True
    while frontier.any():
        seen |= frontier
        frontier = ((adjacency @ frontier.astype(float)) > 0) & ~seen
    return seen


def conflict_resolver(
    model: Clmdp,
    policy: GlobalPolicy,
    report: ConflictReport,
    slack: float = 0.0,
    tolerance: float = DEFAULT_TOLERANCE,
    log_space: bool = False,
) -> tuple[GlobalPolicy, bool, int]:
    """Re-plan a growing window of low-priority contexts until the policy is conflict-free.

    The window starts at the lowest-priority context owning a conflict state
    and gains one higher-priority context per iteration. Each iteration pins
    the actions of states outside the window, then re-solves the window's
    contexts from highest to lowest priority, pinning each context's states
    as soon as it is solved.

    Returns ``(policy, resolved, iterations)``; ``resolved`` is ``False`` only
    when even the full window leaves a conflict.
    """
    if not report.has_conflict:
        return policy, True, 0
    z = model.z
    base = model.base
    rank = {c: i for i, c in enumerate(model.meta_ordering)}
    lowest = max(rank[int(z[s])] for s in report.conflict_states)
    current = policy.copy()
    iterations = 0
    for top in range(lowest, -1, -1):
        iterations += 1
        window = model.meta_ordering[top:]
        mask = base.full_mask()
        pinned = ~np.isin(z, window)
        _pin(mask, pinned, current.actions)
        for c in window:
            actions, _ = lvi(base, model.f_r(c), model.f_w(c), mask, slack, tolerance)
            part = z == c
            _pin(mask, part, actions)
            current.actions[part] = actions[part]
            current.provenance[part] = c
        if not conflict_checker(current, base, log_space).has_conflict:
            return current, True, iterations
    return current, False, iterations


def _pin(mask: np.ndarray, states: np.ndarray, actions: np.ndarray) -> None:
    rows = np.flatnonzero(states)
    mask[rows] = False
    mask[rows, actions[rows]] = True


@dataclass
class SolveDiagnostics:
    initial_conflict_states: list[int] = field(default_factory=list)
    resolved: bool = True
    resolver_iterations: int = 0
    contexts_updated: list[int] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def conflicts_found(self) -> int:
        return len(self.initial_conflict_states)

    def to_dict(self) -> dict:
        return {
            "conflicts_found": self.conflicts_found,
            "initial_conflict_states": self.initial_conflict_states,
            "resolved": self.resolved,
            "resolver_iterations": self.resolver_iterations,
            "contexts_updated": self.contexts_updated,
            "timings": self.timings,
        }


def solve(
    model: Clmdp,
    slack: float = 0.0,
    tolerance: float = DEFAULT_TOLERANCE,
    log_space: bool = False,
) -> tuple[GlobalPolicy, SolveDiagnostics]:
    """Compile, check and resolve."""
    diag = SolveDiagnostics()
    t0 = time.perf_counter()
    policy, _ = compile_global_policy(model, slack, tolerance)
    t1 = time.perf_counter()
    report = conflict_checker(policy, model.base, log_space)
    t2 = time.perf_counter()
    diag.initial_conflict_states = sorted(report.conflict_states)
    policy, diag.resolved, diag.resolver_iterations = conflict_resolver(
        model, policy, report, slack, tolerance, log_space
    )
    t3 = time.perf_counter()
    if diag.resolver_iterations:
        lowest = max(model.rank(int(model.z[s])) for s in report.conflict_states)
        top = lowest - diag.resolver_iterations + 1
        diag.contexts_updated = list(model.meta_ordering[top:])
    diag.timings = {"compile": t1 - t0, "check": t2 - t1, "resolve": t3 - t2}
    return policy, diag
