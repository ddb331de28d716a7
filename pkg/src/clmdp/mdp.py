"""Tabular goal-oriented MDPs: representation, validation, evaluation and value iteration."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_TOLERANCE = 1e-6
DEFAULT_DISCOUNT = 0.95


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with an absorbing goal state.

    Transitions are stored as a CSR matrix of shape ``(S * A, S)``; row
    ``s * A + a`` holds the successor distribution of ``(s, a)``.
    """

    num_states: int
    num_actions: int
    transitions: sp.csr_matrix
    goal_state: int
    start_states: tuple[int, ...]
    discount: float = DEFAULT_DISCOUNT

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ValueError("num_states and num_actions must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.transitions.shape != (self.num_states * self.num_actions, self.num_states):
            raise ValueError(
                f"transition matrix has shape {self.transitions.shape}, expected "
                f"{(self.num_states * self.num_actions, self.num_states)}"
            )
        if not self.start_states:
            raise ValueError("start_states must be non-empty")
        object.__setattr__(self, "start_states", tuple(int(s) for s in self.start_states))

    @classmethod
    def from_successors(
        cls,
        num_states: int,
        num_actions: int,
        successors: Mapping[tuple[int, int], Iterable[tuple[int, float]]],
        goal_state: int,
        start_states: Sequence[int],
        discount: float = DEFAULT_DISCOUNT,
    ) -> "TabularMdp":
        """Build from a ``{(s, a): [(s', p), ...]}`` mapping.

        Pairs missing from the mapping get no successors and probabilities
        are kept as given, so ``validate_mdp`` sees exactly what the caller
        supplied. Indices outside the state/action range raise ``ValueError``.
        """
        rows, cols, vals = [], [], []
        for (s, a), nxt in successors.items():
            if not (0 <= s < num_states and 0 <= a < num_actions):
                raise ValueError(f"state-action pair ({s}, {a}) out of range")
            for s_next, p in nxt:
                if not 0 <= s_next < num_states:
                    raise ValueError(f"(s={s}, a={a}): successor {s_next} out of range")
                rows.append(s * num_actions + a)
                cols.append(s_next)
                vals.append(float(p))
        matrix = sp.csr_matrix(
            (vals, (rows, cols)), shape=(num_states * num_actions, num_states)
        )
        return cls(num_states, num_actions, matrix, goal_state, tuple(start_states), discount)

    def successors(self, state: int, action: int) -> list[tuple[int, float]]:
        row = state * self.num_actions + action
        lo, hi = self.transitions.indptr[row], self.transitions.indptr[row + 1]
        return list(
            zip(self.transitions.indices[lo:hi].tolist(), self.transitions.data[lo:hi].tolist())
        )

    def policy_matrix(self, actions: np.ndarray) -> sp.csr_matrix:
        """``S x S`` transition matrix induced by a deterministic policy."""
        rows = np.arange(self.num_states) * self.num_actions + np.asarray(actions)
        return self.transitions[rows]

    def with_discount(self, discount: float) -> "TabularMdp":
        return TabularMdp(
            self.num_states, self.num_actions, self.transitions, self.goal_state,
            self.start_states, discount,
        )

    def full_mask(self) -> np.ndarray:
        return np.ones((self.num_states, self.num_actions), dtype=bool)

    def to_dict(self) -> dict:
        records = []
        for s in range(self.num_states):
            for a in range(self.num_actions):
                records.append({
                    "s": s,
                    "a": a,
                    "next": [{"sp": sp_, "p": p} for sp_, p in self.successors(s, a)],
                })
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "goal_state": self.goal_state,
            "start_states": list(self.start_states),
            "discount": self.discount,
            "transitions": records,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TabularMdp":
        successors = {
            (int(r["s"]), int(r["a"])): [(int(n["sp"]), float(n["p"])) for n in r["next"]]
            for r in doc["transitions"]
        }
        return cls.from_successors(
            int(doc["num_states"]), int(doc["num_actions"]), successors,
            int(doc["goal_state"]), [int(s) for s in doc["start_states"]],
            float(doc.get("discount", DEFAULT_DISCOUNT)),
        )


def validate_mdp(mdp: TabularMdp, atol: float = 1e-9) -> list[str]:
    """Return human-readable invariant violations; empty when the MDP is well formed."""
    problems: list[str] = []
    n_s, n_a = mdp.num_states, mdp.num_actions
    if not 0 <= mdp.goal_state < n_s:
        problems.append(f"goal_state {mdp.goal_state} out of range")
    for s in mdp.start_states:
        if not 0 <= s < n_s:
            problems.append(f"start state {s} out of range")
    T = mdp.transitions
    for s in range(n_s):
        for a in range(n_a):
            row = s * n_a + a
            lo, hi = T.indptr[row], T.indptr[row + 1]
            cols, probs = T.indices[lo:hi], T.data[lo:hi]
            if np.any(probs <= 0.0) or np.any(probs > 1.0):
                problems.append(f"(s={s}, a={a}): probability outside (0, 1]")
            total = float(probs.sum())
            if abs(total - 1.0) > atol:
                problems.append(f"(s={s}, a={a}): successor probabilities sum to {total:.12g}")
            if s == mdp.goal_state and 0 <= s < n_s:
                stay = float(probs[cols == s].sum())
                if abs(stay - 1.0) > atol:
                    problems.append(f"(s={s}, a={a}): goal not absorbing")
    return problems


def _as_table(mdp: TabularMdp, reward) -> np.ndarray:
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"reward table has shape {reward.shape}")
    return reward


def _stop_threshold(tolerance: float, discount: float) -> float:
    # sup-norm increment bound that keeps the fixed-point error within tolerance / 4
    return 0.25 * tolerance * (1.0 - discount) / discount


def policy_evaluation(
    mdp: TabularMdp, policy, reward, tolerance: float = DEFAULT_TOLERANCE
) -> np.ndarray:
    """Iterative evaluation of a deterministic policy.

    Returns V with ``V = R_pi + gamma * P_pi V`` holding within ``tolerance``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    actions = np.asarray(policy, dtype=np.int64)
    reward = _as_table(mdp, reward)
    states = np.arange(mdp.num_states)
    r_pi = reward[states, actions]
    p_pi = mdp.policy_matrix(actions)
    gamma = mdp.discount
    threshold = _stop_threshold(tolerance, gamma)
    values = np.zeros(mdp.num_states)
    while True:
        updated = r_pi + gamma * (p_pi @ values)
        delta = np.max(np.abs(updated - values))
        values = updated
        if delta < threshold:
            return values


def greedy(q: np.ndarray, tolerance: float = 0.0) -> np.ndarray:
    """Lowest-index action among those within ``tolerance`` of each row's max."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tolerance, axis=1)


def value_iteration(
    mdp: TabularMdp,
    reward,
    mask: np.ndarray | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
    fixed_values: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Optimal values restricted to mask-allowed actions.

    Args:
        mdp: the model.
        reward: ``(S, A)`` reward table.
        mask: ``(S, A)`` boolean allowed-action mask, non-empty per row.
            ``None`` allows every action.
        tolerance: sup-norm accuracy of the returned values.
        fixed_values: optional ``(state_mask, values)``; the selected states
            are not backed up and keep the given values throughout.

    Returns:
        ``(V, policy, Q)``. Disallowed entries of ``Q`` are ``-inf``. The
        policy is greedy on ``Q`` with ties (within ``tolerance``) going to
        the lowest action index.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    reward = _as_table(mdp, reward)
    if mask is None:
        mask = mdp.full_mask()
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("action mask must allow at least one action in every state")
    masked_reward = np.where(mask, reward, -np.inf)
    threshold = _stop_threshold(tolerance, mdp.discount)
    values = np.zeros(mdp.num_states)
    if fixed_values is not None:
        frozen, frozen_values = fixed_values
        frozen = np.asarray(frozen, dtype=bool)
        values[frozen] = np.asarray(frozen_values, dtype=float)[frozen]
    while True:
        q = masked_reward + mdp.discount * (mdp.transitions @ values).reshape(
            mdp.num_states, mdp.num_actions
        )
        updated = q.max(axis=1)
        if fixed_values is not None:
            updated[frozen] = values[frozen]
        delta = np.max(np.abs(updated - values))
        values = updated
        if delta < threshold:
            break
    q = masked_reward + mdp.discount * (mdp.transitions @ values).reshape(
        mdp.num_states, mdp.num_actions
    )
    return values, greedy(q, tolerance), q


def finite_horizon_values(
    mdp: TabularMdp, reward, horizon: int, minimize: bool = False, policy=None
) -> np.ndarray:
    """Undiscounted expected return over ``horizon`` steps.

    Optimal by default, pessimal with ``minimize``, or of the deterministic
    ``policy`` when one is given.
    """
    reward = _as_table(mdp, reward)
    values = np.zeros(mdp.num_states)
    if policy is not None:
        actions = np.asarray(policy, dtype=np.int64)
        r_pi = reward[np.arange(mdp.num_states), actions]
        p_pi = mdp.policy_matrix(actions)
        for _ in range(horizon):
            values = r_pi + p_pi @ values
        return values
    pick = np.min if minimize else np.max
    for _ in range(horizon):
        q = reward + (mdp.transitions @ values).reshape(mdp.num_states, mdp.num_actions)
        values = pick(q, axis=1)
    return values
