"""Expert demonstrations and Bayesian inference of the state-context mapping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .conflicts import context_policies, solve
from .mdp import DEFAULT_TOLERANCE
from .model import Clmdp
from .rollout import Sampler

REWARD_MATCH_ATOL = 1e-9


@dataclass(frozen=True)
class TrajectoryStep:
    state: int
    action: int
    rewards: tuple[float, ...]


@dataclass
class TrajectoryDataset:
    """Expert trajectories; each one ends on the transition into the goal."""

    trajectories: list[list[TrajectoryStep]] = field(default_factory=list)
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.trajectories)

    def steps(self):
        for trajectory in self.trajectories:
            yield from trajectory

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trajectories": [
                [{"state": st.state, "action": st.action, "rewards": list(st.rewards)} for st in traj]
                for traj in self.trajectories
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrajectoryDataset":
        return cls(
            trajectories=[
                [
                    TrajectoryStep(int(st["state"]), int(st["action"]), tuple(float(r) for r in st["rewards"]))
                    for st in traj
                ]
                for traj in doc.get("trajectories", [])
            ],
            seed=doc.get("seed"),
        )


def simulate_expert(
    model: Clmdp,
    num_trajectories: int = 10,
    max_steps: int | None = None,
    seed: int = 0,
    slack: float = 0.0,
    tolerance: float = DEFAULT_TOLERANCE,
    max_retries: int = 100,
) -> TrajectoryDataset:
    """Roll out the resolved global policy from uniformly drawn start states.

    Every step records the reward vector of the state's true context at the
    chosen action. Episodes that miss the goal within ``max_steps`` (default
    ``50 * |S|``) are discarded and redrawn, up to ``max_retries`` times per
    requested trajectory.

    Raises:
        RuntimeError: if the retry budget runs out, which means the expert
            policy cannot reach the goal in time.
    """
    if num_trajectories < 0:
        raise ValueError("num_trajectories must be non-negative")
    base = model.base
    max_steps = 50 * base.num_states if max_steps is None else max_steps
    dataset = TrajectoryDataset(seed=seed)
    if num_trajectories == 0:
        return dataset
    policy, diag = solve(model, slack, tolerance)
    if not diag.resolved:
        raise RuntimeError("model has no conflict-free policy to demonstrate")
    rewards = model.state_rewards()
    sampler = Sampler(base)
    rng = np.random.default_rng(seed)
    starts = np.asarray(base.start_states)
    budget = max_retries * num_trajectories
    while len(dataset.trajectories) < num_trajectories:
        if budget == 0:
            raise RuntimeError(f"no goal-reaching expert episode within {max_steps} steps")
        budget -= 1
        s = int(starts[rng.integers(starts.size)])
        trajectory = []
        for _ in range(max_steps):
            if s == base.goal_state:
                break
            a = int(policy.actions[s])
            trajectory.append(TrajectoryStep(s, a, tuple(rewards[:, s, a].tolist())))
            s = int(sampler.step(np.array([s]), np.array([a]), rng.random(1))[0])
        if s == base.goal_state:
            dataset.trajectories.append(trajectory)
    return dataset


@dataclass
class InferenceResult:
    z: np.ndarray
    posterior: np.ndarray  # (S, m), rows sum to 1
    policies: list[np.ndarray]
    possible: dict[tuple[int, int], list[int]]
    flagged: list[int]  # in-data states no context could explain

    def to_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "posterior": self.posterior.tolist(),
            "flagged_states": self.flagged,
        }


def infer_z(
    model: Clmdp,
    dataset: TrajectoryDataset,
    slack: float = 0.0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> InferenceResult:
    """Posterior over contexts per state from expert data; ``model.z`` is ignored.

    For a state seen in the data, each occurrence ``(s, a, r)`` adds
    ``1/|P(s, a)|`` to every context ``c`` in ``P(s, a)`` whose reward vector
    at ``(s, a)`` equals ``r``, where ``P(s, a)`` holds the contexts whose own
    optimal policy picks ``a`` at ``s``. Unseen states, and seen states whose
    ``P`` sets are all empty, get a uniform posterior. Each state is mapped to
    its most probable context, ties going to the higher meta-ordering
    priority. A seen state whose evidence rules out every context falls back
    to the uniform posterior and is flagged.
    """
    base = model.base
    m = model.num_contexts
    policies = context_policies(model, slack, tolerance)
    chosen = np.stack(policies)  # (m, S)
    tables = np.stack([model.f_r(c) for c in range(m)])  # (m, n, S, A)

    possible: dict[tuple[int, int], list[int]] = {}
    score = np.zeros((base.num_states, m))
    informed = np.zeros(base.num_states, dtype=bool)
    for step in dataset.steps():
        s, a = step.state, step.action
        members = np.flatnonzero(chosen[:, s] == a)
        possible.setdefault((s, a), []).extend(members.tolist())
        if members.size == 0:
            continue
        informed[s] = True
        observed = np.asarray(step.rewards)
        match = np.all(np.abs(tables[members, :, s, a] - observed) <= REWARD_MATCH_ATOL, axis=1)
        score[s, members[match]] += 1.0 / members.size

    posterior = np.full((base.num_states, m), 1.0 / m)
    totals = score.sum(axis=1)
    explained = informed & (totals > 0)
    posterior[explained] = score[explained] / totals[explained, None]
    flagged = np.flatnonzero(informed & (totals == 0)).tolist()

    # the meta-ordering decides among tied maxima
    by_priority = posterior[:, list(model.meta_ordering)]
    best = by_priority.max(axis=1, keepdims=True)
    first = np.argmax(by_priority >= best - 1e-12, axis=1)
    z = np.asarray(model.meta_ordering)[first]
    return InferenceResult(z, posterior, policies, possible, flagged)


def z_accuracy(true_z, inferred_z, num_contexts: int | None = None) -> tuple[float, np.ndarray]:
    """Agreement fraction and confusion counts (rows: true context, columns: inferred)."""
    true_z, inferred_z = np.asarray(true_z), np.asarray(inferred_z)
    if true_z.shape != inferred_z.shape:
        raise ValueError("mappings cover different numbers of states")
    m = num_contexts or int(max(true_z.max(initial=-1), inferred_z.max(initial=-1)) + 1)
    confusion = np.zeros((m, m), dtype=np.int64)
    np.add.at(confusion, (true_z, inferred_z), 1)
    fraction = float(np.mean(true_z == inferred_z)) if true_z.size else 1.0
    return fraction, confusion
