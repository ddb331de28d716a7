"""Contextual lexicographic MDP model and global policies."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mdp import TabularMdp, validate_mdp


@dataclass(frozen=True)
class Context:
    name: str
    ordering: int  # index into Clmdp.orderings
    rewards: int  # index into Clmdp.reward_vectors


@dataclass(frozen=True, eq=False)
class Clmdp:
    """A tabular MDP whose states carry a context selecting objective order and rewards.

    ``meta_ordering`` lists context indices from highest to lowest priority.
    ``reward_vectors[k]`` is an ``(n, S, A)`` array; context ``c`` uses
    ``reward_vectors[contexts[c].rewards]``. ``z`` maps each state to a
    context index and may be ``None`` when the mapping is unknown.
    """

    base: TabularMdp
    num_objectives: int
    contexts: tuple[Context, ...]
    meta_ordering: tuple[int, ...]
    orderings: tuple[tuple[int, ...], ...]
    reward_vectors: tuple[np.ndarray, ...]
    z: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "contexts", tuple(self.contexts))
        object.__setattr__(self, "meta_ordering", tuple(int(c) for c in self.meta_ordering))
        object.__setattr__(self, "orderings", tuple(tuple(int(i) for i in o) for o in self.orderings))
        object.__setattr__(
            self, "reward_vectors", tuple(np.asarray(r, dtype=float) for r in self.reward_vectors)
        )
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, dtype=np.int64))

    @property
    def num_contexts(self) -> int:
        return len(self.contexts)

    @property
    def top_context(self) -> int:
        return self.meta_ordering[0]

    def rank(self, context: int) -> int:
        """Position of ``context`` in the meta-ordering (0 is highest priority)."""
        return self.meta_ordering.index(context)

    def f_w(self, context: int) -> tuple[int, ...]:
        return self.orderings[self.contexts[context].ordering]

    def f_r(self, context: int) -> np.ndarray:
        return self.reward_vectors[self.contexts[context].rewards]

    def with_z(self, z) -> "Clmdp":
        return dataclasses.replace(self, z=None if z is None else np.asarray(z, dtype=np.int64))

    def with_base(self, base: TabularMdp) -> "Clmdp":
        return dataclasses.replace(self, base=base)

    def uniform(self, context: int) -> "Clmdp":
        """Same model with every state mapped to ``context``."""
        return self.with_z(np.full(self.base.num_states, context))

    def state_rewards(self, z=None) -> np.ndarray:
        """``(n, S, A)`` rewards where each state uses its own context's table."""
        z = self.z if z is None else np.asarray(z)
        out = np.empty((self.num_objectives, self.base.num_states, self.base.num_actions))
        for c in range(self.num_contexts):
            rows = z == c
            out[:, rows, :] = self.f_r(c)[:, rows, :]
        return out

    def validate(self) -> list[str]:
        problems = validate_mdp(self.base)
        m, n = self.num_contexts, self.num_objectives
        shape = (n, self.base.num_states, self.base.num_actions)
        if sorted(self.meta_ordering) != list(range(m)):
            problems.append(f"meta_ordering {self.meta_ordering} is not a permutation of contexts")
        for i, order in enumerate(self.orderings):
            if sorted(order) != list(range(n)):
                problems.append(f"ordering {i} {order} is not a permutation of objectives")
        if len(set(self.orderings)) != len(self.orderings):
            problems.append("orderings are not pairwise distinct")
        for k, table in enumerate(self.reward_vectors):
            if table.shape != shape:
                problems.append(f"reward vector {k} has shape {table.shape}, expected {shape}")
            elif not np.all(np.isfinite(table)):
                problems.append(f"reward vector {k} has non-finite entries")
        for c, ctx in enumerate(self.contexts):
            if not 0 <= ctx.ordering < len(self.orderings):
                problems.append(f"context {c} references unknown ordering {ctx.ordering}")
            if not 0 <= ctx.rewards < len(self.reward_vectors):
                problems.append(f"context {c} references unknown reward vector {ctx.rewards}")
        if self.z is not None:
            if self.z.shape != (self.base.num_states,):
                problems.append(f"z has shape {self.z.shape}")
            elif np.any((self.z < 0) | (self.z >= m)):
                problems.append("z maps a state to an unknown context")
        return problems

    def to_dict(self) -> dict:
        doc = self.base.to_dict()
        doc.update({
            "num_objectives": self.num_objectives,
            "contexts": [
                {"name": c.name, "ordering": c.ordering, "rewards": c.rewards} for c in self.contexts
            ],
            "meta_ordering": list(self.meta_ordering),
            "orderings": [list(o) for o in self.orderings],
            "f_R": [table.tolist() for table in self.reward_vectors],
            "z": None if self.z is None else self.z.tolist(),
        })
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Clmdp":
        z = doc.get("z")
        return cls(
            base=TabularMdp.from_dict(doc),
            num_objectives=int(doc["num_objectives"]),
            contexts=tuple(
                Context(str(c["name"]), int(c["ordering"]), int(c["rewards"])) for c in doc["contexts"]
            ),
            meta_ordering=tuple(doc["meta_ordering"]),
            orderings=tuple(tuple(o) for o in doc["orderings"]),
            reward_vectors=tuple(np.asarray(t, dtype=float) for t in doc["f_R"]),
            z=None if z is None else np.asarray(z, dtype=np.int64),
        )


@dataclass(eq=False)
class GlobalPolicy:
    """Deterministic state -> action map plus the context that supplied each action."""

    actions: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=np.int64)

    def copy(self) -> "GlobalPolicy":
        return GlobalPolicy(self.actions.copy(), self.provenance.copy())

    def __eq__(self, other):
        if not isinstance(other, GlobalPolicy):
            return NotImplemented
        return np.array_equal(self.actions, other.actions) and np.array_equal(
            self.provenance, other.provenance
        )

    def to_list(self) -> list[dict]:
        return [
            {"state": s, "action": int(a), "provenance": int(p)}
            for s, (a, p) in enumerate(zip(self.actions, self.provenance))
        ]

    @classmethod
    def from_list(cls, records: Sequence[Mapping]) -> "GlobalPolicy":
        ordered = sorted(records, key=lambda r: int(r["state"]))
        if [int(r["state"]) for r in ordered] != list(range(len(ordered))):
            raise ValueError("policy records must cover states 0..S-1 exactly once")
        return cls(
            np.array([int(r["action"]) for r in ordered]),
            np.array([int(r["provenance"]) for r in ordered]),
        )
