"""Procedural gridworld benchmarks: salp sample collection, semi-autonomous taxi, warehouse delivery.

Each generator returns a three-context, three-objective ``Clmdp``. States are
``(cell, carrying)`` pairs over obstacle-free cells plus one absorbing goal
state reached by the interact action at the goal cell while carrying.
Objective 0 is always the task objective (step cost and goal bonus); the two
feature objectives penalise expected entries into their feature cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .conflicts import compile_global_policy, conflict_checker, reachable_from
from .lexi import lvi
from .mdp import DEFAULT_DISCOUNT, TabularMdp
from .model import Clmdp, Context, GlobalPolicy

Cell = tuple[int, int]

MOVES: tuple[Cell, ...] = ((0, -1), (0, 1), (1, 0), (-1, 0))
ACTION_NAMES = ("N", "S", "E", "W", "interact")
INTERACT = 4

# published fixture seeds, as found by search_fixture_seeds() with default settings
FIXTURE_SEEDS: dict[str, tuple[int, ...]] = {
    "salp": (1, 6, 8, 11, 13),
    "taxi": (11, 12, 14, 21, 34),
    "warehouse": (2, 6, 9, 11, 19),
}


@dataclass(frozen=True)
class RewardMagnitudes:
    goal_bonus: float = 100.0
    step_cost: float = 1.0
    feature_penalty: float = 10.0
    context_scale: float = 2.0


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    goal_cell: Cell
    start_cells: frozenset[Cell]
    feature_cells: Mapping[str, frozenset[Cell]] = field(default_factory=dict)
    obstacle_cells: frozenset[Cell] = frozenset()
    pickup_cell: Cell | None = None
    slip_probability: float = 0.1
    seed: int | None = None
    # carrying flags an episode may start with; 0 only applies when there is a pickup cell
    start_flags: tuple[int, ...] = (0,)

    def __post_init__(self):
        object.__setattr__(self, "start_cells", frozenset(map(tuple, self.start_cells)))
        object.__setattr__(self, "obstacle_cells", frozenset(map(tuple, self.obstacle_cells)))
        object.__setattr__(
            self, "feature_cells",
            {k: frozenset(map(tuple, v)) for k, v in sorted(self.feature_cells.items())},
        )
        object.__setattr__(self, "goal_cell", tuple(self.goal_cell))
        if self.pickup_cell is not None:
            object.__setattr__(self, "pickup_cell", tuple(self.pickup_cell))
        object.__setattr__(self, "start_flags", tuple(sorted(set(int(f) for f in self.start_flags))))

    def validate(self) -> list[str]:
        problems = []
        if self.width < 1 or self.height < 1:
            problems.append("grid dimensions must be positive")
        if not 0.0 <= self.slip_probability < 1.0:
            problems.append("slip_probability must lie in [0, 1)")
        special = [("goal", self.goal_cell)] + [("start", c) for c in sorted(self.start_cells)]
        if self.pickup_cell is not None:
            special.append(("pickup", self.pickup_cell))
        for label, cell in special:
            if not self.in_bounds(cell):
                problems.append(f"{label} cell {cell} outside the grid")
            if cell in self.obstacle_cells:
                problems.append(f"{label} cell {cell} is an obstacle")
        if not self.start_cells:
            problems.append("no start cells")
        if not self.start_flags or not set(self.start_flags) <= {0, 1}:
            problems.append(f"start_flags {self.start_flags} must be a non-empty subset of {{0, 1}}")
        return problems

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "goal_cell": list(self.goal_cell),
            "start_cells": sorted(map(list, self.start_cells)),
            "feature_cells": {k: sorted(map(list, v)) for k, v in self.feature_cells.items()},
            "obstacle_cells": sorted(map(list, self.obstacle_cells)),
            "pickup_cell": None if self.pickup_cell is None else list(self.pickup_cell),
            "slip_probability": self.slip_probability,
            "seed": self.seed,
            "start_flags": list(self.start_flags),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GridSpec":
        pickup = doc.get("pickup_cell")
        return cls(
            width=int(doc["width"]),
            height=int(doc["height"]),
            goal_cell=tuple(doc["goal_cell"]),
            start_cells=frozenset(tuple(c) for c in doc["start_cells"]),
            feature_cells={k: frozenset(tuple(c) for c in v) for k, v in doc.get("feature_cells", {}).items()},
            obstacle_cells=frozenset(tuple(c) for c in doc.get("obstacle_cells", [])),
            pickup_cell=None if pickup is None else tuple(pickup),
            slip_probability=float(doc.get("slip_probability", 0.1)),
            seed=doc.get("seed"),
            start_flags=tuple(doc.get("start_flags", (0,))),
        )


@dataclass(frozen=True)
class Penalty:
    """Feature objective: penalise expected entries into ``kind`` cells (or their complement)."""

    objective: int
    kind: str
    complement: bool = False


@dataclass(frozen=True)
class DomainDef:
    name: str
    objectives: tuple[str, ...]
    context_names: tuple[str, ...]
    orderings: tuple[tuple[int, ...], ...]
    meta_ordering: tuple[int, ...]
    penalties: tuple[Penalty, ...]
    # (features present at the cell, carrying flag) -> contexts whose condition holds
    conditions: Callable[[frozenset[str], int], set[int]]
    default_densities: Mapping[str, float]


def _salp_conditions(features, carrying):
    matched = set()
    if "coral" in features and carrying:
        matched.add(1)
    if "eddy" in features:
        matched.add(2)
    return matched


def _taxi_conditions(features, carrying):
    matched = set()
    if "autonomy_road" in features:
        matched.add(1)
    if "pothole" in features and carrying:
        matched.add(2)
    return matched


def _warehouse_conditions(features, carrying):
    matched = set()
    if "slippery" in features:
        matched.add(1)
    if "narrow_corridor" in features:
        matched.add(2)
    return matched


DOMAINS: dict[str, DomainDef] = {
    "salp": DomainDef(
        name="salp",
        objectives=("sample_delivery", "coral_damage", "eddy_battery"),
        context_names=("task_completion", "coral", "eddy"),
        orderings=((0, 1, 2), (1, 0, 2), (2, 0, 1)),
        meta_ordering=(1, 0, 2),
        penalties=(Penalty(1, "coral"), Penalty(2, "eddy")),
        conditions=_salp_conditions,
        default_densities={"coral": 0.12, "eddy": 0.08},
    ),
    "taxi": DomainDef(
        name="taxi",
        objectives=("dropoff", "autonomy_travel", "comfort"),
        context_names=("urban_transit", "self_driving", "rough_terrain"),
        orderings=((0, 2, 1), (1, 0, 2), (2, 0, 1)),
        meta_ordering=(1, 0, 2),
        penalties=(Penalty(1, "autonomy_road", complement=True), Penalty(2, "pothole")),
        conditions=_taxi_conditions,
        default_densities={"pothole": 0.12},
    ),
    "warehouse": DomainDef(
        name="warehouse",
        objectives=("delivery", "slip_damage", "worker_inconvenience"),
        context_names=("normal_operation", "caution_zone", "worker_zone"),
        orderings=((0, 1, 2), (1, 0, 2), (2, 0, 1)),
        meta_ordering=(1, 0, 2),
        penalties=(Penalty(1, "slippery"), Penalty(2, "narrow_corridor")),
        conditions=_warehouse_conditions,
        default_densities={"slippery": 0.12, "narrow_corridor": 0.08},
    ),
}


@dataclass(eq=False)
class DomainInstance:
    model: Clmdp
    grid: GridSpec
    domain: str
    # per state: (cell, carrying) or None for the goal state
    states: list[tuple[Cell, int] | None]
    # per state: every context whose condition holds, before the meta-ordering tie-break
    attribution: list[tuple[int, ...]]

    def to_dict(self) -> dict:
        doc = self.model.to_dict()
        doc["domain"] = self.domain
        doc["grid"] = self.grid.to_dict()
        doc["state_labels"] = [None if s is None else [s[0][0], s[0][1], s[1]] for s in self.states]
        return doc


class InfeasibleSpec(ValueError):
    """The grid admits no conflict-free policy under the meta-ordering."""


def build_instance(
    domain: str,
    spec: GridSpec,
    rewards: RewardMagnitudes = RewardMagnitudes(),
    discount: float = DEFAULT_DISCOUNT,
    check_feasible: bool = True,
) -> DomainInstance:
    if domain not in DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    problems = spec.validate()
    if problems:
        raise ValueError("; ".join(problems))
    ddef = DOMAINS[domain]

    free = [
        (x, y)
        for y in range(spec.height)
        for x in range(spec.width)
        if (x, y) not in spec.obstacle_cells
    ]
    cell_pos = {c: i for i, c in enumerate(free)}
    flags = (0, 1) if spec.pickup_cell is not None else (1,)
    states: list[tuple[Cell, int] | None] = [(c, f) for f in flags for c in free]
    index = {s: i for i, s in enumerate(states)}
    goal = len(states)
    states.append(None)
    n_states, n_actions = len(states), len(ACTION_NAMES)

    slip = spec.slip_probability
    successors: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for s, label in enumerate(states):
        if label is None:
            for a in range(n_actions):
                successors[(s, a)] = [(goal, 1.0)]
            continue
        cell, flag = label
        for a, (dx, dy) in enumerate(MOVES):
            target = (cell[0] + dx, cell[1] + dy)
            if target not in cell_pos:
                successors[(s, a)] = [(s, 1.0)]
            elif slip > 0.0:
                successors[(s, a)] = [(index[(target, flag)], 1.0 - slip), (s, slip)]
            else:
                successors[(s, a)] = [(index[(target, flag)], 1.0)]
        if spec.pickup_cell is not None and flag == 0 and cell == spec.pickup_cell:
            successors[(s, INTERACT)] = [(index[(cell, 1)], 1.0)]
        elif flag == 1 and cell == spec.goal_cell:
            successors[(s, INTERACT)] = [(goal, 1.0)]
        else:
            successors[(s, INTERACT)] = [(s, 1.0)]

    start_flags = [f for f in spec.start_flags if f in flags] or [flags[0]]
    starts = sorted(index[(c, f)] for f in start_flags for c in spec.start_cells)
    mdp = TabularMdp.from_successors(n_states, n_actions, successors, goal, starts, discount)

    base_rewards = _base_rewards(ddef, spec, mdp, states, rewards)
    vectors = []
    for c, order in enumerate(ddef.orderings):
        table = base_rewards.copy()
        table[order[0]] *= rewards.context_scale
        vectors.append(table)

    attribution = []
    z = np.zeros(n_states, dtype=np.int64)
    rank = {c: i for i, c in enumerate(ddef.meta_ordering)}
    for s, label in enumerate(states):
        if label is None:
            matched: set[int] = set()
        else:
            cell, flag = label
            features = frozenset(k for k, cells in spec.feature_cells.items() if cell in cells)
            matched = ddef.conditions(features, flag)
        attribution.append(tuple(sorted(matched)))
        # unmatched states fall back to the first context (task-oriented default)
        z[s] = min(matched, key=rank.__getitem__) if matched else 0

    model = Clmdp(
        base=mdp,
        num_objectives=len(ddef.objectives),
        contexts=tuple(Context(name, c, c) for c, name in enumerate(ddef.context_names)),
        meta_ordering=ddef.meta_ordering,
        orderings=ddef.orderings,
        reward_vectors=tuple(vectors),
        z=z,
    )
    instance = DomainInstance(model, spec, domain, states, attribution)
    if check_feasible:
        _check_feasible(instance)
    return instance


def _base_rewards(ddef, spec, mdp, states, rewards) -> np.ndarray:
    n_states, n_actions = mdp.num_states, mdp.num_actions
    table = np.zeros((len(ddef.objectives), n_states, n_actions))
    goal = mdp.goal_state
    T = mdp.transitions
    into_goal = np.asarray(T[:, goal].todense()).reshape(n_states, n_actions)
    table[0] = -rewards.step_cost + rewards.goal_bonus * into_goal
    for pen in ddef.penalties:
        cells = spec.feature_cells.get(pen.kind, frozenset())
        hit = np.array(
            [label is not None and ((label[0] in cells) != pen.complement) for label in states],
            dtype=float,
        )
        table[pen.objective] = -rewards.feature_penalty * (T @ hit).reshape(n_states, n_actions)
    table[:, goal, :] = 0.0
    return table


def _check_feasible(instance: DomainInstance) -> None:
    model = instance.model
    unreachable = _unreachable_under_any_action(model.base)
    if unreachable:
        raise InfeasibleSpec(f"goal unreachable from states {sorted(unreachable)[:10]}")
    top = model.top_context
    top_policy, _ = lvi(model.base, model.f_r(top), model.f_w(top))
    report = conflict_checker(GlobalPolicy(top_policy, np.full_like(top_policy, top)), model.base)
    if report.has_conflict:
        raise InfeasibleSpec(
            f"policy of top-priority context {top} has {len(report.conflict_states)} dead-end states"
        )


def _unreachable_under_any_action(mdp: TabularMdp) -> set[int]:
    coo = mdp.transitions.tocoo()
    preds: dict[int, list[int]] = {}
    for row, col in zip(coo.row.tolist(), coo.col.tolist()):
        preds.setdefault(col, []).append(row // mdp.num_actions)
    seen = {mdp.goal_state}
    stack = [mdp.goal_state]
    while stack:
        s = stack.pop()
        for p in preds.get(s, ()):
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return set(range(mdp.num_states)) - seen


def make_salp(spec: GridSpec, **kwargs) -> DomainInstance:
    return build_instance("salp", spec, **kwargs)


def make_taxi(spec: GridSpec, **kwargs) -> DomainInstance:
    return build_instance("taxi", spec, **kwargs)


def make_warehouse(spec: GridSpec, **kwargs) -> DomainInstance:
    return build_instance("warehouse", spec, **kwargs)


def _road_path(rng: np.random.Generator, a: Cell, b: Cell) -> set[Cell]:
    """Random monotone lattice path between two cells."""
    path = {a}
    x, y = a
    while (x, y) != b:
        steps = []
        if x != b[0]:
            steps.append((int(np.sign(b[0] - x)), 0))
        if y != b[1]:
            steps.append((0, int(np.sign(b[1] - y))))
        dx, dy = steps[rng.integers(len(steps))]
        x, y = x + dx, y + dy
        path.add((x, y))
    return path


def _grow_patches(rng: np.random.Generator, open_cells: list[Cell], count: int, max_patch: int) -> set[Cell]:
    available = set(open_cells)
    chosen: set[Cell] = set()
    while len(chosen) < count and available:
        pool = sorted(available)
        patch = [pool[rng.integers(len(pool))]]
        available.discard(patch[0])
        size = int(rng.integers(1, max_patch + 1))
        while len(patch) < size and len(chosen) + len(patch) < count:
            frontier = sorted(
                {(x + dx, y + dy) for x, y in patch for dx, dy in MOVES} & available
            )
            if not frontier:
                break
            nxt = frontier[rng.integers(len(frontier))]
            available.discard(nxt)
            patch.append(nxt)
        chosen.update(patch)
    return chosen


def random_grid_spec(
    domain: str,
    seed: int,
    width: int = 8,
    height: int = 8,
    densities: Mapping[str, float] | None = None,
    slip_probability: float = 0.1,
    num_starts: int | None = None,
    obstacle_density: float = 0.0,
    max_patch: int = 6,
    rng: np.random.Generator | None = None,
) -> GridSpec:
    """Sample one layout; feasibility is checked by ``generate``.

    Feature cells are placed as contiguous patches of up to ``max_patch``
    cells until each kind reaches its density. With ``num_starts=None``
    episodes may start anywhere other than the goal and pickup cells,
    carrying or not; otherwise that many distinct feature-free start cells
    are drawn and episodes start empty-handed.
    """
    ddef = DOMAINS[domain]
    rng = np.random.default_rng(seed) if rng is None else rng
    dens = dict(ddef.default_densities)
    dens.update(densities or {})
    cells = [(x, y) for y in range(height) for x in range(width)]
    n_cells = len(cells)
    picks = rng.permutation(n_cells)
    goal = cells[picks[0]]
    pickup = cells[picks[1]]
    if num_starts is None:
        starts = frozenset(cells) - {goal, pickup}
        start_flags = (0, 1)
        reserved = {goal, pickup}
    else:
        starts = frozenset(cells[i] for i in picks[2: 2 + num_starts])
        start_flags = (0,)
        reserved = {goal, pickup, *starts}
    features: dict[str, set[Cell]] = {}
    if domain == "taxi":
        features["autonomy_road"] = _road_path(rng, pickup, goal)
        reserved |= features["autonomy_road"]
    open_cells = [c for c in cells if c not in reserved]
    for kind in sorted(dens):
        k = int(round(dens[kind] * n_cells))
        features[kind] = _grow_patches(rng, open_cells, k, max_patch)
    taken = set().union(*features.values()) if features else set()
    free_for_obstacles = [c for c in open_cells if c not in taken]
    n_obs = int(round(obstacle_density * n_cells))
    obstacles = {free_for_obstacles[i] for i in rng.permutation(len(free_for_obstacles))[:n_obs]}
    return GridSpec(
        width=width,
        height=height,
        goal_cell=goal,
        start_cells=starts,
        feature_cells={k: frozenset(v) for k, v in features.items()},
        obstacle_cells=frozenset(obstacles),
        pickup_cell=pickup,
        slip_probability=slip_probability,
        seed=seed,
        start_flags=start_flags,
    )


def generate(
    domain: str,
    seed: int,
    width: int = 8,
    height: int = 8,
    densities: Mapping[str, float] | None = None,
    slip_probability: float = 0.1,
    num_starts: int | None = None,
    obstacle_density: float = 0.0,
    max_patch: int = 6,
    rewards: RewardMagnitudes = RewardMagnitudes(),
    discount: float = DEFAULT_DISCOUNT,
    max_attempts: int = 200,
) -> DomainInstance:
    """Seeded layout sampling with rejection of infeasible layouts."""
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        spec = random_grid_spec(
            domain, seed, width, height, densities, slip_probability, num_starts,
            obstacle_density, max_patch, rng=rng,
        )
        try:
            return build_instance(domain, spec, rewards, discount)
        except InfeasibleSpec:
            continue
    raise InfeasibleSpec(f"no feasible {domain} layout after {max_attempts} attempts (seed {seed})")


def generate_from_config(config: Mapping) -> DomainInstance:
    """Build an instance from a domain config document.

    Explicit layouts (``goal_cell`` and ``start_cells`` present) are used as
    given; otherwise a layout is sampled from ``seed`` and ``densities``.
    """
    domain = config["domain"]
    rewards = RewardMagnitudes(**config.get("rewards", {}))
    discount = float(config.get("discount", config.get("gamma", DEFAULT_DISCOUNT)))
    if "goal_cell" in config and "start_cells" in config:
        spec = GridSpec.from_dict(config)
        return build_instance(domain, spec, rewards, discount)
    return generate(
        domain,
        int(config.get("seed", 0)),
        width=int(config.get("width", 8)),
        height=int(config.get("height", 8)),
        densities=config.get("densities"),
        slip_probability=float(config.get("slip_probability", 0.1)),
        num_starts=None if config.get("num_starts") is None else int(config["num_starts"]),
        obstacle_density=float(config.get("obstacle_density", 0.0)),
        max_patch=int(config.get("max_patch", 6)),
        rewards=rewards,
        discount=discount,
    )


def stitching_dead_ends(instance: DomainInstance) -> int:
    """Dead-end states of the resolver-free stitched policy that some start state can reach."""
    model = instance.model
    policy, _ = compile_global_policy(model)
    report = conflict_checker(policy, model.base)
    if not report.has_conflict:
        return 0
    reach = reachable_from(policy, model.base, model.base.start_states)
    return int(reach[sorted(report.conflict_states)].sum())


def search_fixture_seeds(domain: str, count: int = 5, max_seed: int = 1000, **options) -> tuple[int, ...]:
    """Smallest seeds whose stitched policy strands some start state without the resolver."""
    found = []
    for seed in range(max_seed):
        if stitching_dead_ends(generate(domain, seed, **options)) > 0:
            found.append(seed)
            if len(found) == count:
                return tuple(found)
    raise RuntimeError(f"only {len(found)} qualifying {domain} seeds below {max_seed}")
