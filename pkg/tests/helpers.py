"""Random instance generators and independent oracles for the test-suite.

The oracles deliberately avoid the package's solvers: reachability is a
plain breadth-first search, policy values come from a dense linear solve,
and optimality claims are checked by enumerating deterministic policies.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from clmdp.lexi import lvi
from clmdp.mdp import TabularMdp
from clmdp.model import Clmdp, Context


# ----------------------------------------------------------------- MDPs


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    deterministic: bool = False,
    max_branch: int = 3,
    discount: float = 0.9,
    goal_reachable: bool = False,
) -> TabularMdp:
    """Random MDP whose last state is the absorbing goal.

    With ``goal_reachable`` every state gets one action with a successor
    strictly closer (in a random ranking) to the goal, so the goal can be
    reached from everywhere under some policy.
    """
    goal = num_states - 1
    rank = rng.permutation(goal)  # rank[s]: position of s in the chain towards the goal
    by_rank = np.argsort(rank)
    successors = {}
    for s in range(num_states):
        for a in range(num_actions):
            if s == goal:
                successors[(s, a)] = [(goal, 1.0)]
                continue
            k = 1 if deterministic else int(rng.integers(1, min(max_branch, num_states) + 1))
            targets = rng.choice(num_states, size=k, replace=False)
            probs = np.ones(1) if k == 1 else rng.dirichlet(np.ones(k))
            successors[(s, a)] = list(zip(targets.tolist(), probs.tolist()))
        if goal_reachable and s != goal:
            closer = goal if rank[s] == 0 else int(by_rank[rank[s] - 1])
            a = int(rng.integers(num_actions))
            nxt = successors[(s, a)]
            if all(t != closer for t, _ in nxt):
                if deterministic:
                    successors[(s, a)] = [(closer, 1.0)]
                else:
                    t0, p0 = nxt[0]
                    successors[(s, a)] = [(closer, p0)] + nxt[1:]
    return TabularMdp.from_successors(num_states, num_actions, successors, goal, [0], discount)


def chain_mdp(length: int, advance: float, discount: float) -> TabularMdp:
    """States 0..length-1 then the goal; one action advances with ``advance`` else resets to 0."""
    goal = length
    successors = {}
    for s in range(length):
        successors[(s, 0)] = [(s + 1, advance), (0, 1.0 - advance)]
    successors[(goal, 0)] = [(goal, 1.0)]
    return TabularMdp.from_successors(length + 1, 1, successors, goal, [0], discount)


def dense_transitions(mdp: TabularMdp) -> np.ndarray:
    return mdp.transitions.toarray().reshape(mdp.num_states, mdp.num_actions, mdp.num_states)


# ----------------------------------------------------------------- oracles


def bfs_dead_states(mdp: TabularMdp, actions) -> set[int]:
    """States with no path to the goal in the policy graph (reverse BFS)."""
    actions = np.asarray(actions)
    preds: dict[int, list[int]] = {}
    for s in range(mdp.num_states):
        for sp, p in mdp.successors(s, int(actions[s])):
            if p > 0:
                preds.setdefault(sp, []).append(s)
    seen = {mdp.goal_state}
    queue = deque([mdp.goal_state])
    while queue:
        t = queue.popleft()
        for s in preds.get(t, ()):
            if s not in seen:
                seen.add(s)
                queue.append(s)
    return set(range(mdp.num_states)) - seen


def exact_policy_values(mdp: TabularMdp, actions, reward: np.ndarray) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = R_pi`` densely."""
    P = dense_transitions(mdp)
    idx = np.arange(mdp.num_states)
    actions = np.asarray(actions)
    p_pi = P[idx, actions]
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, reward[idx, actions])


def all_policy_values(mdp: TabularMdp, rewards: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values of every deterministic policy: ``(policies (K, S), values (K, n, S))``."""
    S, A = mdp.num_states, mdp.num_actions
    P = dense_transitions(mdp)
    policies = np.array(list(itertools.product(range(A), repeat=S)))
    idx = np.arange(S)
    p_pi = P[idx, policies]  # (K, S, S)
    system = np.eye(S) - mdp.discount * p_pi
    r_pi = rewards[:, idx, policies]  # (n, K, S)
    values = np.stack([np.linalg.solve(system, r_pi[k][..., None])[..., 0] for k in range(rewards.shape[0])], axis=1)
    return policies, values


def lex_compare(a, b, tol: float) -> int:
    """Sign of ``a - b`` in lexicographic order, treating gaps within ``tol`` as ties."""
    for x, y in zip(a, b):
        if x > y + tol:
            return 1
        if x < y - tol:
            return -1
    return 0


# ----------------------------------------------------------------- contextual models


def random_orderings(rng, n: int, count: int, first: int | None = None) -> list[tuple[int, ...]]:
    perms = [p for p in itertools.permutations(range(n)) if first is None or p[0] == first]
    picks = rng.choice(len(perms), size=min(count, len(perms)), replace=False)
    return [perms[i] for i in picks]


def random_clmdp(
    rng: np.random.Generator,
    num_states: int = 20,
    num_actions: int = 3,
    num_contexts: int = 3,
    num_objectives: int = 3,
    deterministic: bool = False,
    discount: float = 0.9,
    top_share: float = 0.3,
) -> Clmdp:
    """Random model that admits a conflict-free policy under its meta-ordering.

    Objective 0 charges one unit per step and pays a non-negative bonus for
    entering the goal, so any goal-reaching continuation beats never
    arriving. Every context below the top one ranks objective 0 first. The
    top context ranks another objective first (when there is one) and owns
    roughly ``top_share`` of the states on top of its uniform share; its own
    policy must reach the goal from every state (resampled until it does).
    """
    while True:
        mdp = random_mdp(rng, num_states, num_actions, deterministic, discount=discount, goal_reachable=True)
        model = _random_contexts(rng, mdp, num_contexts, num_objectives, top_share)
        top = model.top_context
        policy, _ = lvi(mdp, model.f_r(top), model.f_w(top))
        if not bfs_dead_states(mdp, policy):
            return model


def _random_contexts(rng, mdp: TabularMdp, m: int, n: int, top_share: float = 0.0) -> Clmdp:
    S, A, goal = mdp.num_states, mdp.num_actions, mdp.goal_state
    into_goal = dense_transitions(mdp)[:, :, goal]
    tables = []
    for _ in range(m):
        table = np.empty((n, S, A))
        table[0] = -1.0 + rng.uniform(0.0, 5.0) * into_goal
        table[1:] = rng.integers(-3, 1, size=(n - 1, S, A))
        table[:, goal, :] = 0.0
        tables.append(table)
    meta = tuple(int(c) for c in rng.permutation(m))
    lower = random_orderings(rng, n, m, first=0)
    top_order = random_orderings(rng, n, 1, first=1 if n > 1 else None)[0]
    orderings = [top_order] + lower
    contexts = []
    for c in range(m):
        if c == meta[0]:
            contexts.append(Context(f"c{c}", 0, c))
        else:
            contexts.append(Context(f"c{c}", int(rng.integers(1, len(orderings))), c))
    z = rng.integers(m, size=S)
    z[rng.random(S) < top_share] = meta[0]
    return Clmdp(mdp, n, tuple(contexts), meta, tuple(orderings), tuple(tables), z)


def conflicted_clmdp(rng: np.random.Generator, **kwargs) -> Clmdp:
    """``random_clmdp`` draw whose stitched policy has at least one conflict."""
    from clmdp.conflicts import compile_global_policy

    while True:
        model = random_clmdp(rng, **kwargs)
        policy, _ = compile_global_policy(model)
        if bfs_dead_states(model.base, policy.actions):
            return model


def unreachable_clmdp(rng: np.random.Generator, num_states: int = 12) -> Clmdp:
    """Model with one extra state that no action can leave, so no policy is conflict-free."""
    model = random_clmdp(rng, num_states - 1)
    base = model.base
    S, A = num_states, base.num_actions
    successors = {}
    for s in range(S - 1):
        for a in range(A):
            successors[(s, a)] = base.successors(s, a)
    for a in range(A):
        successors[(S - 1, a)] = [(S - 1, 1.0)]
    mdp = TabularMdp.from_successors(S, A, successors, base.goal_state, base.start_states, base.discount)
    tables = tuple(np.concatenate([t, np.zeros((t.shape[0], 1, A))], axis=1) for t in model.reward_vectors)
    z = np.append(model.z, int(rng.integers(model.num_contexts)))
    return Clmdp(mdp, model.num_objectives, model.contexts, model.meta_ordering, model.orderings, tables, z)


def trapped_clmdp(rng: np.random.Generator, num_states: int = 12, num_contexts: int = 3) -> Clmdp:
    """Model with no conflict-free policy: a top-context state prefers a self-loop forever.

    State 0 belongs to the top context, whose first objective pays nothing
    for staying (action 0) and charges for every other action, so the top
    context's own choice strands state 0 and no lower context may override it.
    """
    mdp = random_mdp(rng, num_states, 3, goal_reachable=True)
    successors = {(s, a): mdp.successors(s, a) for s in range(num_states) for a in range(3)}
    successors[(0, 0)] = [(0, 1.0)]
    mdp = TabularMdp.from_successors(num_states, 3, successors, mdp.goal_state, [0], mdp.discount)
    base = _random_contexts(rng, mdp, num_contexts, 3)
    top = base.top_context
    first = base.f_w(top)[0]
    tables = [t.copy() for t in base.reward_vectors]
    table = tables[base.contexts[top].rewards]
    table[first, 0, :] = -1.0
    table[first, 0, 0] = 0.0
    z = base.z.copy()
    z[0] = top
    return Clmdp(mdp, 3, base.contexts, base.meta_ordering, base.orderings, tuple(tables), z)


def cycle_instance() -> Clmdp:
    """Four-state model whose stitched policy loops between states 1 and 2.

    States 0, 1, 2 and the goal 3. Action 0 moves forward, action 1 moves
    back, action 2 jumps from state 1 straight to the goal at an extra cost
    (elsewhere it stays put). Context A (objective 0 first) owns states 0,
    1 and the goal; context B (objective 1 first) owns state 2, where moving
    forward is penalised. B outranks A.
    """
    succ = {
        (0, 0): [(1, 1.0)], (0, 1): [(0, 1.0)], (0, 2): [(0, 1.0)],
        (1, 0): [(2, 1.0)], (1, 1): [(0, 1.0)], (1, 2): [(3, 1.0)],
        (2, 0): [(3, 1.0)], (2, 1): [(1, 1.0)], (2, 2): [(2, 1.0)],
    }
    for a in range(3):
        succ[(3, a)] = [(3, 1.0)]
    mdp = TabularMdp.from_successors(4, 3, succ, 3, [0], 0.9)
    task = np.full((4, 3), -1.0)
    task[1, 2] = -4.0 + 10.0
    task[2, 0] = -1.0 + 10.0
    task[3] = 0.0
    penalty = np.zeros((4, 3))
    penalty[2, 0] = -5.0
    rewards = np.stack([task, penalty])
    return Clmdp(
        base=mdp,
        num_objectives=2,
        contexts=(Context("A", 0, 0), Context("B", 1, 0)),
        meta_ordering=(1, 0),
        orderings=((0, 1), (1, 0)),
        reward_vectors=(rewards,),
        z=np.array([0, 0, 1, 0]),
    )
