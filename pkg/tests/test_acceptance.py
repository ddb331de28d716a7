"""Acceptance suite: one group of tests per numbered criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one PASS/FAIL line per criterion.
"""

import itertools
import time

import numpy as np
import pytest

from clmdp.baselines import b2_lmdp_omega, b3_scalarization
from clmdp.cli import main
from clmdp.conflicts import compile_global_policy, conflict_checker, solve
from clmdp.domains import FIXTURE_SEEDS, generate
from clmdp.harness import ExperimentConfig, run_experiment
from clmdp.inference import TrajectoryDataset, TrajectoryStep, infer_z, simulate_expert, z_accuracy
from clmdp.lexi import lvi
from clmdp.mdp import value_iteration
from clmdp.model import Clmdp, Context

from .conftest import DOMAIN_NAMES
from .helpers import (
    all_policy_values,
    bfs_dead_states,
    chain_mdp,
    conflicted_clmdp,
    exact_policy_values,
    lex_compare,
    random_clmdp,
    random_mdp,
    trapped_clmdp,
    unreachable_clmdp,
)

BASELINES = ("B1", "B2", "B3", "B4", "B6")


def criterion(n):
    return pytest.mark.criterion(n)


# ---------------------------------------------------------------- 1


@criterion(1)
def test_checker_matches_bfs_on_500_instances():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    agree = 0
    for i in range(500):
        n_states = int(rng.integers(2, 201))
        n_actions = int(rng.integers(1, 5))
        mdp = random_mdp(rng, n_states, n_actions, deterministic=bool(i % 2))
        policy = rng.integers(n_actions, size=n_states)
        report = conflict_checker(policy, mdp)
        agree += set(report.conflict_states) == bfs_dead_states(mdp, policy)
    elapsed = time.perf_counter() - start
    print(f"criterion 1: {agree}/500 agree in {elapsed:.2f}s")
    assert agree == 500
    assert elapsed < 10.0


# ---------------------------------------------------------------- 2 and 3


@pytest.fixture(scope="module")
def resolver_runs():
    """200 models admitting a conflict-free policy; 50 of them conflict before resolution."""
    rng = np.random.default_rng(7)
    models = []
    for i in range(150):
        models.append(random_clmdp(
            rng, int(rng.integers(8, 30)), num_contexts=int(rng.integers(2, 5)), deterministic=bool(i % 2)
        ))
    for i in range(50):
        models.append(conflicted_clmdp(
            rng, num_states=int(rng.integers(8, 20)), num_contexts=int(rng.integers(2, 5)), deterministic=True
        ))
    runs = []
    for model in models:
        compiled, _ = compile_global_policy(model)
        policy, diag = solve(model)
        runs.append((model, compiled, policy, diag))
    return runs


@criterion(2)
def test_resolver_is_sound_on_feasible_models(resolver_runs):
    conflicted = sum(diag.conflicts_found > 0 for _, _, _, diag in resolver_runs)
    print(f"criterion 2: {len(resolver_runs)} models, {conflicted} with conflicts before resolution")
    assert conflicted >= 50
    for model, _, policy, diag in resolver_runs:
        assert diag.resolved
        assert not conflict_checker(policy, model.base).has_conflict
        assert bfs_dead_states(model.base, policy.actions) == set()


@criterion(2)
@pytest.mark.parametrize("make", [trapped_clmdp, unreachable_clmdp])
def test_resolver_reports_failure_on_infeasible_models(make):
    rng = np.random.default_rng(11)
    for _ in range(10):
        _, diag = solve(make(rng))
        assert not diag.resolved


@criterion(3)
def test_resolver_never_touches_contexts_above_the_window(resolver_runs):
    checked = 0
    for model, compiled, policy, diag in resolver_runs:
        window = list(diag.contexts_updated)
        # the window is always a suffix of the meta-ordering, so everything outside it ranks higher
        assert window == list(model.meta_ordering[len(model.meta_ordering) - len(window):])
        above = ~np.isin(model.z, window)
        assert np.array_equal(policy.actions[above], compiled.actions[above])
        checked += int(above.sum())
    assert checked > 0


# ---------------------------------------------------------------- 4, 5, 6


@criterion(4)
@pytest.mark.parametrize("domain", DOMAIN_NAMES)
def test_o1_never_conflicts_and_always_arrives(domain):
    start = time.perf_counter()
    report = run_experiment(ExperimentConfig(domain=domain, techniques=["O1"], trials=100))
    elapsed = time.perf_counter() - start
    rows = report["rows"]
    print(f"criterion 4 {domain}: {len(rows)} instances in {elapsed:.1f}s")
    assert [r["instance_seed"] for r in rows] == list(FIXTURE_SEEDS[domain])
    for row in rows:
        assert row["percent_conflicts"] == 0.0
        assert row["percent_goal_reached"] == 100.0
    assert elapsed < 120.0


@criterion(5)
@pytest.mark.parametrize("domain", DOMAIN_NAMES)
def test_conflict_sign_pattern(domain, bench_reports):
    rows = bench_reports(domain)["rows"]
    by = lambda t: [r["percent_conflicts"] for r in rows if r["technique"] == t]  # noqa: E731
    print(f"criterion 5 {domain}: B4 {by('B4')} B6 {by('B6')} O2 {by('O2')}")
    assert max(by("B6")) > 0.0
    assert max(by("B4")) > 0.0
    assert all(v == 0.0 for v in by("O2"))


@criterion(6)
@pytest.mark.parametrize("domain", DOMAIN_NAMES)
def test_o1_has_the_highest_minimum_objective(domain, bench_reports):
    aggregate = bench_reports(domain)["aggregate"]
    ours = aggregate["O1"]["min_objective"]["mean"]
    theirs = {t: aggregate[t]["min_objective"]["mean"] for t in BASELINES}
    print(f"criterion 6 {domain}: O1 {ours:.5f} " + " ".join(f"{t} {v:.5f}" for t, v in theirs.items()))
    for technique, value in theirs.items():
        assert ours - value >= 0.0, f"{technique} beats O1 on {domain}: {value} > {ours}"


# ---------------------------------------------------------------- 7


@criterion(7)
def test_lvi_is_lexicographically_maximal_at_the_start_state():
    rng = np.random.default_rng(77)
    for _ in range(300):
        n_states = int(rng.integers(2, 7))
        n_actions = int(rng.integers(1, 4))
        n = int(rng.integers(1, 4))
        mdp = random_mdp(rng, n_states, n_actions, deterministic=True)
        rewards = rng.integers(-3, 4, size=(n, n_states, n_actions)).astype(float)
        order = tuple(rng.permutation(n).tolist())
        policy, _ = lvi(mdp, rewards, order, slack=0.0)
        start = mdp.start_states[0]
        ours = np.array([exact_policy_values(mdp, policy, rewards[k])[start] for k in order])
        _, every = all_policy_values(mdp, rewards[list(order)])
        for candidate in every[:, :, start]:
            assert lex_compare(candidate, ours, 1e-6) <= 0


# ---------------------------------------------------------------- 8


@criterion(8)
def test_single_objective_lvi_is_value_iteration():
    rng = np.random.default_rng(88)
    for _ in range(100):
        n_states, n_actions = int(rng.integers(2, 40)), int(rng.integers(1, 5))
        mdp = random_mdp(rng, n_states, n_actions, deterministic=bool(rng.integers(2)))
        reward = rng.normal(size=(n_states, n_actions))
        v, _, _ = value_iteration(mdp, reward)
        _, values = lvi(mdp, reward[None], (0,))
        assert np.max(np.abs(values[0] - v)) <= 1e-6


@criterion(8)
def test_unit_first_weight_scalarization_is_b2s_first_pass():
    rng = np.random.default_rng(89)
    for _ in range(50):
        n_states, n_actions = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        mdp = random_mdp(rng, n_states, n_actions, deterministic=True)
        rewards = rng.integers(-3, 4, size=(3, n_states, n_actions)).astype(float)
        model = Clmdp(mdp, 3, (Context("c", 0, 0),), (0,), ((0, 1, 2),), (rewards,), np.zeros(n_states, int))
        first_pass, _ = lvi(mdp, rewards[:1], model.f_w(0)[:1])
        b3 = b3_scalarization(model, [1.0, 0.0, 0.0]).actions
        assert np.array_equal(b3, first_pass)
        # both are optimal for the first objective by enumeration
        _, every = all_policy_values(mdp, rewards[:1])
        best = every[:, 0].max(axis=0)
        assert np.allclose(exact_policy_values(mdp, b3, rewards[0]), best, atol=1e-6)
        lex = b2_lmdp_omega(model).actions
        assert np.allclose(exact_policy_values(mdp, lex, rewards[0]), best, atol=1e-6)


# ---------------------------------------------------------------- 9


def discriminating_instance(rng):
    """Model whose contexts have continuous, pairwise different reward tables everywhere."""
    n_states, n_actions = int(rng.integers(5, 16)), int(rng.integers(2, 4))
    m, n = int(rng.integers(2, 5)), int(rng.integers(2, 4))
    mdp = random_mdp(rng, n_states, n_actions, discount=0.9)
    orderings = list(itertools.permutations(range(n)))
    contexts = tuple(Context(f"c{c}", int(rng.integers(len(orderings))), c) for c in range(m))
    tables = tuple(rng.normal(size=(n, n_states, n_actions)) for _ in range(m))
    meta = tuple(rng.permutation(m).tolist())
    z = rng.integers(m, size=n_states)
    return Clmdp(mdp, n, contexts, meta, tuple(orderings), tables, z)


@criterion(9)
def test_discriminating_evidence_recovers_z_exactly():
    rng = np.random.default_rng(99)
    for _ in range(100):
        model = discriminating_instance(rng)
        hidden = model.with_z(None)
        policies = infer_z(hidden, TrajectoryDataset()).policies
        steps = []
        for s in range(model.base.num_states):
            c = int(model.z[s])
            a = int(policies[c][s])
            steps.append(TrajectoryStep(s, a, tuple(model.f_r(c)[:, s, a].tolist())))
        result = infer_z(hidden, TrajectoryDataset([steps]))
        assert z_accuracy(model.z, result.z)[0] == 1.0


@criterion(9)
def test_ten_trajectories_beat_the_top_context_guess():
    inferred, constant = [], []
    for seed in range(20):
        model = generate("salp", seed).model
        dataset = simulate_expert(model, 10, seed=seed)
        z_hat = infer_z(model.with_z(None), dataset).z
        inferred.append(z_accuracy(model.z, z_hat)[0])
        constant.append(z_accuracy(model.z, np.full_like(model.z, model.top_context))[0])
    print(f"criterion 9: inferred {np.mean(inferred):.4f} vs top-context constant {np.mean(constant):.4f}")
    assert np.mean(inferred) > np.mean(constant)


# ---------------------------------------------------------------- 10


@criterion(10)
def test_log_space_agrees_on_the_low_probability_chain():
    mdp = chain_mdp(200, advance=0.05, discount=0.999)
    policy = np.zeros(mdp.num_states, dtype=np.int64)
    plain = conflict_checker(policy, mdp)
    logged = conflict_checker(policy, mdp, log_space=True)
    print(f"criterion 10: log reachability of state 0 = {logged.log_reachability[0]:.1f}")
    assert plain.has_conflict is False and logged.has_conflict is False
    assert logged.log_reachability[0] < np.log(1e-200)


# ---------------------------------------------------------------- 11


def _best_time(fn, repeats=3):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _slope(xs, ts):
    return float(np.polyfit(np.log(xs), np.log(ts), 1)[0])


@criterion(11)
def test_checker_time_is_at_most_quadratic_in_states():
    sizes = [100, 200, 400, 800]
    times = []
    for size in sizes:
        rng = np.random.default_rng(size)
        mdps = [random_mdp(rng, size, 3, goal_reachable=True) for _ in range(5)]
        policies = [rng.integers(3, size=size) for _ in mdps]
        times.append(_best_time(lambda: [conflict_checker(p, m) for p, m in zip(policies, mdps)]))
    slope = _slope(sizes, times)
    print(f"criterion 11 checker: times {np.round(times, 4).tolist()} slope {slope:.2f}")
    assert slope <= 2.2


@criterion(11)
def test_resolver_time_is_at_most_quadratic_in_contexts():
    counts = [2, 4, 8]
    times = []
    for m in counts:
        rng = np.random.default_rng(m)
        models = [conflicted_clmdp(rng, num_states=30, num_contexts=m, deterministic=True) for _ in range(4)]
        times.append(_best_time(lambda: [solve(model) for model in models]))
    slope = _slope(counts, times)
    print(f"criterion 11 resolver: times {np.round(times, 4).tolist()} slope {slope:.2f}")
    assert slope <= 2.3


# ---------------------------------------------------------------- 12


@criterion(12)
def test_bench_csv_is_byte_identical(tmp_path):
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["bench", "--domain", "salp", "--trials", "100", "--seed", "3", "--out", str(out)]) == 0
        outputs.append(out)
    for name in ("report.csv", "heatmap.csv", "min_objective.csv", "report.json"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
