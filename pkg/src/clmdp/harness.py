"""Experiment runner: build instances, plan with each technique, roll out and score.

Metrics per technique and instance:

* ``percent_conflicts``: trials that enter a dead-end state of the
  technique's policy (a state from which the goal is unreachable).
* ``percent_goal_reached``: trials that reach the goal within ``max_steps``.
* ``percent_timeout``: the remaining trials plus the trapped ones, i.e.
  ``100 - percent_goal_reached``.
* ``normalized``: per-objective mean undiscounted return mapped affinely to
  [0, 1], with the objective's optimum at 1 and the uniformly random
  policy at 0 (see ``normalizers``), then clamped.
* ``min_objective``: the smallest normalized objective.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import baselines
from .conflicts import conflict_checker, solve
from .domains import DOMAINS, FIXTURE_SEEDS, DomainInstance, generate
from .inference import infer_z, simulate_expert, z_accuracy
from .mdp import DEFAULT_TOLERANCE, finite_horizon_values
from .model import Clmdp, GlobalPolicy
from .rollout import Sampler

TECHNIQUES = ("B1", "B2", "B3", "B4", "B6", "O1", "O2")
RESERVED = {"B5": "not implemented"}


@dataclass
class ExperimentConfig:
    domain: str = "salp"
    techniques: list[str] = field(default_factory=lambda: list(TECHNIQUES))
    trials: int = 100
    instance_seeds: list[int] | None = None  # None -> the domain's fixture seeds
    max_steps: int | None = None  # None -> 50 * |S|
    rollout_seed: int = 0
    gamma: float | None = None
    slack: float = 0.0
    tolerance: float = DEFAULT_TOLERANCE
    b3_weights: list[float] | None = None
    expert_trajectories: int = 10
    expert_seed: int = 0
    log_space: bool = False
    model_path: str | None = None  # evaluate one serialized model instead of generated instances
    domain_options: dict[str, Any] = field(default_factory=dict)  # forwarded to generate()

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.techniques:
            raise ValueError("no techniques requested")
        for t in self.techniques:
            if t not in TECHNIQUES and t not in RESERVED:
                raise ValueError(f"unknown technique {t!r}")
        if self.model_path is None and self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def seeds(self) -> list[int]:
        if self.instance_seeds is not None:
            return [int(s) for s in self.instance_seeds]
        return list(FIXTURE_SEEDS[self.domain])

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(doc))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Instance:
    seed: int
    model: Clmdp


def _instances(config: ExperimentConfig) -> list[Instance]:
    if config.model_path is not None:
        doc = json.loads(Path(config.model_path).read_text())
        model = Clmdp.from_dict(doc)
        seed = doc.get("grid", {}).get("seed") or 0
        found = [Instance(int(seed), model)]
    else:
        found = []
        for seed in config.seeds():
            inst: DomainInstance = generate(config.domain, seed, **config.domain_options)
            found.append(Instance(seed, inst.model))
    if config.gamma is not None:
        found = [Instance(i.seed, i.model.with_base(i.model.base.with_discount(config.gamma))) for i in found]
    for inst in found:
        if inst.model.z is None:
            raise ValueError("model has no state-context mapping to evaluate against")
    return found


def plan(model: Clmdp, technique: str, config: ExperimentConfig, seed: int = 0) -> tuple[GlobalPolicy, dict]:
    """Policy of ``technique`` on ``model`` plus technique-specific diagnostics."""
    slack, tol = config.slack, config.tolerance
    extras: dict = {}
    if technique == "B1":
        policy = baselines.b1_task_only(model, tol)
    elif technique == "B2":
        policy = baselines.b2_lmdp_omega(model, slack, tol)
    elif technique == "B3":
        policy = baselines.b3_scalarization(model, config.b3_weights, tol)
    elif technique == "B4":
        policy = baselines.b4_lmdp_contexts(model, slack, tol)
    elif technique == "B6":
        policy = baselines.b6_no_resolver(model, slack, tol)
    elif technique == "O1":
        policy, diag = solve(model, slack, tol, config.log_space)
        extras["resolved"] = diag.resolved
        extras["resolver_iterations"] = diag.resolver_iterations
    elif technique == "O2":
        dataset = simulate_expert(
            model, config.expert_trajectories, seed=_sub_seed(config.expert_seed, seed),
            slack=slack, tolerance=tol,
        )
        inferred = infer_z(model.with_z(None), dataset, slack, tol)
        policy, diag = solve(model.with_z(inferred.z), slack, tol, config.log_space)
        extras["resolved"] = diag.resolved
        extras["resolver_iterations"] = diag.resolver_iterations
        extras["z_accuracy"] = z_accuracy(model.z, inferred.z, model.num_contexts)[0]
    elif technique in RESERVED:
        raise NotImplementedError(f"{technique}: {RESERVED[technique]}")
    else:
        raise ValueError(f"unknown technique {technique!r}")
    return policy, extras


def _sub_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass
class Rollouts:
    returns: np.ndarray  # (trials, n) undiscounted
    discounted: np.ndarray  # (trials, n)
    reached: np.ndarray  # (trials,) bool
    trapped: np.ndarray  # (trials,) bool, entered a dead-end state
    steps: np.ndarray  # (trials,)


def draw_trials(
    model: Clmdp, trials: int, max_steps: int, rollout_seed: int, instance_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Start states and step uniforms; trial ``t`` depends only on its own sub-seed."""
    starts = np.asarray(model.base.start_states)
    first = np.empty(trials, dtype=np.int64)
    uniforms = np.empty((trials, max_steps))
    for t in range(trials):
        rng = np.random.default_rng([rollout_seed, instance_seed, t])
        first[t] = starts[rng.integers(starts.size)]
        uniforms[t] = rng.random(max_steps)
    return first, uniforms


def rollout(
    model: Clmdp,
    policy: GlobalPolicy,
    rewards: np.ndarray,
    first: np.ndarray,
    uniforms: np.ndarray,
    dead_ends: np.ndarray,
    sampler: Sampler | None = None,
) -> Rollouts:
    """Run all trials in lockstep; the goal is absorbing and rewards nothing."""
    base = model.base
    sampler = sampler or Sampler(base)
    trials, max_steps = uniforms.shape
    n = rewards.shape[0]
    states = first.copy()
    returns = np.zeros((trials, n))
    discounted = np.zeros((trials, n))
    trapped = dead_ends[states].copy()
    steps = np.zeros(trials, dtype=np.int64)
    weight = 1.0
    for k in range(max_steps):
        active = states != base.goal_state
        if not active.any():
            break
        actions = policy.actions[states]
        r = rewards[:, states, actions].T * active[:, None]
        returns += r
        discounted += weight * r
        weight *= base.discount
        steps += active
        states = sampler.step(states, actions, uniforms[:, k])
        trapped |= dead_ends[states]
    return Rollouts(returns, discounted, states == base.goal_state, trapped, steps)


def normalizers(model: Clmdp, rewards: np.ndarray, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-objective reference returns over ``horizon`` steps, averaged over start states.

    The top reference is each objective's own optimum. The floor is the
    return of the uniformly random policy, so a normalized score reads as
    the share of the gap between acting at random and the best achievable.
    """
    base = model.base
    starts = list(base.start_states)
    ideal = np.array([finite_horizon_values(base, r, horizon)[starts].mean() for r in rewards])
    a = base.num_actions
    p_random = sum(base.transitions[k::a] for k in range(a)) / a
    floor = []
    for r in rewards:
        r_random = r.mean(axis=1)
        values = np.zeros(base.num_states)
        for _ in range(horizon):
            values = r_random + p_random @ values
        floor.append(values[starts].mean())
    return ideal, np.minimum(np.array(floor), ideal)


def normalize(mean_returns: np.ndarray, best: np.ndarray, worst: np.ndarray) -> np.ndarray:
    span = best - worst
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(span > 0, (mean_returns - worst) / np.where(span > 0, span, 1.0), 1.0)
    return np.clip(scaled, 0.0, 1.0)


def run_experiment(config: ExperimentConfig) -> dict:
    """Evaluate every requested technique on every instance; returns the report document."""
    config.validate()
    techniques = [t for t in config.techniques if t not in RESERVED]
    skipped = {t: RESERVED[t] for t in config.techniques if t in RESERVED}
    domain = config.domain if config.model_path is None else "model"
    rows: list[dict] = []
    norm_records = []
    objective_count = None
    for inst in _instances(config):
        model = inst.model
        objective_count = model.num_objectives
        max_steps = config.max_steps or 50 * model.base.num_states
        rewards = model.state_rewards()
        best, worst = normalizers(model, rewards, max_steps)
        norm_records.append({
            "instance_seed": inst.seed,
            "horizon": max_steps,
            "best": best.tolist(),
            "worst": worst.tolist(),
        })
        first, uniforms = draw_trials(model, config.trials, max_steps, config.rollout_seed, inst.seed)
        sampler = Sampler(model.base)
        for technique in techniques:
            policy, extras = plan(model, technique, config, inst.seed)
            report = conflict_checker(policy, model.base, config.log_space)
            dead = np.zeros(model.base.num_states, dtype=bool)
            dead[list(report.conflict_states)] = True
            runs = rollout(model, policy, rewards, first, uniforms, dead, sampler)
            mean_returns = runs.returns.mean(axis=0)
            normalized = normalize(mean_returns, best, worst)
            rows.append({
                "domain": domain,
                "technique": technique,
                "instance_seed": inst.seed,
                "num_states": model.base.num_states,
                "max_steps": max_steps,
                "static_conflict": report.has_conflict,
                "num_conflict_states": len(report.conflict_states),
                "percent_conflicts": 100.0 * float(runs.trapped.mean()),
                "percent_goal_reached": 100.0 * float(runs.reached.mean()),
                "percent_timeout": 100.0 * float(1.0 - runs.reached.mean()),
                "mean_steps": float(runs.steps.mean()),
                "mean_return": mean_returns.tolist(),
                "mean_discounted_return": runs.discounted.mean(axis=0).tolist(),
                "normalized": normalized.tolist(),
                "min_objective": float(normalized.min()),
                "z_accuracy": extras.get("z_accuracy"),
                "resolved": extras.get("resolved"),
                "resolver_iterations": extras.get("resolver_iterations"),
            })
    return _assemble(config, domain, techniques, rows, norm_records, skipped, objective_count or 0)


def run_inference_experiment(config: ExperimentConfig) -> dict:
    """O2 (inferred mapping) next to O1 (true mapping), with z accuracy per instance."""
    config = ExperimentConfig(**{**config.to_dict(), "techniques": ["O1", "O2"]})
    report = run_experiment(config)
    accuracies = [r["z_accuracy"] for r in report["rows"] if r["technique"] == "O2"]
    report["z_accuracy"] = {"mean": float(np.mean(accuracies)), "std": float(np.std(accuracies))}
    return report


def _assemble(config, domain, techniques, rows, norm_records, skipped, n) -> dict:
    aggregate = {}
    scalar_metrics = ("percent_conflicts", "percent_goal_reached", "percent_timeout", "min_objective")
    for t in techniques:
        mine = [r for r in rows if r["technique"] == t]
        entry = {m: _mean_std([r[m] for r in mine]) for m in scalar_metrics}
        entry["normalized"] = [_mean_std([r["normalized"][i] for r in mine]) for i in range(n)]
        entry["static_conflict_instances"] = sum(r["static_conflict"] for r in mine)
        aggregate[t] = entry
    objectives = list(DOMAINS[domain].objectives) if domain in DOMAINS else [f"o{i}" for i in range(n)]
    return {
        "domain": domain,
        "config": config.to_dict(),
        "objectives": objectives,
        "rows": rows,
        "normalizers": norm_records,
        "aggregate": aggregate,
        "heatmap": {
            "techniques": techniques,
            "objectives": objectives,
            "values": [[aggregate[t]["normalized"][i]["mean"] for i in range(n)] for t in techniques],
        },
        "min_objective": {
            "techniques": techniques,
            "mean": [aggregate[t]["min_objective"]["mean"] for t in techniques],
            "std": [aggregate[t]["min_objective"]["std"] for t in techniques],
        },
        "skipped": skipped,
    }


def _mean_std(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else format(value, ".10g")
    return str(value)


def report_csv(report: dict) -> str:
    """One row per technique and instance; per-objective columns are suffixed with the objective index."""
    n = len(report["objectives"])
    per_objective = ("normalized", "mean_return", "mean_discounted_return")
    scalar = (
        "domain", "technique", "instance_seed", "num_states", "max_steps", "static_conflict",
        "num_conflict_states", "percent_conflicts", "percent_goal_reached", "percent_timeout",
        "mean_steps", "min_objective", "z_accuracy", "resolved", "resolver_iterations",
    )
    header = list(scalar) + [f"{name}_o{i}" for name in per_objective for i in range(n)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in report["rows"]:
        values = [row[k] for k in scalar] + [row[name][i] for name in per_objective for i in range(n)]
        writer.writerow([_fmt(v) for v in values])
    return buf.getvalue()


def emit_report(report: dict, out_dir: str | Path, formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write the report files and return their paths.

    ``csv`` writes ``report.csv`` plus ``heatmap.csv`` (technique x objective
    normalized means) and ``min_objective.csv``; ``json`` writes
    ``report.json``.
    """
    if not report.get("rows"):
        raise ValueError("report has no rows to write")
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(_write(out / "report.csv", report_csv(report)))
        heat = report["heatmap"]
        lines = [",".join(["technique"] + heat["objectives"])]
        for t, vals in zip(heat["techniques"], heat["values"]):
            lines.append(",".join([t] + [_fmt(v) for v in vals]))
        written.append(_write(out / "heatmap.csv", "\n".join(lines) + "\n"))
        bars = report["min_objective"]
        lines = ["technique,mean,std"]
        for t, mu, sd in zip(bars["techniques"], bars["mean"], bars["std"]):
            lines.append(f"{t},{_fmt(mu)},{_fmt(sd)}")
        written.append(_write(out / "min_objective.csv", "\n".join(lines) + "\n"))
    if "json" in formats:
        written.append(_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n"))
    return written


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path
