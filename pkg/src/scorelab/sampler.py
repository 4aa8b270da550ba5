"""Reverse-process generation with pluggable composers, plus success scoring.

Reproducibility contract: the only randomness in a run is the standard-normal
initialization, and sample ``i`` of a run with seed ``s`` is always drawn
from ``default_rng([s, i])``. Samples never interact during the reverse
chain, so any partition of a batch (serial, threaded, or grouped across
runs) produces bit-identical terminal points.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .compose import (
    ComposerConfig,
    cfg_compose,
    naive_negation_compose,
    perp_neg_compose,
)
from .oracle import OracleWorld, PromptEmbedding, eps_pred, mode_responsibilities
from .schedule import VarianceSchedule, ddim_step, ddim_timesteps

__all__ = [
    "COMPOSERS",
    "SampleRun",
    "SampleResult",
    "SuccessReport",
    "generate",
    "classify_mode",
    "classify_modes",
    "success_table",
]

COMPOSERS = ("cfg", "naive_neg", "perp_neg")


@dataclass(frozen=True)
class SampleRun:
    """One seeded generation run: composer choice, prompts, and chain length.

    ``negatives`` holds (condition, weight) pairs; their weights become the
    effective ``neg_weights`` of ``config`` when the run executes.
    """

    seed: int
    n: int
    steps: int
    composer: str
    config: ComposerConfig
    positive: str | PromptEmbedding
    negatives: tuple = ()
    trajectory_capture: bool = False
    run_id: str = ""

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.composer not in COMPOSERS:
            raise ValueError(f"composer must be one of {COMPOSERS}, got {self.composer!r}")
        if self.composer == "cfg" and self.negatives:
            raise ValueError("composer 'cfg' takes no negatives")
        object.__setattr__(self, "negatives", tuple(self.negatives))
        if not self.run_id:
            object.__setattr__(self, "run_id", f"{self.composer}-seed{self.seed}")

    def effective_config(self) -> ComposerConfig:
        return replace(self.config, neg_weights=tuple(w for _, w in self.negatives))


@dataclass
class SampleResult:
    """Terminal points of a run and, optionally, the full trajectories."""

    run_id: str
    samples: np.ndarray
    trajectory: list[tuple] | None = None


def _compose_step(composer, eps_u, eps_pos, eps_negs, config):
    if composer == "cfg":
        return cfg_compose(eps_u, eps_pos, config.guidance)
    if composer == "naive_neg":
        return naive_negation_compose(eps_u, eps_pos, eps_negs, config)
    if composer == "perp_neg":
        return perp_neg_compose(eps_u, eps_pos, eps_negs, config)
    raise ValueError(f"unknown composer {composer!r}")


def _initial_points(seed: int, n: int, dim: int) -> np.ndarray:
    rows = [np.random.default_rng([seed, i]).standard_normal(dim) for i in range(n)]
    return np.stack(rows)


def _evolve(world, run, sched, x):
    """Run the deterministic reverse chain on a batch of initial points."""
    config = run.effective_config()
    positive = world.embedding(run.positive)
    negatives = [world.embedding(cond) for cond, _ in run.negatives]
    ts = ddim_timesteps(sched, run.steps)
    trajectory = [(0, int(ts[0]), x.copy())] if run.trajectory_capture else None
    for i in range(len(ts) - 1):
        t, t_prev = int(ts[i]), int(ts[i + 1])
        eps_u = eps_pred(world, None, x, t, sched)
        eps_pos = eps_pred(world, positive, x, t, sched)
        eps_negs = [eps_pred(world, emb, x, t, sched) for emb in negatives]
        eps = _compose_step(run.composer, eps_u, eps_pos, eps_negs, config)
        x = ddim_step(x, eps, t, t_prev, 0.0, None, sched)
        if trajectory is not None:
            trajectory.append((i + 1, t_prev, x.copy()))
    return x, trajectory


def generate(world: OracleWorld, run: SampleRun, sched: VarianceSchedule) -> SampleResult:
    """Generate ``run.n`` terminal points with a deterministic DDIM chain.

    Initialization is standard normal; everything after it is deterministic,
    so the result is a pure function of ``(world, run, sched)``.
    """
    x = _initial_points(run.seed, run.n, world.dim)
    x, trajectory = _evolve(world, run, sched, x)
    rows = None
    if trajectory is not None:
        rows = [
            (run.run_id, i, step, t, *state[i])
            for step, t, state in trajectory
            for i in range(run.n)
        ]
        rows.sort(key=lambda r: (r[1], r[2]))
    return SampleResult(run_id=run.run_id, samples=x, trajectory=rows)


def classify_modes(world: OracleWorld, x: np.ndarray) -> list[str]:
    """Most responsible mode id for each row of ``x`` under the clean mixture.

    Responsibilities use the unconditional mixture weights; exact ties go to
    the lexicographically smallest mode id.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    resp = mode_responsibilities(world, world.unconditional_embedding(), x)
    id_rank = np.argsort(np.argsort(world.mode_ids, kind="stable"), kind="stable")
    best = np.max(resp, axis=-1, keepdims=True)
    tie_rank = np.where(resp == best, id_rank, len(world.modes))
    picks = np.argmin(tie_rank, axis=-1)
    return [world.mode_ids[k] for k in picks]


def classify_mode(world: OracleWorld, x: np.ndarray) -> str:
    """Single-point convenience wrapper around :func:`classify_modes`."""
    return classify_modes(world, np.asarray(x, dtype=float)[None, :])[0]


@dataclass
class RunOutcome:
    run_id: str
    seed: int
    combination: str
    assignments: list[str]
    successes: int
    n: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.n


@dataclass
class SuccessReport:
    """Per-run assignments plus overall and per-combination success rates."""

    target: str
    per_run: list[RunOutcome]
    successes: int
    n: int
    per_combination: dict[str, float] = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.successes / self.n

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "successes": self.successes,
            "n": self.n,
            "success_rate": self.success_rate,
            "per_combination": dict(sorted(self.per_combination.items())),
            "per_run": [
                {
                    "run_id": o.run_id,
                    "seed": o.seed,
                    "combination": o.combination,
                    "assignments": o.assignments,
                    "successes": o.successes,
                    "n": o.n,
                }
                for o in self.per_run
            ],
        }


def combination_key(run: SampleRun) -> str:
    pos = run.positive if isinstance(run.positive, str) else "embedding"
    negs = ",".join(
        f"{cond if isinstance(cond, str) else 'embedding'}:{w:g}"
        for cond, w in run.negatives
    )
    return f"{run.composer}|+{pos}|-[{negs}]"


def _group_signature(run: SampleRun):
    neg_sig = tuple(
        (cond if isinstance(cond, str) else id(cond), w) for cond, w in run.negatives
    )
    pos_sig = run.positive if isinstance(run.positive, str) else id(run.positive)
    return (run.steps, run.composer, run.config, pos_sig, neg_sig, run.trajectory_capture)


def success_table(
    world: OracleWorld,
    runs: list[SampleRun],
    sched: VarianceSchedule,
    target: str,
) -> SuccessReport:
    """Execute runs, classify terminal samples, and tabulate success rates.

    Runs sharing prompts and composer settings are evolved as one stacked
    batch; per-sample results are bit-identical to executing each run alone.
    """
    if not runs:
        raise ValueError("runs must be a non-empty list")
    world.mode_index(target)

    outcomes: dict[int, RunOutcome] = {}
    groups: dict[tuple, list[int]] = {}
    for idx, run in enumerate(runs):
        groups.setdefault(_group_signature(run), []).append(idx)

    for indices in groups.values():
        group = [runs[i] for i in indices]
        if group[0].trajectory_capture:
            results = [generate(world, run, sched) for run in group]
            batches = [r.samples for r in results]
        else:
            x0 = np.concatenate([_initial_points(r.seed, r.n, world.dim) for r in group])
            x, _ = _evolve(world, group[0], sched, x0)
            splits = np.cumsum([r.n for r in group])[:-1]
            batches = np.split(x, splits)
        for idx, run, samples in zip(indices, group, batches):
            assignments = classify_modes(world, samples)
            successes = sum(a == target for a in assignments)
            outcomes[idx] = RunOutcome(
                run_id=run.run_id,
                seed=run.seed,
                combination=combination_key(run),
                assignments=assignments,
                successes=successes,
                n=run.n,
            )

    per_run = [outcomes[i] for i in range(len(runs))]
    successes = sum(o.successes for o in per_run)
    total = sum(o.n for o in per_run)
    per_combination = {}
    for key in {o.combination for o in per_run}:
        members = [o for o in per_run if o.combination == key]
        per_combination[key] = sum(o.successes for o in members) / sum(o.n for o in members)
    return SuccessReport(
        target=target,
        per_run=per_run,
        successes=successes,
        n=total,
        per_combination=per_combination,
    )
