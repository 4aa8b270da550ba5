"""Config-driven experiment runner.

Subcommands: ``sample``, ``compare``, ``interp``, ``ablate``, ``distill``,
``report``. Every experiment is described by a JSON config (schema version
1, documented in the README); outputs are written to the config's ``out``
directory and stamped with the config hash. All seeds are explicit, so
re-running a config reproduces every output file byte for byte. Exit codes:
0 success, 2 config error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .compose import ComposerConfig
from .distill import (
    DivergenceError,
    Scene,
    SDSConfig,
    ViewPromptPlan,
    WeightFn,
    default_view_plan,
    interpolate_pair,
    janus_score,
    optimize,
)
from .oracle import OracleWorld, mode_responsibilities
from .reporting import config_hash, format_table, read_report, write_csv, write_report
from .sampler import SampleRun, classify_modes, generate, success_table
from .schedule import build_schedule
from .worlds import load_world

__all__ = ["ExperimentConfig", "ConfigError", "run", "main", "entrypoint"]

CONFIG_VERSION = 1
KINDS = ("sample", "compare-composers", "interp-sweep", "ablate-weights", "distill")
SUBCOMMAND_KINDS = {
    "sample": "sample",
    "compare": "compare-composers",
    "interp": "interp-sweep",
    "ablate": "ablate-weights",
    "distill": "distill",
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


class ExperimentConfig:
    """Validated experiment description: kind, world, outputs, parameters."""

    def __init__(self, data: dict, out_override=None, seed_override=None, threads=1):
        if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError("version", f"unsupported version {data.get('version')!r}")
        self.kind = data.get("kind")
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        world_path = data.get("world")
        if not world_path:
            raise ConfigError("world", "missing world file path")
        if not Path(world_path).is_file():
            raise ConfigError("world", f"file not found: {world_path}")
        self.world_path = world_path
        out = out_override or data.get("out")
        if not out:
            raise ConfigError("out", "missing output directory")
        self.out = Path(out)
        sched = data.get("schedule", {})
        self.schedule_params = {
            "T": int(sched.get("T", 1000)),
            "beta_start": float(sched.get("beta_start", 1e-4)),
            "beta_end": float(sched.get("beta_end", 0.02)),
        }
        self.params = dict(data.get("params", {}))
        if seed_override is not None:
            self.params["seed"] = seed_override
        self.threads = max(1, int(threads))
        self.resolved = {
            "version": CONFIG_VERSION,
            "kind": self.kind,
            "world": world_path,
            "schedule": self.schedule_params,
            "params": self.params,
        }
        self.hash = config_hash(self.resolved)

    def build_schedule(self):
        try:
            return build_schedule(
                self.schedule_params["T"],
                self.schedule_params["beta_start"],
                self.schedule_params["beta_end"],
            )
        except ValueError as e:
            raise ConfigError("schedule", str(e))

    def load_world(self) -> OracleWorld:
        try:
            return load_world(self.world_path)
        except (ValueError, KeyError) as e:
            raise ConfigError("world", str(e))


def _param(params: dict, field: str, default=None, required=False):
    if field not in params:
        if required:
            raise ConfigError(field, "missing required parameter")
        return default
    return params[field]


def _seed_list(params: dict) -> list[int]:
    seeds = _param(params, "seeds", {"start": 0, "count": 50})
    if isinstance(seeds, dict):
        return list(range(int(seeds["start"]), int(seeds["start"]) + int(seeds["count"])))
    return [int(s) for s in seeds]


def _negatives(params: dict, world: OracleWorld, field: str = "negatives") -> list:
    negs = []
    for item in _param(params, field, []):
        label, weight = item[0], float(item[1])
        if label not in world.prompts:
            raise ConfigError(field, f"unknown prompt label {label!r}")
        # signed CLI values are normalized to magnitudes
        negs.append((label, abs(weight)))
    return negs


def _map_runs(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _success_runs(world, sched, config, positive, negatives, composer, seeds, params):
    guidance = float(_param(params, "guidance", 7.5))
    w_pos = float(_param(params, "w_pos", 1.0))
    steps = int(_param(params, "steps", 50))
    n = int(_param(params, "n_per_seed", 1))
    base = ComposerConfig(guidance=guidance, w_pos=w_pos)
    return [
        SampleRun(
            seed=s,
            n=n,
            steps=steps,
            composer=composer,
            config=base,
            positive=positive,
            negatives=tuple(negatives),
            trajectory_capture=bool(_param(params, "trajectories", False)),
            run_id=f"{composer}-{positive}-seed{s}",
        )
        for s in seeds
    ]


def _run_sample(config: ExperimentConfig) -> dict:
    world = config.load_world()
    sched = config.build_schedule()
    p = config.params
    positive = _param(p, "positive", required=True)
    if positive not in world.prompts:
        raise ConfigError("positive", f"unknown prompt label {positive!r}")
    target = _param(p, "target", required=True)
    try:
        world.mode_index(target)
    except KeyError:
        raise ConfigError("target", f"unknown mode id {target!r}")
    composer = _param(p, "composer", "perp_neg")
    negatives = _negatives(p, world)
    seeds = _seed_list(p)
    try:
        runs = _success_runs(world, sched, config, positive, negatives, composer, seeds, p)
    except ValueError as e:
        raise ConfigError("composer", str(e))
    report = success_table(world, runs, sched, target)

    if bool(_param(p, "trajectories", False)):
        for run in runs:
            result = generate(world, run, sched)
            write_csv(
                config.out / f"trajectory_{run.run_id}.csv",
                ["run_id", "sample_idx", "step", "t"] + [f"x{i}" for i in range(world.dim)],
                result.trajectory,
                config.hash,
            )
    payload = {"kind": config.kind, "report": report.to_dict()}
    write_report(config.out / "sample_report.json", payload, config.hash)
    print(
        format_table(
            ["composer", "positive", "success_rate", "n"],
            [[composer, positive, report.success_rate, report.n]],
        )
    )
    return payload


def _compare_methods(world, p):
    positive = _param(p, "positive", required=True)
    pool = _param(p, "negatives_pool", [l for l in world.prompts if l != positive])
    single_w = float(_param(p, "single_neg_weight", 1.5))
    dual_w = float(_param(p, "dual_neg_weight", 1.0))
    combos = [[(label, single_w)] for label in pool]
    if len(pool) >= 2:
        combos.append([(label, dual_w) for label in pool])
    return positive, combos


def _run_compare(config: ExperimentConfig) -> dict:
    world = config.load_world()
    sched = config.build_schedule()
    p = config.params
    positive, combos = _compare_methods(world, p)
    if positive not in world.prompts:
        raise ConfigError("positive", f"unknown prompt label {positive!r}")
    target = _param(p, "target", required=True)
    seeds = _seed_list(p)

    method_reports = {}
    vanilla = success_table(
        world, _success_runs(world, sched, config, positive, [], "cfg", seeds, p), sched, target
    )
    method_reports["cfg"] = vanilla
    for composer in ("naive_neg", "perp_neg"):
        runs = []
        for combo in combos:
            runs.extend(
                _success_runs(world, sched, config, positive, combo, composer, seeds, p)
            )
        method_reports[composer] = success_table(world, runs, sched, target)

    rows = [
        [name, rep.success_rate, rep.n]
        for name, rep in method_reports.items()
    ]
    breakdown = {}
    for name, rep in method_reports.items():
        breakdown.update(rep.per_combination)
    payload = {
        "kind": config.kind,
        "target": target,
        "methods": {name: rep.to_dict() for name, rep in method_reports.items()},
        "success_rates": {name: rep.success_rate for name, rep in method_reports.items()},
        "per_combination": breakdown,
    }
    write_report(config.out / "compare_report.json", payload, config.hash)
    print(format_table(["method", "success_rate", "n"], rows))
    print()
    print(
        format_table(
            ["combination", "success_rate"],
            sorted([k, v] for k, v in breakdown.items()),
        )
    )
    return payload


def _plan_from_params(world, p) -> ViewPromptPlan:
    overrides = {}
    for name in (
        "w_back_side", "w_back_front", "w_side_front", "w_front_side",
        "r_perturb_delta", "flip_sf_argument",
    ):
        if name in p:
            overrides[name] = p[name]
    for fname in ("f_sb", "f_fsb", "f_fs", "f_sf"):
        if fname in p:
            spec = p[fname]
            overrides[fname] = WeightFn(float(spec["a"]), float(spec["b"]), float(spec["c"]))
    try:
        return default_view_plan(world, **overrides)
    except (KeyError, ValueError) as e:
        raise ConfigError("plan", str(e))


def _interp_points(stride: float) -> list[float]:
    n = int(round(1.0 / stride))
    return [i * stride for i in range(n + 1)]


def _run_interp(config: ExperimentConfig) -> dict:
    world = config.load_world()
    sched = config.build_schedule()
    p = config.params
    pair = _param(p, "pair", "side-back")
    if pair not in ("side-back", "front-side"):
        raise ConfigError("pair", f"must be 'side-back' or 'front-side', got {pair!r}")
    stride = float(_param(p, "stride", 0.25))
    if not 0 < stride <= 1:
        raise ConfigError("stride", f"must be in (0, 1], got {stride}")
    n = int(_param(p, "samples_per_point", 1000))
    seed = int(_param(p, "seed", 0))
    steps = int(_param(p, "steps", 50))
    guidance = float(_param(p, "guidance", 7.5))
    composer = _param(p, "composer", "perp_neg")
    target = _param(p, "target", "side" if pair == "side-back" else "front")
    target_idx = world.mode_index(target)

    candidates = _param(p, "f_grid", None)
    plans = []
    if candidates:
        for spec in candidates:
            a, b, c = (float(v) for v in spec)
            fns = {"f_sb": WeightFn(a, b, c), "f_fsb": WeightFn(a, b, c)} \
                if pair == "side-back" else {"f_fs": WeightFn(a, b, c), "f_sf": WeightFn(a, b, c)}
            plans.append(((a, b, c), _plan_from_params(world, {**p, **{
                k: {"a": fn.a, "b": fn.b, "c": fn.c} for k, fn in fns.items()}})))
    else:
        plans.append((None, _plan_from_params(world, p)))

    def sweep(plan):
        rows = []
        for r in _interp_points(stride):
            positive, negatives = interpolate_pair(plan, pair, r)
            negs = tuple(negatives) if composer != "cfg" else ()
            run = SampleRun(
                seed=seed, n=n, steps=steps, composer=composer,
                config=ComposerConfig(guidance=guidance),
                positive=positive, negatives=negs,
                run_id=f"interp-{pair}-r{r:g}",
            )
            samples = generate(world, run, sched).samples
            resp = mode_responsibilities(world, world.unconditional_embedding(), samples)
            mean_resp = float(resp[:, target_idx].mean())
            dominant = world.mode_ids[int(np.argmax(positive.weights))]
            assigns = classify_modes(world, samples)
            rows.append({
                "r": r,
                "mean_target_responsibility": mean_resp,
                "target_success": sum(a == target for a in assigns) / n,
                "dominant_view_success": sum(a == dominant for a in assigns) / n,
            })
        return rows

    results = []
    for key, plan in plans:
        rows = sweep(plan)
        accuracy = float(np.mean([row["dominant_view_success"] for row in rows]))
        results.append({"f_params": key, "accuracy": accuracy, "points": rows})
    best = max(results, key=lambda r: r["accuracy"])
    payload = {
        "kind": config.kind,
        "pair": pair,
        "target": target,
        "composer": composer,
        "sweeps": results,
        "best_f_params": best["f_params"],
    }
    write_report(config.out / "interp_report.json", payload, config.hash)
    write_csv(
        config.out / "interp_points.csv",
        ["r", "mean_target_responsibility", "target_success"],
        [[r["r"], r["mean_target_responsibility"], r["target_success"]]
         for r in best["points"]],
        config.hash,
    )
    print(
        format_table(
            ["r", "mean_target_responsibility", "target_success"],
            [[row["r"], row["mean_target_responsibility"], row["target_success"]]
             for row in best["points"]],
        )
    )
    return payload


def _run_ablate(config: ExperimentConfig) -> dict:
    world = config.load_world()
    sched = config.build_schedule()
    p = config.params
    positive = _param(p, "positive", required=True)
    target = _param(p, "target", required=True)
    weights = [abs(float(w)) for w in _param(p, "weights", [0.1, 0.5, 1.0, 1.5, 5.0])]
    neg_label = _param(p, "negative", None)
    if neg_label is None:
        others = [l for l in world.prompts if l != positive]
        neg_label = others[0] if others else None
    if neg_label not in world.prompts:
        raise ConfigError("negative", f"unknown prompt label {neg_label!r}")
    composers = _param(p, "composers", ["perp_neg", "naive_neg"])
    seeds = _seed_list(p)

    table = {}
    for composer in composers:
        for w in weights:
            runs = _success_runs(
                world, sched, config, positive, [(neg_label, w)], composer, seeds, p
            )
            rep = success_table(world, runs, sched, target)
            table[f"{composer}|w={w:g}"] = rep.success_rate
    payload = {
        "kind": config.kind,
        "positive": positive,
        "negative": neg_label,
        "target": target,
        "success_rates": table,
    }
    write_report(config.out / "ablate_report.json", payload, config.hash)
    print(format_table(["setting", "success_rate"], sorted([k, v] for k, v in table.items())))
    return payload


def _run_distill(config: ExperimentConfig) -> dict:
    world = config.load_world()
    sched = config.build_schedule()
    p = config.params
    bins = int(_param(p, "bins", 24))
    variants = _param(p, "variants", ["vanilla", "perp_neg"])
    seeds = _seed_list(p)
    sds_params = dict(_param(p, "sds", {}))
    plan = _plan_from_params(world, _param(p, "plan", {}))

    def one(task):
        variant, seed = task
        try:
            cfg = SDSConfig(seed=seed, **sds_params)
        except (TypeError, ValueError) as e:
            raise ConfigError("sds", str(e))
        init = np.random.default_rng([seed]).normal(0.0, cfg.init_scale, (bins, world.dim))
        scene = Scene(init)
        final, log = optimize(scene, world, plan, cfg, sched, variant=variant)
        return variant, seed, final, log

    tasks = [(variant, seed) for variant in variants for seed in seeds]
    results = _map_runs(one, tasks, config.threads)

    summary = {variant: {} for variant in variants}
    for variant, seed, final, log in results:
        score = janus_score(final, world)
        summary[variant][str(seed)] = score
        write_csv(
            config.out / f"distill_{variant}_seed{seed}.csv",
            ["iter", "azimuth", "t", "grad_norm", "janus_score"],
            [[r.iteration, r.azimuth, r.t_mean, r.grad_norm, r.janus] for r in log],
            config.hash,
        )
        write_report(
            config.out / f"scene_{variant}_seed{seed}.json",
            {"variant": variant, "seed": seed, "janus_score": score,
             "bins": final.features.tolist()},
            config.hash,
        )
    medians = {
        variant: float(np.median(list(scores.values())))
        for variant, scores in summary.items()
    }
    payload = {
        "kind": config.kind,
        "bins": bins,
        "janus_scores": summary,
        "median_janus": medians,
    }
    write_report(config.out / "distill_report.json", payload, config.hash)
    print(
        format_table(
            ["variant", "median_janus"] ,
            sorted([k, v] for k, v in medians.items()),
        )
    )
    return payload


RUNNERS = {
    "sample": _run_sample,
    "compare-composers": _run_compare,
    "interp-sweep": _run_interp,
    "ablate-weights": _run_ablate,
    "distill": _run_distill,
}


def run(config: ExperimentConfig) -> dict:
    """Execute one experiment; writes outputs under ``config.out``."""
    config.out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[config.kind](config)


def _print_report(path: str) -> None:
    data = read_report(path)
    print(f"report: {path}")
    print(f"config_hash: {data.get('config_hash', '?')}")
    flat = []
    for key in ("success_rates", "median_janus", "per_combination"):
        if key in data:
            for k, v in sorted(data[key].items()):
                flat.append([key, k, v])
    if "report" in data:
        flat.append(["success_rate", data["report"].get("target", ""), data["report"]["success_rate"]])
    if not flat:
        print(json.dumps(data, indent=2, sort_keys=True))
        return
    print(format_table(["metric", "key", "value"], flat))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scorelab",
        description="Deterministic score-composition experiments on mixture worlds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_KINDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None)
        cmd.add_argument("--threads", type=int, default=1)
    rep = sub.add_parser("report")
    rep.add_argument("path")
    args = parser.parse_args(argv)

    try:
        if args.command == "report":
            _print_report(args.path)
            return 0
        with open(args.config) as f:
            data = json.load(f)
        expected = SUBCOMMAND_KINDS[args.command]
        if data.get("kind", expected) != expected:
            raise ConfigError("kind", f"config kind {data.get('kind')!r} does not match "
                                      f"subcommand {args.command!r}")
        data.setdefault("kind", expected)
        config = ExperimentConfig(
            data, out_override=args.out, seed_override=args.seed, threads=args.threads
        )
        run(config)
        return 0
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
