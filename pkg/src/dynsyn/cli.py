"""Batch front-end: synergy extraction, training, convergence studies, eval.

    dynsyn extract     --config cfg.json [--out DIR] [--seed N] [--jobs J]
    dynsyn train       --config cfg.json --actor flat|dynsyn [...]
    dynsyn convergence --config cfg.json [--out DIR]
    dynsyn eval        --checkpoint run/ckpt --episodes N [--out DIR]

The configuration document is JSON; unknown keys are rejected so typos fail
fast. Flags override the config, the config overrides defaults. Every
command writes the fully resolved configuration, a provenance record with
input checksums, and its artifacts into the output directory. Exit codes:
0 success, 2 usage or configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

import dynsyn
from dynsyn import fileio, models, synergy
from dynsyn.policy import ClipSchedule
from dynsyn.sac import SacConfig, evaluate, train
from dynsyn.tasks import TaskConfig, oscillate_env, reach_env

__all__ = ["main", "ConfigError", "load_run_config"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


_SECTIONS = {
    "model": str,
    "seeds": list,
    "out_dir": str,
    "perturbation": dict,
    "clustering": dict,
    "sac": dict,
    "schedule": dict,
    "task": dict,
    "convergence": dict,
    "grouping_file": str,
}

_CLUSTERING_KEYS = {"candidates", "n_groups", "n_segments", "use_differences",
                    "selection_threshold", "n_restarts"}
_TASK_KEYS = {"name"} | {f.name for f in dataclasses.fields(TaskConfig)}
_CONVERGENCE_KEYS = {"sample_sizes", "n_seeds"}


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")


def load_run_config(path) -> dict:
    """Parse and validate a run configuration document."""
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})")
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _check_keys("config", doc, _SECTIONS)
    for key, typ in _SECTIONS.items():
        if key in doc and not isinstance(doc[key], typ):
            raise ConfigError(f"config key {key!r} must be a {typ.__name__}")
    _check_keys("perturbation", doc.get("perturbation", {}),
                {f.name for f in dataclasses.fields(synergy.PerturbationConfig)})
    _check_keys("clustering", doc.get("clustering", {}), _CLUSTERING_KEYS)
    _check_keys("sac", doc.get("sac", {}),
                {f.name for f in dataclasses.fields(SacConfig)})
    _check_keys("schedule", doc.get("schedule", {}),
                {f.name for f in dataclasses.fields(ClipSchedule)})
    _check_keys("task", doc.get("task", {}), _TASK_KEYS)
    _check_keys("convergence", doc.get("convergence", {}), _CONVERGENCE_KEYS)
    return doc


def _resolve_model(spec: str):
    """Model name from the builtin catalog, or a path to a model file."""
    if spec in models.builtin_models():
        return models.make_model(spec), None
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"model {spec!r} is neither builtin nor an existing file")
    try:
        return models.load_model(path), path
    except ValueError as exc:
        raise ConfigError(str(exc))


def _out_dir(doc: dict, args) -> Path:
    out = args.out or doc.get("out_dir") or os.environ.get("DYNSYN_OUT", "dynsyn-out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _seeds(doc: dict, args) -> list[int]:
    if args.seed is not None:
        return [args.seed]
    seeds = doc.get("seeds", [0])
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("'seeds' must be a non-empty list of integers")
    return seeds


def _write_provenance(out: Path, doc: dict, seeds, inputs: dict) -> None:
    resolved = dict(doc)
    resolved["seeds"] = list(seeds)
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    info = {
        "version": dynsyn.__version__,
        "seeds": list(seeds),
        "input_checksums": {str(k): fileio.sha256_file(v)
                            for k, v in inputs.items() if v is not None},
    }
    (out / "run_info.json").write_text(json.dumps(info, indent=2) + "\n")


def _perturbation(doc: dict, seed: int) -> synergy.PerturbationConfig:
    kw = dict(doc.get("perturbation", {}))
    kw["seed"] = seed
    return synergy.PerturbationConfig(**kw)


def _task_env(doc: dict, model):
    kw = dict(doc.get("task", {}))
    name = kw.pop("name", "reach")
    try:
        config = TaskConfig(**{k: tuple(map(tuple, v)) if k == "target_bounds" and v
                               else v for k, v in kw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"task config: {exc}")
    if name == "reach":
        return lambda seed: _seeded_env(reach_env(model, config), seed), name, kw
    if name == "oscillate":
        return lambda seed: _seeded_env(oscillate_env(model, config), seed), name, kw
    raise ConfigError(f"unknown task {name!r} (reach or oscillate)")


def _seeded_env(env, seed):
    env.reset(seed=seed)
    return env


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- commands -----------------------------------------------------------------

def cmd_extract(args) -> int:
    doc = load_run_config(args.config)
    model, model_path = _resolve_model(doc.get("model", "arm2x6"))
    seeds = _seeds(doc, args)
    out = _out_dir(doc, args)
    clus = dict(doc.get("clustering", {}))
    n_segments = clus.get("n_segments", 100)
    use_diff = clus.get("use_differences", True)
    threshold = clus.get("selection_threshold", 0.8)
    n_restarts = clus.get("n_restarts", 2)

    def one_seed(seed: int):
        buf = synergy.generate_trajectory(model, _perturbation(doc, seed))
        fileio.save_trajectory(buf, out / f"trajectory_seed{seed}.traj")
        corr = synergy.correlation_matrix(buf, n_segments=n_segments,
                                          use_differences=use_diff)
        return buf, corr

    results = _map_jobs(one_seed, seeds, args.jobs)
    first_corr = results[0][1]
    fileio.save_matrix_csv(first_corr.R, out / "correlation.csv",
                           model.muscle_names)
    D0 = synergy.distance_from_correlation(first_corr.R)
    selection = None
    n_groups = clus.get("n_groups")
    if n_groups is None:
        candidates = clus.get("candidates") or list(
            range(2, min(model.n_muscles, 8) + 1))
        selection = synergy.select_group_count(D0, candidates, seed=seeds[0],
                                               threshold=threshold,
                                               n_restarts=n_restarts)
        n_groups = selection.n_groups
        with open(out / "selection_table.csv", "w") as fh:
            fh.write("n_groups,d_max,d_min,gap\n")
            for row in selection.table:
                fh.write(f"{row['n_groups']},{row['d_max']!r},"
                         f"{row['d_min']!r},{row['gap']!r}\n")

    groupings = []
    for seed, (_, corr) in zip(seeds, results):
        D = synergy.distance_from_correlation(corr.R)
        g = synergy.kmedoids(D, n_groups, seed=seed, n_restarts=n_restarts)
        groupings.append(g)
        fileio.save_grouping(g, out / f"grouping_seed{seed}.json",
                             model=model.name, selection=selection)
    P = synergy.grouping_probability(groupings)
    fileio.save_matrix_csv(P, out / "grouping_probability.csv", model.muscle_names)
    _write_provenance(out, doc, seeds, {"model": model_path})
    print(f"extract: model={model.name} n_groups={n_groups} seeds={seeds}")
    print(f"extract: outputs in {out}")
    return EXIT_OK


def _sac_config(doc: dict) -> SacConfig:
    try:
        return SacConfig(**doc.get("sac", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sac config: {exc}")


def _schedule(doc: dict) -> ClipSchedule:
    try:
        return ClipSchedule(**doc.get("schedule", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule config: {exc}")


def cmd_train(args) -> int:
    doc = load_run_config(args.config)
    model, model_path = _resolve_model(doc.get("model", "arm2x6"))
    seeds = _seeds(doc, args)
    out = _out_dir(doc, args)
    actor = args.actor or "flat"
    config = _sac_config(doc)
    schedule = _schedule(doc)
    factory, task_name, task_kw = _task_env(doc, model)

    grouping = None
    grouping_path = doc.get("grouping_file")
    if actor == "dynsyn":
        if not grouping_path:
            raise ConfigError("dynsyn actor requires 'grouping_file' in the config")
        grouping = fileio.load_grouping(grouping_path)
    elif grouping_path:
        grouping = fileio.load_grouping(grouping_path)

    resume = None
    if args.resume:
        resume = fileio.load_checkpoint(args.resume)
        stored = resume[1].get("grouping", {}).get("digest")
        current = fileio.grouping_digest(grouping) if grouping is not None else None
        if stored != current:
            raise ConfigError("checkpoint was trained against a different grouping")

    def run_seed(seed: int):
        curve_path = out / f"curve_{actor}_seed{seed}.csv"

        def flush(trainer, step, note="final"):
            meta = {
                "step": step,
                "updates": trainer.updates,
                "actor_kind": actor,
                "seed": seed,
                "note": note,
                "opt_steps": {"opt_actor": trainer.opt_actor.t,
                              "opt_critic0": trainer.opt_critics[0].t,
                              "opt_critic1": trainer.opt_critics[1].t,
                              "opt_alpha": trainer.opt_alpha.t},
                "sac": dataclasses.asdict(config),
                "schedule": dataclasses.asdict(schedule),
                "task": {"name": task_name, **task_kw},
                "model_doc": models.model_to_dict(model),
                "obs_dim": trainer.obs_dim,
                "grouping": {
                    "groups": [list(g) for g in trainer.groups.groups],
                    "digest": fileio.grouping_digest(grouping)
                    if grouping is not None else None,
                },
            }
            fileio.save_checkpoint(out / f"checkpoint_{actor}_seed{seed}.ckpt",
                                   trainer.state_arrays(), meta)

        trainer, result = train(
            factory, actor, config, seed, grouping=grouping, schedule=schedule,
            resume=resume,
            on_error=lambda tr, st: flush(tr, st, note="aborted"),
        )
        fileio.write_curve_csv(result.curve, curve_path)
        flush(trainer, result.total_steps)
        return result

    results = _map_jobs(run_seed, seeds, args.jobs)

    # aggregate across seeds at matching logged steps
    if results and results[0].curve:
        steps = [p.step for p in results[0].curve]
        if all([p.step for p in r.curve] == steps for r in results):
            with open(out / f"aggregate_{actor}.csv", "w") as fh:
                fh.write("step,mean_return,std_return,alpha,clip_c\n")
                for i, s in enumerate(steps):
                    vals = np.array([r.curve[i].mean_return for r in results])
                    alphas = np.array([r.curve[i].alpha for r in results])
                    fh.write(f"{s},{vals.mean()!r},{vals.std()!r},"
                             f"{alphas.mean()!r},{results[0].curve[i].clip_c!r}\n")

    _write_provenance(out, doc, seeds,
                      {"model": model_path, "grouping": grouping_path})
    print(f"train: actor={actor} seeds={seeds} steps={config.total_steps}")
    print(f"train: outputs in {out}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    doc = load_run_config(args.config)
    model, model_path = _resolve_model(doc.get("model", "arm2x6"))
    out = _out_dir(doc, args)
    conv = dict(doc.get("convergence", {}))
    sizes = conv.get("sample_sizes")
    if not sizes:
        raise ConfigError("'convergence.sample_sizes' is required")
    n_seeds = conv.get("n_seeds", 10)
    clus = dict(doc.get("clustering", {}))
    seeds = _seeds(doc, args)
    config = _perturbation(doc, seeds[0])
    rows, n_groups, _ = synergy.convergence_study(
        model, config, sizes, n_seeds=n_seeds,
        n_groups=clus.get("n_groups"), candidates=clus.get("candidates"),
        n_segments=clus.get("n_segments", 100),
        use_differences=clus.get("use_differences", True))
    with open(out / "convergence.csv", "w") as fh:
        fh.write("sample_size,distance\n")
        for row in rows:
            fh.write(f"{row.sample_size},{row.distance!r}\n")
    _write_provenance(out, doc, seeds, {"model": model_path})
    print(f"convergence: n_groups={n_groups}; rows={len(rows)}; outputs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise ConfigError("--episodes must be at least 1")
    arrays, meta = fileio.load_checkpoint(args.checkpoint)
    model = models.model_from_dict(meta["model_doc"])
    task = dict(meta.get("task", {"name": "reach"}))
    name = task.pop("name", "reach")
    tconf = TaskConfig(**{k: tuple(map(tuple, v)) if k == "target_bounds" and v
                          else v for k, v in task.items()})
    env = reach_env(model, tconf) if name == "reach" else oscillate_env(model, tconf)
    config = SacConfig(**meta["sac"])
    schedule = ClipSchedule(**meta["schedule"])
    groups_meta = meta["grouping"]
    from dynsyn.policy import GroupIndexMap
    from dynsyn.sac import SacTrainer
    gmap = GroupIndexMap(groups_meta["groups"])
    trainer = SacTrainer(meta["obs_dim"], gmap, config, schedule,
                         seed=int(meta.get("seed", 0)))
    trainer.load_state_arrays(arrays, meta.get("opt_steps", {}))
    step = int(meta["step"])

    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    seed0 = args.seed if args.seed is not None else 4242
    returns = []
    for ep in range(args.episodes):
        obs = env.reset(seed=seed0 + ep)
        total, done, rows = 0.0, False, []
        from dynsyn.policy import to_excitation
        while not done:
            a_g, w = trainer.act(obs[None, :], deterministic=True)
            ctrl = to_excitation(trainer.compose(a_g, w, step)[0])
            obs, r, done = env.step(ctrl)
            total += r
            rows.append((env.state.t, *env.state.q, *ctrl, r))
        returns.append(total)
        if args.traces:
            with open(out / f"trace_ep{ep}.csv", "w") as fh:
                qcols = ",".join(f"q{i}" for i in range(model.n_joints))
                ccols = ",".join(f"ctrl{i}" for i in range(model.n_muscles))
                fh.write(f"t,{qcols},{ccols},reward\n")
                for row in rows:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
    returns = np.array(returns)
    stats = {"episodes": int(args.episodes), "mean_return": float(returns.mean()),
             "std_return": float(returns.std()), "min_return": float(returns.min()),
             "max_return": float(returns.max()), "checkpoint_step": step}
    (out / "eval_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
    print(json.dumps(stats))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynsyn", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", help="output directory (else config/out_dir, "
                                     "else $DYNSYN_OUT, else ./dynsyn-out)")
        p.add_argument("--seed", type=int, help="single seed override")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for per-seed work")

    p = sub.add_parser("extract", help="generate trajectories and groupings")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a policy")
    common(p)
    p.add_argument("--actor", choices=("flat", "dynsyn"), default="flat")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convergence", help="grouping stability vs sample size")
    common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--traces", action="store_true", help="write episode CSVs")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime/integration failures
        traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
