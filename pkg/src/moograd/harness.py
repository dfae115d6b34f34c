"""Config-driven experiment runner.

One JSON document describes an experiment: problem, optimizer, schedules,
seeds and an optional population of start points. Every (seed, member) run
owns independent RNG streams derived as
``SeedSequence(seed, spawn_key=(member, purpose))`` with purposes
0 = initial point, 1 = gradient draws, 2 = guard batches, so runs are
deterministic and freely parallel. Outputs are one CSV per run plus a
manifest sufficient to re-run the experiment exactly; CSV floats carry 17
significant digits and the manifest stores a content hash computed with the
wall-time column blanked (timestamps are excluded from determinism checks).
"""

from __future__ import annotations

import hashlib
import inspect
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import optimizers as opt
from .guard import gml2o_deterministic_run, gml2o_run
from .metrics import extract_front, front_reference, hypervolume_2d, hypervolume_3d
from .minnorm import criticality_measure
from .ml2o import (
    Ml2oParams,
    init_params,
    init_state,
    load_checkpoint,
    meta_train,
    ml2o_direction,
    save_checkpoint,
)
from .problems import _REGISTRY as _PROBLEMS
from .problems import make_problem
from .trace import RunRecord

SCHEMA_VERSION = 1
PURPOSE_INIT, PURPOSE_DRAWS, PURPOSE_GUARD = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


def derive_rng(seed: int, member: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(member, purpose)))


_SCALARIZED = {"sgd", "momentum", "adam", "rmsprop", "adadelta"}
_OPTIMIZER_PARAMS: dict[str, set[str]] = {
    "mgda": set(),
    "smg": set(),
    "dssmg": set(),
    "moco": {"beta", "gamma", "rho", "track_bound"},
    "composite": {"beta"},
    "sgd": set(),
    "momentum": {"momentum"},
    "adam": {"beta1", "beta2", "eps"},
    "rmsprop": {"rms_decay", "eps"},
    "adadelta": {"ada_decay", "eps"},
    "ml2o": {"checkpoint", "exact"},
    "gml2o": {"checkpoint", "guard_batch"},
    "gml2o_det": {"checkpoint"},
}
_NEEDS_SAMPLES = {"dssmg", "gml2o"}
_NEEDS_CHECKPOINT = {"ml2o", "gml2o", "gml2o_det"}

_RUN_KEYS = {
    "problem",
    "optimizer",
    "steps",
    "step_schedule",
    "sample_schedule",
    "seeds",
    "population",
    "outputs",
}


def _check_problem_block(block, errors: list[str]) -> None:
    if not isinstance(block, dict):
        errors.append("problem: must be an object with 'name' and 'params'")
        return
    unknown = set(block) - {"name", "params"}
    if unknown:
        errors.append(f"problem: unknown fields {sorted(unknown)}")
    name = block.get("name")
    if name not in _PROBLEMS:
        errors.append(f"problem.name: unknown problem {name!r}; registered: {sorted(_PROBLEMS)}")
        return
    params = block.get("params", {})
    if not isinstance(params, dict):
        errors.append("problem.params: must be an object")
        return
    allowed = set(inspect.signature(_PROBLEMS[name]).parameters)
    unknown = set(params) - allowed
    if unknown:
        errors.append(f"problem.params: unknown fields {sorted(unknown)} (allowed: {sorted(allowed)})")


def validate_run_config(cfg: dict) -> list[str]:
    errors: list[str] = []
    if not isinstance(cfg, dict):
        return ["config root must be a JSON object"]
    unknown = set(cfg) - _RUN_KEYS
    if unknown:
        errors.append(f"unknown fields {sorted(unknown)}")
    for key in ("problem", "optimizer", "steps", "step_schedule", "seeds", "outputs"):
        if key not in cfg:
            errors.append(f"missing field {key!r}")
    _check_problem_block(cfg.get("problem"), errors)

    optblock = cfg.get("optimizer")
    optname = None
    if not isinstance(optblock, dict):
        errors.append("optimizer: must be an object with 'name' and 'params'")
    else:
        unknown = set(optblock) - {"name", "params"}
        if unknown:
            errors.append(f"optimizer: unknown fields {sorted(unknown)}")
        optname = optblock.get("name")
        if optname not in _OPTIMIZER_PARAMS:
            errors.append(
                f"optimizer.name: unknown optimizer {optname!r}; "
                f"known: {sorted(_OPTIMIZER_PARAMS)}"
            )
        else:
            params = optblock.get("params", {})
            if not isinstance(params, dict):
                errors.append("optimizer.params: must be an object")
            else:
                unknown = set(params) - _OPTIMIZER_PARAMS[optname]
                if unknown:
                    errors.append(
                        f"optimizer.params: unknown fields {sorted(unknown)} "
                        f"(allowed: {sorted(_OPTIMIZER_PARAMS[optname])})"
                    )
                if optname in _NEEDS_CHECKPOINT and "checkpoint" not in params:
                    errors.append(f"optimizer.params.checkpoint: required for {optname!r}")
            if optname in _NEEDS_SAMPLES and "sample_schedule" not in cfg:
                errors.append(f"sample_schedule: required for optimizer {optname!r}")

    steps = cfg.get("steps")
    if steps is not None and (not isinstance(steps, int) or steps < 1):
        errors.append(f"steps: must be an integer >= 1, got {steps!r}")

    sched = cfg.get("step_schedule")
    if sched is not None:
        if not isinstance(sched, dict) or set(sched) - {"kind", "alpha"}:
            errors.append("step_schedule: must be an object with fields 'kind' and 'alpha'")
        else:
            try:
                opt.StepSchedule(sched.get("kind", "constant"), sched.get("alpha", 0.01))
            except ValueError as exc:
                errors.append(f"step_schedule: {exc}")

    samp = cfg.get("sample_schedule")
    if samp is not None:
        if not isinstance(samp, dict) or set(samp) - {"n_base", "q"}:
            errors.append("sample_schedule: must be an object with fields 'n_base' and 'q'")
        else:
            try:
                opt.SampleSchedule(samp.get("n_base", 1), samp.get("q", 0.1))
            except ValueError as exc:
                errors.append(f"sample_schedule: {exc}")

    seeds = cfg.get("seeds")
    if seeds is not None and (
        not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds)
    ):
        errors.append("seeds: must be a non-empty list of integers")

    pop = cfg.get("population")
    if pop is not None and (not isinstance(pop, int) or pop < 1):
        errors.append(f"population: must be an integer >= 1, got {pop!r}")

    outputs = cfg.get("outputs")
    if outputs is not None and not isinstance(outputs, str):
        errors.append("outputs: must be a directory path string")
    return errors


def _build_step_fn(name, problem, params, schedule, samples, ml2o_params):
    if name == "mgda":
        return lambda st, rng: opt.mgda_step(problem, st, schedule)
    if name == "smg":
        return lambda st, rng: opt.smg_step(problem, st, schedule, rng)
    if name == "dssmg":
        return lambda st, rng: opt.dssmg_step(problem, st, schedule, samples, rng)
    if name == "moco":
        return lambda st, rng: opt.moco_like_step(problem, st, schedule, rng, **params)
    if name == "composite":
        return lambda st, rng: opt.composite_weight_step(problem, st, schedule, rng, **params)
    if name in _SCALARIZED:
        return lambda st, rng: opt.scalarized_step(problem, st, schedule, rng, rule=name, **params)
    if name == "ml2o":
        exact = bool(params.get("exact", False))

        def step(st, rng):
            mst = st.memory.get("ml2o_state")
            if mst is None:
                mst = init_state(ml2o_params.m, ml2o_params.hidden, problem.dim)
            if exact:
                y_rows, n = problem.full_jacobian(st.x), None
            else:
                n = opt.sample_size(st.k, samples) if samples else 1
                y_rows = problem.averaged_gradient(st.x, n, rng)
            g, mst = ml2o_direction(y_rows, mst, ml2o_params)
            alpha = schedule.at(st.k)
            new = opt.OptimizerState(
                x=st.x - alpha * g, k=st.k + 1, memory={**st.memory, "ml2o_state": mst}
            )
            return new, opt.StepInfo(g, alpha, n_samples=n)

        return step
    raise ValueError(f"no step function for optimizer {name!r}")


@dataclass
class RunResult:
    seed: int
    member: int | None
    record: RunRecord


def _run_single(cfg, problem, schedule, samples, ml2o_params, seed, member) -> RunResult:
    name = cfg["optimizer"]["name"]
    params = dict(cfg["optimizer"].get("params", {}))
    params.pop("checkpoint", None)
    mb = 0 if member is None else member
    init_rng = derive_rng(seed, mb, PURPOSE_INIT)
    draws_rng = derive_rng(seed, mb, PURPOSE_DRAWS)
    x0 = problem.initial_point(init_rng)
    steps = cfg["steps"]
    if name == "gml2o":
        record = gml2o_run(
            problem,
            ml2o_params,
            schedule,
            samples,
            steps,
            x0,
            draws_rng,
            guard_rng=derive_rng(seed, mb, PURPOSE_GUARD),
            guard_batch=int(params.get("guard_batch", 512)),
            keep_iterates=False,
        )
    elif name == "gml2o_det":
        if schedule.kind != "constant":
            raise ValueError("gml2o_det requires a constant step schedule")
        record = gml2o_deterministic_run(
            problem, ml2o_params, schedule.alpha, steps, x0, keep_iterates=False
        )
    else:
        step_fn = _build_step_fn(name, problem, params, schedule, samples, ml2o_params)
        record = opt.run_steps(problem, step_fn, x0, steps, draws_rng, keep_iterates=False)
    return RunResult(seed, member, record)


def _csv_lines(record: RunRecord, m: int) -> list[str]:
    header = (
        ["k"]
        + [f"loss_{i + 1}" for i in range(m)]
        + ["direction_norm", "alpha", "n_samples", "guard_choice", "wall_time"]
    )
    lines = [",".join(header)]
    for row in record.rows:
        cells = [str(row.k)]
        cells += [f"{v:.17g}" for v in row.losses]
        cells.append(f"{row.direction_norm:.17g}")
        cells.append(f"{row.alpha:.17g}")
        cells.append("" if row.n_samples is None else str(row.n_samples))
        cells.append("" if row.guard_choice is None else row.guard_choice)
        cells.append(f"{row.wall_time:.6g}")
        lines.append(",".join(cells))
    return lines


def csv_content_hash(lines: list[str]) -> str:
    """SHA-256 of the rows with the trailing wall-time cell blanked."""
    digest = hashlib.sha256()
    for line in lines:
        cells = line.split(",")
        cells[-1] = ""
        digest.update(",".join(cells).encode())
        digest.update(b"\n")
    return digest.hexdigest()


def hash_csv_file(path: str) -> str:
    with open(path) as fh:
        return csv_content_hash(fh.read().splitlines())


def _write_manifest(out_dir: str, doc: dict) -> None:
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))


def run_experiment(cfg: dict, out_dir: str | None = None, threads: int = 1,
                   write_front: bool = False) -> list[RunResult]:
    """Execute every (seed, member) run of a config and persist CSVs + manifest."""
    errors = validate_run_config(cfg)
    if errors:
        raise ConfigError(errors)
    out_dir = out_dir or cfg["outputs"]
    os.makedirs(out_dir, exist_ok=True)

    problem = make_problem(cfg["problem"]["name"], **cfg["problem"].get("params", {}))
    sched_cfg = cfg["step_schedule"]
    schedule = opt.StepSchedule(sched_cfg.get("kind", "constant"), sched_cfg.get("alpha", 0.01))
    samples = None
    if "sample_schedule" in cfg:
        samples = opt.SampleSchedule(cfg["sample_schedule"]["n_base"], cfg["sample_schedule"]["q"])
    ml2o_params = None
    optname = cfg["optimizer"]["name"]
    if optname in _NEEDS_CHECKPOINT:
        ml2o_params = load_checkpoint(cfg["optimizer"]["params"]["checkpoint"])

    population = cfg.get("population")
    members = [None] if population is None else list(range(population))
    tasks = [(seed, member) for seed in cfg["seeds"] for member in members]

    written: list[str] = []
    results: list[RunResult] = []
    try:
        def work(task):
            seed, member = task
            return _run_single(cfg, problem, schedule, samples, ml2o_params, seed, member)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, tasks))
        else:
            results = [work(t) for t in tasks]

        manifest_runs = []
        for res in results:
            stem = f"seed{res.seed}" + ("" if res.member is None else f"_member{res.member}")
            path = os.path.join(out_dir, stem + ".csv")
            lines = _csv_lines(res.record, problem.objectives)
            with open(path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
            written.append(path)
            manifest_runs.append(
                {
                    "seed": res.seed,
                    "member": res.member,
                    "file": stem + ".csv",
                    "rows": len(res.record.rows),
                    "content_hash": csv_content_hash(lines),
                    "final_losses": [float(v) for v in res.record.final_losses],
                    "final_x": [float(v) for v in res.record.meta["final_x"]],
                }
            )
        if write_front:
            for seed in cfg["seeds"]:
                pts = np.array(
                    [r.record.final_losses for r in results if r.seed == seed], dtype=np.float64
                )
                front = extract_front(pts)
                fpath = os.path.join(out_dir, f"front_seed{seed}.csv")
                with open(fpath, "w") as fh:
                    fh.write(",".join(f"f_{i + 1}" for i in range(problem.objectives)) + "\n")
                    for row in front:
                        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
                written.append(fpath)
        _write_manifest(
            out_dir,
            {
                "schema_version": SCHEMA_VERSION,
                "toolkit_version": __version__,
                "kind": "run",
                "config": cfg,
                "csv_columns": "k,loss_*,direction_norm,alpha,n_samples,guard_choice,wall_time",
                "runs": manifest_runs,
                "created_unix": time.time(),
            },
        )
    except Exception:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    return results


_TRAIN_KEYS = {
    "problem_sampler",
    "m",
    "hidden",
    "out_width",
    "steps",
    "window",
    "meta_lr",
    "epochs",
    "alpha",
    "seed",
    "init_scale",
    "init_checkpoint",
    "start_epoch",
    "draw_mode",
    "outputs",
}


def validate_train_config(cfg: dict) -> list[str]:
    errors: list[str] = []
    if not isinstance(cfg, dict):
        return ["config root must be a JSON object"]
    unknown = set(cfg) - _TRAIN_KEYS
    if unknown:
        errors.append(f"unknown fields {sorted(unknown)}")
    for key in ("problem_sampler", "steps", "window", "meta_lr", "epochs", "seed", "outputs"):
        if key not in cfg:
            errors.append(f"missing field {key!r}")
    block = cfg.get("problem_sampler")
    if block is not None:
        _check_problem_block(block, errors)
        if isinstance(block, dict) and "seed" in block.get("params", {}):
            errors.append("problem_sampler.params.seed: drawn per epoch, must not be fixed")
    steps, window = cfg.get("steps"), cfg.get("window")
    if isinstance(steps, int) and isinstance(window, int):
        if window < 1 or steps < 1 or steps % window != 0:
            errors.append(f"window: {window} must be >= 1 and divide steps {steps}")
    if "epochs" in cfg and (not isinstance(cfg["epochs"], int) or cfg["epochs"] < 0):
        errors.append("epochs: must be an integer >= 0")
    if cfg.get("draw_mode", "sample") not in ("sample", "exact"):
        errors.append("draw_mode: must be 'sample' or 'exact'")
    return errors


def train_ml2o_cmd(cfg: dict, out_dir: str | None = None) -> Ml2oParams:
    """Meta-train from a config; writes checkpoint.json and meta_loss.csv."""
    errors = validate_train_config(cfg)
    if errors:
        raise ConfigError(errors)
    out_dir = out_dir or cfg["outputs"]
    os.makedirs(out_dir, exist_ok=True)

    pname = cfg["problem_sampler"]["name"]
    pparams = cfg["problem_sampler"].get("params", {})

    def sampler(rng: np.random.Generator):
        return make_problem(pname, seed=int(rng.integers(2**31 - 1)), **pparams)

    m = int(cfg.get("m", 2))
    hidden = int(cfg.get("hidden", 8))
    out_width = int(cfg.get("out_width", 1))
    if cfg.get("init_checkpoint"):
        params0 = load_checkpoint(cfg["init_checkpoint"])
    else:
        params0 = init_params(m, hidden, cfg["seed"], out_width, cfg.get("init_scale", 0.1))
    trained, trace = meta_train(
        sampler,
        params0,
        steps=cfg["steps"],
        window=cfg["window"],
        meta_lr=cfg["meta_lr"],
        epochs=cfg["epochs"],
        seed=cfg["seed"],
        alpha=cfg.get("alpha", 0.1),
        start_epoch=cfg.get("start_epoch", 0),
        draw_mode=cfg.get("draw_mode", "sample"),
    )
    save_checkpoint(trained, os.path.join(out_dir, "checkpoint.json"))
    with open(os.path.join(out_dir, "meta_loss.csv"), "w") as fh:
        fh.write("epoch,period,meta_loss\n")
        for epoch, period, loss in trace:
            fh.write(f"{epoch},{period},{loss:.17g}\n")
    _write_manifest(
        out_dir,
        {
            "schema_version": SCHEMA_VERSION,
            "toolkit_version": __version__,
            "kind": "train",
            "config": cfg,
            "periods": len(trace),
            "created_unix": time.time(),
        },
    )
    return trained


COMPARE_METRICS = ("final-max-loss", "hypervolume", "criticality")


def _load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest.json in {run_dir!r}; not a run directory")
    with open(path) as fh:
        return json.load(fh)


def compare_cmd(run_dirs: list[str], metric: str, out_path: str | None = None) -> list[dict]:
    """Aggregate one metric per run directory (mean and std over seeds)."""
    if metric not in COMPARE_METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose from {COMPARE_METRICS}")
    if not run_dirs:
        raise ValueError("at least one run directory is required")
    manifests = [_load_manifest(d) for d in run_dirs]
    base = manifests[0]["config"]
    for mf, d in zip(manifests, run_dirs):
        c = mf["config"]
        if c["problem"] != base["problem"] or c["steps"] != base["steps"]:
            raise ValueError(f"run dir {d!r} has a different problem or step count")

    per_dir_fronts: dict[int, dict[str, np.ndarray]] = {}
    if metric == "hypervolume":
        for d, mf in zip(run_dirs, manifests):
            for seed in mf["config"]["seeds"]:
                pts = np.array(
                    [r["final_losses"] for r in mf["runs"] if r["seed"] == seed], dtype=np.float64
                )
                per_dir_fronts.setdefault(seed, {})[d] = extract_front(pts)

    report = []
    for d, mf in zip(run_dirs, manifests):
        cfgd = mf["config"]
        problem = None
        if metric == "criticality":
            problem = make_problem(cfgd["problem"]["name"], **cfgd["problem"].get("params", {}))
        per_seed = []
        for seed in cfgd["seeds"]:
            runs = [r for r in mf["runs"] if r["seed"] == seed]
            if not runs:
                raise ValueError(f"run dir {d!r} has no runs for seed {seed}")
            if metric == "final-max-loss":
                per_seed.append(float(np.mean([max(r["final_losses"]) for r in runs])))
            elif metric == "criticality":
                per_seed.append(
                    float(
                        np.mean(
                            [
                                criticality_measure(problem, np.asarray(r["final_x"]))
                                for r in runs
                            ]
                        )
                    )
                )
            else:
                fronts = per_dir_fronts[seed]
                ref = front_reference(*fronts.values())
                front = fronts[d]
                hv = hypervolume_2d(front, ref) if ref.size == 2 else hypervolume_3d(front, ref)
                per_seed.append(float(hv))
        report.append(
            {
                "run_dir": d,
                "optimizer": cfgd["optimizer"]["name"],
                "metric": metric,
                "mean": float(np.mean(per_seed)),
                "std": float(np.std(per_seed)),
                "n_seeds": len(per_seed),
            }
        )
    if out_path:
        with open(out_path, "w") as fh:
            fh.write("run_dir,optimizer,metric,mean,std,n_seeds\n")
            for row in report:
                fh.write(
                    f"{row['run_dir']},{row['optimizer']},{row['metric']},"
                    f"{row['mean']:.17g},{row['std']:.17g},{row['n_seeds']}\n"
                )
    return report
