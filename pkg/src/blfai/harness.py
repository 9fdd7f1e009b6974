"""Experiment orchestration: instance generation, Monte-Carlo sweeps,
error-exponent estimation, and deterministic CSV/JSON emission.

Repetitions are the unit of parallel work; rows are canonically sorted
before writing, so worker scheduling never changes output bytes.
"""

from __future__ import annotations

import csv
import json
import math
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import algorithms as algos
from .core import ArmSet, Instance, InvalidInstanceError, best_feasible_arm, load_instance
from .env import RngStream, split_seed
from .hardness import SolverOptions, gamma_closed_form

CSV_HEADER = ["algo", "instance", "rep", "t", "recommended", "correct"]
ALGORITHM_KINDS = ("blfaips", "lints_feasible", "ttts", "oracle", "peps_proxy")


class ConfigError(ValueError):
    """The experiment configuration is malformed."""


class ExperimentError(RuntimeError):
    """A run failed; partial output has been flushed."""


class ExponentUnresolved(RuntimeError):
    """No errors observed at any budget: the exponent cannot be estimated
    at this repetition count."""


# ---------------------------------------------------------------------------
# instance generation


def generate_eoo_instance(alpha: float) -> Instance:
    """Two-dimensional hard instance: a distractor arm at angle alpha from
    the best feasible arm, plus a cost constraint at 0.5."""
    if not 0.0 < alpha < math.pi / 2:
        raise ValueError("alpha must lie in (0, pi/2)")
    arms = ArmSet(np.array([
        [1.0, 0.0],
        [0.0, 0.15],
        [0.0, 1.0],
        [1.2, 1.2],
        [math.cos(alpha), math.sin(alpha)],
    ]))
    return Instance(train=arms, test=arms,
                    theta_r=np.array([1.0, 0.0]),
                    theta_c=np.array([0.0, 1.0]),
                    tau=0.5, sigma=1.0, gamma_noise=1.0,
                    r1_bound=2.0, r2_bound=2.0,
                    name=f"eoo-alpha{alpha:g}")


def generate_random_instance(d: int, K: int, seed: int,
                             max_attempts: int = 1000) -> Instance:
    """K arms uniform in the d-dimensional unit ball with axis-aligned
    reward/cost parameters; resamples until the instance validates."""
    if d < 2 or K < 2:
        raise ValueError("need d >= 2 and K >= 2")
    rng = RngStream(seed)
    theta_r = np.zeros(d)
    theta_r[0] = 1.0
    theta_c = np.zeros(d)
    theta_c[-1] = 1.0
    for _ in range(max_attempts):
        arms = sample_unit_ball(rng, K, d)
        if np.linalg.matrix_rank(arms) < d:
            continue
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error")
                inst = Instance(train=ArmSet(arms), test=ArmSet(arms),
                                theta_r=theta_r, theta_c=theta_c,
                                tau=0.5, sigma=1.0, gamma_noise=1.0,
                                r1_bound=2.0, r2_bound=2.0,
                                name=f"random-d{d}-K{K}-seed{seed}")
        except (InvalidInstanceError, Warning):
            continue
        return inst
    raise InvalidInstanceError(
        f"no valid random instance in {max_attempts} attempts")


def sample_unit_ball(rng: RngStream, n: int, d: int) -> np.ndarray:
    """n points uniform in the d-ball (direction times radius U^(1/d))."""
    raw = rng.standard_normal((n, d))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / d)
    return raw / norms * radii[:, None]


def load_dataset_instance(path, tau: float, sidecar=None,
                          sigma: float = 1.0, gamma: float = 1.0,
                          r1: float = math.sqrt(10), r2: float = math.sqrt(20)) -> Instance:
    """Build an instance from a pre-built arm-feature CSV.

    The CSV header must be ``id,feat_0..feat_{d-1}`` with an optional
    trailing ``reward_param`` column.  Ground-truth parameters come from a
    sidecar JSON ({"theta_r": [...], "theta_c": [...]}, optionally
    overriding tau/sigma/gamma/r1/r2); without a sidecar the instance
    loads with placeholder parameters and ``truth_known=False``, so runs
    emit empty correctness columns.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise ConfigError("dataset CSV must start with an 'id' column")
        has_reward = header[-1] == "reward_param"
        feat_cols = header[1:-1] if has_reward else header[1:]
        expected = [f"feat_{i}" for i in range(len(feat_cols))]
        if feat_cols != expected:
            raise ConfigError(f"feature columns must be {expected}")
        if not feat_cols:
            raise ConfigError("dataset CSV has no feature columns")
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise ConfigError("malformed dataset row: " + ",".join(line))
            rows.append([float(v) for v in line[1:]])
    if not rows:
        raise ConfigError("dataset CSV has no arms")
    data = np.asarray(rows, dtype=float)
    arms = data[:, :len(expected)]
    reward_param = data[:, -1] if has_reward else None

    overrides = {}
    truth = None
    if sidecar is not None:
        if isinstance(sidecar, (str, Path)):
            with open(sidecar, "r", encoding="utf-8") as fh:
                sidecar = json.load(fh)
        truth = (np.asarray(sidecar["theta_r"], dtype=float),
                 np.asarray(sidecar["theta_c"], dtype=float))
        overrides = {k: float(sidecar[k]) for k in
                     ("tau", "sigma", "gamma", "r1", "r2") if k in sidecar}

    tau = overrides.get("tau", tau)
    sigma = overrides.get("sigma", sigma)
    gamma = overrides.get("gamma", gamma)
    r1 = overrides.get("r1", r1)
    r2 = overrides.get("r2", r2)
    arm_set = ArmSet(arms)
    if truth is not None:
        if truth[0].shape != (arm_set.dim,) or truth[1].shape != (arm_set.dim,):
            raise ConfigError("sidecar parameter dimension mismatch")
        return Instance(train=arm_set, test=arm_set, theta_r=truth[0],
                        theta_c=truth[1], tau=tau, sigma=sigma,
                        gamma_noise=gamma, r1_bound=r1, r2_bound=r2,
                        name=str(path))
    # degraded mode: fit a placeholder reward parameter if the CSV carries
    # per-arm reward levels, otherwise zeros; no accuracy scoring
    theta_r = (np.linalg.lstsq(arms, reward_param, rcond=None)[0]
               if reward_param is not None else np.zeros(arm_set.dim))
    return Instance(train=arm_set, test=arm_set, theta_r=theta_r,
                    theta_c=np.zeros(arm_set.dim), tau=tau, sigma=sigma,
                    gamma_noise=gamma, r1_bound=r1, r2_bound=r2,
                    name=str(path), truth_known=False)


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class AlgorithmSpec:
    algo_id: str
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ALGORITHM_KINDS:
            raise ConfigError(f"unknown algorithm kind '{self.kind}'; "
                              f"expected one of {ALGORITHM_KINDS}")


@dataclass(frozen=True)
class RunRecord:
    algo: str
    instance: str
    rep: int
    t: int
    recommended: int
    correct: bool | None


@dataclass
class ExperimentConfig:
    instance: Instance
    algorithms: list
    budgets: list
    repetitions: int
    master_seed: int
    output_dir: Path | None = None
    workers: int = 1
    checkpoints: str = "sqrt2"   # or "final"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.budgets or any(b < 1 for b in self.budgets):
            raise ConfigError("budgets must be positive")
        if list(self.budgets) != sorted(set(self.budgets)):
            raise ConfigError("budgets must be strictly increasing")
        ids = [a.algo_id for a in self.algorithms]
        if len(ids) != len(set(ids)):
            raise ConfigError("algorithm ids must be unique")
        if not ids:
            raise ConfigError("at least one algorithm required")
        if self.checkpoints not in ("sqrt2", "final"):
            raise ConfigError("checkpoints must be 'sqrt2' or 'final'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file into a validated config."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad TOML: {exc}") from exc
    try:
        inst_cfg = dict(raw["instance"])
        run_cfg = dict(raw["run"])
        algo_cfgs = list(raw["algorithms"])
    except KeyError as exc:
        raise ConfigError(f"missing config section {exc}") from exc

    source = inst_cfg.pop("source", None)
    if source == "eoo":
        instance = generate_eoo_instance(float(inst_cfg.pop("alpha")))
    elif source == "random":
        instance = generate_random_instance(int(inst_cfg.pop("d")),
                                            int(inst_cfg.pop("k")),
                                            int(inst_cfg.pop("seed")))
    elif source == "file":
        instance = load_instance(inst_cfg.pop("path"))
    elif source == "dataset":
        instance = load_dataset_instance(inst_cfg.pop("path"),
                                         float(inst_cfg.pop("tau")),
                                         sidecar=inst_cfg.pop("sidecar", None))
    else:
        raise ConfigError(f"unknown instance source '{source}'")
    if inst_cfg:
        raise ConfigError(f"unused instance keys: {sorted(inst_cfg)}")

    specs = []
    for entry in algo_cfgs:
        entry = dict(entry)
        algo_id = str(entry.pop("id"))
        kind = str(entry.pop("kind", algo_id))
        specs.append(AlgorithmSpec(algo_id=algo_id, kind=kind, params=entry))

    out = run_cfg.pop("output_dir", None)
    try:
        cfg = ExperimentConfig(
            instance=instance,
            algorithms=specs,
            budgets=[int(b) for b in run_cfg.pop("budgets")],
            repetitions=int(run_cfg.pop("repetitions")),
            master_seed=int(run_cfg.pop("master_seed")),
            output_dir=Path(out) if out is not None else None,
            workers=int(run_cfg.pop("workers", 1)),
            checkpoints=str(run_cfg.pop("checkpoints", "sqrt2")),
        )
    except KeyError as exc:
        raise ConfigError(f"missing run key {exc}") from exc
    if run_cfg:
        raise ConfigError(f"unused run keys: {sorted(run_cfg)}")
    return cfg


# ---------------------------------------------------------------------------
# execution


def _resolve_shared(cfg: ExperimentConfig) -> dict:
    """Precompute pieces shared across repetitions (optimal allocation)."""
    shared = {}
    needs_wstar = any(s.kind == "oracle" and "w_star" not in s.params
                      for s in cfg.algorithms)
    needs_wstar |= any(s.kind == "ttts" and s.params.get("beta") == "wstar"
                       for s in cfg.algorithms)
    if needs_wstar:
        result = gamma_closed_form(cfg.instance, SolverOptions())
        shared["w_star"] = result.w_star
        shared["gamma"] = result.gamma
    return shared


def _run_task(task) -> list:
    inst, spec, T, global_rep, seed, shared = task
    rng = RngStream(seed)
    kind = spec.kind
    params = dict(spec.params)
    if kind == "blfaips":
        bp = algos.BlfaipsParams(**params)
        result = algos.blfaips_run(inst, T, bp, rng)
    elif kind == "peps_proxy":
        t_guess = int(params.pop("t_guess"))
        bp = algos.BlfaipsParams(**params)
        result = algos.peps_proxy_run(inst, t_guess, T, bp, rng)
    elif kind == "lints_feasible":
        result = algos.lints_feasible_run(inst, T, rng)
    elif kind == "ttts":
        beta = params.get("beta", 0.5)
        if beta == "wstar":
            w_star = shared["w_star"]
            beta = float(w_star[best_feasible_arm(inst)]) \
                if inst.train.arms.shape == inst.test.arms.shape \
                and np.array_equal(inst.train.arms, inst.test.arms) else 0.5
            beta = min(max(beta, 1e-3), 1.0)
        result = algos.ttts_beta_run(inst, T, float(beta), rng)
    elif kind == "oracle":
        w_star = params.get("w_star", shared.get("w_star"))
        result = algos.oracle_run(inst, T, rng, w_star=np.asarray(w_star))
    else:  # pragma: no cover - guarded by AlgorithmSpec
        raise ExperimentError(f"unhandled kind {kind}")
    return [RunRecord(algo=spec.algo_id, instance=inst.name, rep=global_rep,
                      t=t, recommended=rec, correct=corr)
            for (t, rec, corr) in result.checkpoints]


def run_experiment(cfg: ExperimentConfig):
    """Execute all (algorithm, budget, repetition) runs.

    Returns (records, summary).  When ``cfg.output_dir`` is set, writes
    ``results.csv`` and ``summary.json``; on a run failure the partial
    records are flushed next to an ``error_manifest.json`` and
    ExperimentError is raised.
    """
    t0 = time.monotonic()
    shared = _resolve_shared(cfg)
    tasks = []
    for spec in cfg.algorithms:
        for b_idx, T in enumerate(cfg.budgets):
            for r in range(cfg.repetitions):
                global_rep = b_idx * cfg.repetitions + r
                seed = split_seed(cfg.master_seed, spec.algo_id, global_rep)
                tasks.append((cfg.instance, spec, T, global_rep, seed, shared))

    records = []
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for rows in pool.map(_run_task, tasks, chunksize=8):
                    records.extend(rows)
        else:
            for task in tasks:
                records.extend(_run_task(task))
    except Exception as exc:
        records = _canonical(records, cfg)
        if cfg.output_dir is not None:
            _flush(cfg, records, None)
            manifest = {"error": repr(exc), "records_flushed": len(records)}
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            with open(cfg.output_dir / "error_manifest.json", "w",
                      encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2)
        raise ExperimentError(f"run failed: {exc!r}") from exc

    records = _canonical(records, cfg)
    summary = summarize(cfg, records, wall_clock_s=time.monotonic() - t0)
    if cfg.output_dir is not None:
        _flush(cfg, records, summary)
    return records, summary


def _canonical(records: list, cfg: ExperimentConfig) -> list:
    if cfg.checkpoints == "final":
        finals = set(cfg.budgets)
        keep = []
        for rec in records:
            # a run's own final checkpoint is its largest t; intermediate
            # rows at other budgets' values are filtered by rep block
            b_idx = rec.rep // cfg.repetitions
            if rec.t == cfg.budgets[b_idx]:
                keep.append(rec)
        records = keep
        del finals
    return sorted(records, key=lambda r: (r.algo, r.instance, r.rep, r.t))


def records_to_csv(records: list) -> str:
    lines = [",".join(CSV_HEADER)]
    for r in records:
        correct = "" if r.correct is None else str(int(r.correct))
        lines.append(f"{r.algo},{r.instance},{r.rep},{r.t},{r.recommended},{correct}")
    return "\n".join(lines) + "\n"


def records_from_csv(path) -> list:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"records CSV must have header {CSV_HEADER}")
        for row in reader:
            correct = None if row["correct"] == "" else bool(int(row["correct"]))
            records.append(RunRecord(algo=row["algo"], instance=row["instance"],
                                     rep=int(row["rep"]), t=int(row["t"]),
                                     recommended=int(row["recommended"]),
                                     correct=correct))
    return records


def _flush(cfg: ExperimentConfig, records: list, summary):
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(records_to_csv(records))
    if summary is not None:
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


def summarize(cfg: ExperimentConfig, records: list, wall_clock_s: float) -> dict:
    """Per-(algorithm, budget, checkpoint) accuracy with both 2-standard-error
    and 2-standard-deviation bands (readers pick; the shrinking bands in
    accuracy-over-time figures correspond to the SE variant)."""
    curves = {}
    for spec in cfg.algorithms:
        curves[spec.algo_id] = []
        for b_idx, T in enumerate(cfg.budgets):
            lo = b_idx * cfg.repetitions
            hi = lo + cfg.repetitions
            rows = [r for r in records
                    if r.algo == spec.algo_id and lo <= r.rep < hi]
            by_t = {}
            for r in rows:
                by_t.setdefault(r.t, []).append(r.correct)
            points = []
            for t in sorted(by_t):
                vals = by_t[t]
                if any(v is None for v in vals):
                    points.append({"t": t, "n": len(vals), "accuracy": None,
                                   "sd": None, "se": None,
                                   "band_2se": None, "band_2sd": None})
                    continue
                arr = np.array(vals, dtype=float)
                mean = float(arr.mean())
                sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
                se = sd / math.sqrt(arr.size) if arr.size > 0 else 0.0
                points.append({
                    "t": t, "n": int(arr.size), "accuracy": mean,
                    "sd": sd, "se": se,
                    "band_2se": [max(0.0, mean - 2 * se), min(1.0, mean + 2 * se)],
                    "band_2sd": [max(0.0, mean - 2 * sd), min(1.0, mean + 2 * sd)],
                })
            curves[spec.algo_id].append({"budget": T, "points": points})
    return {
        "instance": cfg.instance.name,
        "algorithms": [s.algo_id for s in cfg.algorithms],
        "budgets": list(cfg.budgets),
        "repetitions": cfg.repetitions,
        "master_seed": cfg.master_seed,
        "error_floor": 1.0 / (cfg.repetitions + 1),
        "total_pulls": int(sum(T for T in cfg.budgets)
                           * cfg.repetitions * len(cfg.algorithms)),
        "wall_clock_s": wall_clock_s,
        "curves": curves,
    }


# ---------------------------------------------------------------------------
# exponent estimation


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    r_squared: float
    budgets: tuple
    p_err: tuple
    neg_log_perr: tuple
    floor: float


def estimate_error_exponent(records: list, budgets: list) -> ExponentFit:
    """Least-squares fit of -log(max(Perr(T), 1/(R+1))) against T.

    The floor keeps zero-error budgets in the fit instead of dropping
    them (rule-of-three style clamp).  Requires at least 4 budgets with
    at least 100 repetitions each, final-checkpoint records only, and at
    least one error at the smallest budget.
    """
    budgets = sorted(int(b) for b in budgets)
    if len(budgets) < 4:
        raise ValueError("need at least 4 budgets")
    per_budget = {T: [] for T in budgets}
    for rec in records:
        if rec.t in per_budget:
            if rec.correct is None:
                raise ValueError("records lack correctness flags")
            per_budget[rec.t].append(rec.correct)
    counts = {T: len(v) for T, v in per_budget.items()}
    if min(counts.values()) < 100:
        raise ValueError(f"need >= 100 repetitions per budget, got {counts}")
    if len(set(counts.values())) != 1:
        raise ValueError(
            "unequal repetition counts per budget; build exponent records "
            "with the 'final' checkpoint policy so intermediate rows do "
            "not alias smaller budgets")
    R = counts[budgets[0]]
    floor = 1.0 / (R + 1)
    p_err = [1.0 - float(np.mean(per_budget[T])) for T in budgets]
    if p_err[0] <= 0.0:
        raise ValueError("no errors at the smallest budget")
    if all(p <= 0.0 for p in p_err):
        raise ExponentUnresolved(f"no errors at any budget with R={R}")
    ys = np.array([-math.log(max(p, floor)) for p in p_err])
    xs = np.array(budgets, dtype=float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ExponentFit(slope=float(slope), r_squared=float(r2),
                       budgets=tuple(budgets), p_err=tuple(p_err),
                       neg_log_perr=tuple(float(y) for y in ys), floor=floor)


def exponent_to_csv(fit: ExponentFit) -> str:
    lines = ["t,p_err,neg_log_perr,floored"]
    for T, p, y in zip(fit.budgets, fit.p_err, fit.neg_log_perr):
        lines.append(f"{T},{p!r},{y!r},{int(p < fit.floor)}")
    return "\n".join(lines) + "\n"
