"""Experiment drivers: training curves, SNR sweep and the small-instance oracle suite.

All randomness flows from ``np.random.default_rng([seed, stream, ...])`` so
every (config, seed) pair reproduces the same CSV bytes. Methods compared
within a seed see the same sequence of channel drops.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, gdm
from .classical import (brute_force_best, count_feasible, deferred_acceptance, is_stable,
                        matching_value, max_weight_assignment, random_profile)
from .classical import greedy_matching as greedy_search
from .config import ExperimentConfig, dumps
from .dqn import DQNTrainer
from .errors import DiffmatchError
from .gdm import EpochStats
from .matchgraph import random_matching
from .scenario import Drop, FixedDrop, Scenario
from .scorer import OptState, save_checkpoint

log = logging.getLogger(__name__)

CSV_HEADER = ("method", "seed", "axis", "axis_value", "metric", "value")
STATS_HEADER = ("epoch", "mean_reward", "max_reward", "grad_norm", "seed")

# independent random streams per seed
STREAM_SCENARIO = 0
STREAM_DROPS = 1
STREAM_GDM = 2
STREAM_DQN = 3
STREAM_RANDOM = 4
STREAM_EVAL = 5
STREAM_ORACLE = 6


def stream(seed: int, *tags) -> np.random.Generator:
    return np.random.default_rng([int(seed), *(int(t) for t in tags)])


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    out = override or os.environ.get("DIFFMATCH_OUT") or cfg.run.output_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class RecordWriter:
    """Append-only CSV writer that flushes every row, so partial runs survive."""

    def __init__(self, path, header=CSV_HEADER):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self._fh.flush()

    def row(self, *values) -> None:
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["axis_value"] = float(r["axis_value"])
        r["value"] = float(r["value"])
    return rows


@dataclass
class RunResult:
    paths: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)


def write_manifest(out: Path, cfg: ExperimentConfig, seeds, command: str) -> Path:
    path = out / "run-manifest.txt"
    lines = [
        f"command = {command}",
        f"config_sha256 = {cfg.digest()}",
        f"code_version = {__version__}",
        f"seeds = {' '.join(str(s) for s in seeds)}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "config.used.txt").write_text(dumps(cfg), encoding="utf-8")
    return path


class DropSequence:
    """Drops drawn from a private stream, so each method sees the same sequence."""

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.scenario = scenario
        self._rng = rng

    def sample_drop(self, rng=None) -> Drop:
        return self.scenario.sample_drop(self._rng)


def build_scenario(cfg: ExperimentConfig, seed: int, snr_choices) -> Scenario:
    sc = cfg.scenario
    return Scenario.sampled(stream(seed, STREAM_SCENARIO), sc.num_users, sc.num_experts,
                            sc.quota, cfg.radio, cfg.reward, snr_choices, cfg.condition,
                            sc.affinity_spread, sc.affinity_floor)


def schedule_for(cfg: ExperimentConfig, steps: int) -> gdm.NoiseSchedule:
    tr = cfg.training
    return gdm.build_schedule(steps, "linear", tr.beta_start, tr.beta_end, tr.alpha_bar_max)


def trailing_mean(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def epochs_to_fraction(curve, final_window: int, smoothing: int, frac: float = 0.9) -> int:
    """First epoch (1-based) at which the smoothed curve covers ``frac`` of its rise.

    The rise runs from the mean of the first ``smoothing`` epochs to the mean
    of the last ``final_window`` epochs. A curve that never rises is reported
    as not converging (its full length).
    """
    curve = np.asarray(curve, dtype=np.float64)
    w = max(1, smoothing)
    start = curve[:w].mean()
    final = curve[-final_window:].mean()
    if final <= start:
        return int(curve.size)
    target = start + frac * (final - start)
    hit = np.flatnonzero(trailing_mean(curve, w) >= target)
    return int(hit[0]) + 1 if hit.size else int(curve.size)


def _train_gdm(cfg, scenario, seed, steps, env, epochs, on_epoch=None):
    tr = cfg.training
    rng = stream(seed, STREAM_GDM, steps)
    # only the condition length matters here; a side stream keeps ``env`` untouched
    cond = scenario.drop_at(stream(seed, STREAM_GDM, steps, 1), scenario.snr_choices[0]).cond
    p = gdm.init_denoiser(cond, rng, (tr.hidden,))
    opt = OptState.for_params(p, lr=tr.lr)
    sched = schedule_for(cfg, steps)
    for ep in range(epochs):
        st = gdm.train_epoch(p, opt, env, tr.batch, sched, rng)
        if on_epoch:
            on_epoch(ep, st)
    return p, sched


def _train_dqn(cfg, scenario, seed, env, epochs, on_epoch=None):
    tr = cfg.training
    rng = stream(seed, STREAM_DQN)
    cond = scenario.drop_at(stream(seed, STREAM_DQN, 1), scenario.snr_choices[0]).cond
    trainer = DQNTrainer(cond, tr.dqn_settings(), rng)
    for ep in range(epochs):
        st = trainer.train_epoch(env, tr.dqn_episodes, ep, epochs, rng)
        if on_epoch:
            on_epoch(ep, st)
    return trainer


def _random_epoch(drop: Drop, batch: int, rng) -> EpochStats:
    pb = drop.problem
    res = [pb.evaluate(random_matching(rng, pb.num_users, pb.num_experts, pb.quota))
           for _ in range(batch)]
    rewards = np.array([r.total for r in res])
    return EpochStats(float(rewards.mean()), float(rewards.max()), 0.0,
                      float(np.mean([r.qoe_sum for r in res])))


class _CurveLogger:
    def __init__(self, writer: RecordWriter, stats_path: Path, method: str, seed: int,
                 smoothing: int):
        self.w, self.method, self.seed, self.smoothing = writer, method, seed, smoothing
        self.stats = RecordWriter(stats_path, STATS_HEADER)
        self.curve = []

    def __call__(self, ep: int, st: EpochStats) -> None:
        epoch = ep + 1
        # the reward of what the method would output now; for dqn that is the
        # greedy policy, its exploring episodes are logged separately
        value = getattr(st, "greedy_reward", st.mean_reward)
        self.curve.append(value)
        self.w.row(self.method, self.seed, "epoch", epoch, "mean_reward", value)
        if self.smoothing:
            sm = float(np.mean(self.curve[-self.smoothing:]))
            self.w.row(self.method, self.seed, "epoch", epoch, "mean_reward_smooth", sm)
        if hasattr(st, "greedy_reward"):
            self.w.row(self.method, self.seed, "epoch", epoch, "exploration_reward",
                       st.mean_reward)
        self.stats.row(epoch, value, max(value, st.max_reward), st.grad_norm, self.seed)

    def close(self):
        self.stats.close()


def run_convergence(cfg: ExperimentConfig, out=None, seeds=None) -> RunResult:
    """Per-epoch mean reward of gdm (largest T), dqn and random at a fixed SNR."""
    out = output_dir(cfg, out)
    seeds = tuple(seeds if seeds is not None else cfg.run.seeds)
    sw, tr = cfg.sweep, cfg.training
    steps = max(tr.diffusion_steps)
    result = RunResult()
    write_manifest(out, cfg, seeds, "converge")
    csv_path = out / "convergence.csv"
    result.paths.append(csv_path)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    with RecordWriter(csv_path) as w:
        for seed in seeds:
            scenario = build_scenario(cfg, seed, (sw.convergence_snr_db,))
            curves = {}
            try:
                for method in ("gdm", "dqn", "random"):
                    logger = _CurveLogger(w, out / "stats" / f"{method}_seed{seed}.csv",
                                          method, seed, sw.smoothing_window)
                    env = DropSequence(scenario, stream(seed, STREAM_DROPS))
                    try:
                        if method == "gdm":
                            p, _ = _train_gdm(cfg, scenario, seed, steps, env, tr.epochs, logger)
                            save_checkpoint(p, ckpt / f"gdm_T{steps}_seed{seed}.bin",
                                            {"diffusion_steps": steps, "seed": seed,
                                             "lr": tr.lr, "batch": tr.batch})
                        elif method == "dqn":
                            trainer = _train_dqn(cfg, scenario, seed, env, tr.epochs, logger)
                            save_checkpoint(trainer.params, ckpt / f"dqn_seed{seed}.bin",
                                            {"seed": seed, "lr": tr.dqn_lr})
                        else:
                            rng = stream(seed, STREAM_RANDOM)
                            for ep in range(tr.epochs):
                                logger(ep, _random_epoch(env.sample_drop(), tr.batch, rng))
                    finally:
                        logger.close()
                    curves[method] = logger.curve
            except DiffmatchError as exc:
                log.error("convergence seed %d failed: %s", seed, exc)
                result.errors.append(f"seed {seed}: {exc}")
                continue
            for method, curve in curves.items():
                fw = min(sw.final_window, len(curve))
                w.row(method, seed, "summary", fw, "final_mean_reward", float(np.mean(curve[-fw:])))
                w.row(method, seed, "summary", 0.9, "epochs_to_90pct",
                      epochs_to_fraction(curve, fw, sw.smoothing_window))
    return result


def _normalizer(cfg, drops, seed):
    """Per-drop oracle QoE when enumeration is affordable, else the saturated bound."""
    sc = cfg.scenario
    if count_feasible(sc.num_users, sc.num_experts, sc.quota) <= cfg.sweep.brute_force_limit:
        vals = []
        for d in drops:
            m, _ = brute_force_best(d.problem.score, sc.num_users, sc.num_experts, sc.quota,
                                    limit=cfg.sweep.brute_force_limit)
            vals.append(d.problem.qoe_sum(m))
        return "oracle", np.array(vals)
    return "upper_proxy", np.array([d.problem.qoe_upper_bound() for d in drops])


def run_snr_sweep(cfg: ExperimentConfig, out=None, seeds=None) -> RunResult:
    """Normalized QoE of every method at each SNR grid point.

    The learned matchers are trained once per seed as a single policy
    conditioned on SNR drawn from the grid, then evaluated on a common set of
    channel drops re-scaled to each SNR.
    """
    out = output_dir(cfg, out)
    seeds = tuple(seeds if seeds is not None else cfg.run.seeds)
    sw, tr, sc = cfg.sweep, cfg.training, cfg.scenario
    grid = sw.grid()
    result = RunResult()
    write_manifest(out, cfg, seeds, "sweep")
    csv_path = out / "snr_sweep.csv"
    result.paths.append(csv_path)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    with RecordWriter(csv_path) as w:
        for seed in seeds:
            try:
                scenario = build_scenario(cfg, seed, grid)
                policies = {}
                for steps in tr.diffusion_steps:
                    env = DropSequence(scenario, stream(seed, STREAM_DROPS))
                    p, sched = _train_gdm(cfg, scenario, seed, steps, env, tr.epochs)
                    save_checkpoint(p, ckpt / f"sweep_gdm_T{steps}_seed{seed}.bin",
                                    {"diffusion_steps": steps, "seed": seed})
                    policies[f"gdm-T{steps}"] = (p, sched)
                env = DropSequence(scenario, stream(seed, STREAM_DROPS))
                trainer = _train_dqn(cfg, scenario, seed, env, tr.epochs)
                save_checkpoint(trainer.params, ckpt / f"sweep_dqn_seed{seed}.bin", {"seed": seed})
                base_rng = stream(seed, STREAM_EVAL)
                base = [scenario.drop_at(base_rng, grid[0]) for _ in range(sw.eval_drops)]
                for k, snr in enumerate(grid):
                    drops = [scenario.at_snr(d, snr) for d in base]
                    qoe = {}
                    for name, (p, sched) in policies.items():
                        rng = stream(seed, STREAM_EVAL, 1, k)
                        qoe[name] = [d.problem.qoe_sum(gdm.sample_matching(p, d.cond, sched, rng)[0])
                                     for d in drops]
                    qoe["dqn"] = [d.problem.qoe_sum(trainer.greedy_matching(d.problem, d.cond))
                                  for d in drops]
                    # same random matchings at every SNR
                    rng = stream(seed, STREAM_RANDOM, 1)
                    qoe["random"] = [d.problem.qoe_sum(
                        random_matching(rng, sc.num_users, sc.num_experts, sc.quota)) for d in drops]
                    qoe["greedy"] = [d.problem.qoe_sum(greedy_search(
                        d.problem.partial_score, sc.num_users, sc.num_experts, sc.quota))
                        for d in drops]
                    ref_name, ref = _normalizer(cfg, drops, seed)
                    qoe[ref_name] = list(ref)
                    norm = float(np.mean(ref))
                    for name, vals in qoe.items():
                        vals = np.asarray(vals)
                        se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
                        w.row(name, seed, "snr_db", snr, "qoe_sum", float(vals.mean()))
                        w.row(name, seed, "snr_db", snr, "normalized_qoe", float(vals.mean()) / norm)
                        w.row(name, seed, "snr_db", snr, "normalized_qoe_se", se / norm)
            except DiffmatchError as exc:
                log.error("sweep seed %d failed: %s", seed, exc)
                result.errors.append(f"seed {seed}: {exc}")
    return result


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str


def _check_max_weight(cfg, seed) -> CheckResult:
    o = cfg.oracle
    rng = stream(seed, STREAM_ORACLE, 0)
    shapes = o.shapes()
    bad = 0
    for i in range(o.weight_instances):
        u, e = shapes[i % len(shapes)]
        quota = 1 + i % e
        w = rng.normal(size=(u, e))
        got = max_weight_assignment(-w if o.corrupt_weights else w, quota)
        _, best = brute_force_best(lambda m: matching_value(m, w), u, e, quota)
        if not np.isclose(matching_value(got, w), best, rtol=0, atol=1e-12):
            bad += 1
    return CheckResult("max_weight_matches_brute_force", bad == 0, float(bad),
                       f"{bad} of {o.weight_instances} instances disagree")


def _check_da(cfg, seed) -> CheckResult:
    o = cfg.oracle
    rng = stream(seed, STREAM_ORACLE, 1)
    shapes = o.shapes()
    bad = 0
    for i in range(o.da_instances):
        u, e = shapes[i % len(shapes)]
        cap = int(rng.integers(1, u + 1))
        prof = random_profile(rng, u, e, cap)
        if not is_stable(deferred_acceptance(prof), prof):
            bad += 1
    return CheckResult("deferred_acceptance_stable", bad == 0, float(bad),
                       f"{bad} of {o.da_instances} outcomes have a blocking pair")


def oracle_gap(cfg: ExperimentConfig, num_users: int, num_experts: int, seed: int,
               eval_samples: int = 100):
    """Train gdm on one fixed small drop; return (mean sampled reward, optimum)."""
    o, tr = cfg.oracle, cfg.training
    steps = max(tr.diffusion_steps)
    scenario = Scenario.sampled(stream(seed, STREAM_ORACLE, 2, num_users, num_experts),
                                num_users, num_experts, o.quota, cfg.radio, cfg.reward,
                                (o.snr_db,), cfg.condition,
                                cfg.scenario.affinity_spread, cfg.scenario.affinity_floor)
    env = FixedDrop(scenario.sample_drop(stream(seed, STREAM_ORACLE, 3, num_users, num_experts)))
    pb = env.drop.problem
    _, best = brute_force_best(pb.score, num_users, num_experts, o.quota)
    p, sched = _train_gdm(cfg, scenario, seed, steps, env, o.epochs)
    tb = gdm.sample_batch(p, env.drop.cond, sched, stream(seed, STREAM_ORACLE, 4), eval_samples)
    got = float(np.mean([pb.score(tb.matching(i)) for i in range(eval_samples)]))
    return got, best


def _check_gap(cfg, num_users, num_experts) -> CheckResult:
    o = cfg.oracle
    passing, ratios = 0, []
    for seed in range(o.num_seeds):
        got, best = oracle_gap(cfg, num_users, num_experts, seed)
        ratios.append(got / best if best > 0 else float("nan"))
        if got >= best - (1.0 - o.min_ratio) * abs(best):
            passing += 1
    return CheckResult(f"gdm_oracle_gap_{num_users}x{num_experts}", passing >= o.min_passing,
                       float(passing),
                       f"{passing}/{o.num_seeds} seeds within {1 - o.min_ratio:.0%} of optimum; "
                       f"ratios {' '.join(f'{r:.3f}' for r in ratios)}")


def oracle_checks(cfg: ExperimentConfig) -> list:
    """Registered checks as (name, thunk) pairs."""
    seed = cfg.run.seeds[0]
    checks = [("max_weight_matches_brute_force", lambda: _check_max_weight(cfg, seed)),
              ("deferred_acceptance_stable", lambda: _check_da(cfg, seed))]
    for u, e in cfg.oracle.shapes():
        checks.append((f"gdm_oracle_gap_{u}x{e}", lambda u=u, e=e: _check_gap(cfg, u, e)))
    return checks


def run_oracle_suite(cfg: ExperimentConfig, out=None, include_training: bool = True) -> RunResult:
    """Cross-check classical solvers and the trained matcher against brute force.

    Writes ``oracle_report.csv`` with one row per registered check. A check
    that raises is reported as failed and counted as an error.
    """
    out = output_dir(cfg, out)
    result = RunResult()
    write_manifest(out, cfg, cfg.run.seeds[:1], "oracle")
    path = out / "oracle_report.csv"
    result.paths.append(path)
    with RecordWriter(path, ("check", "passed", "value", "detail")) as w:
        for name, thunk in oracle_checks(cfg):
            if not include_training and name.startswith("gdm_"):
                continue
            try:
                res = thunk()
            except DiffmatchError as exc:
                res = CheckResult(name, False, float("nan"), f"error: {exc}")
                result.errors.append(f"{name}: {exc}")
            w.row(res.name, int(res.passed), res.value, res.detail)
            result.checks.append(res)
    return result
