"""Command line entry point: ``diffmatch {converge,sweep,oracle,sample}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import __version__, gdm
from .config import ExperimentConfig, load_config
from .errors import DiffmatchError
from .experiments import (STREAM_EVAL, build_scenario, output_dir, run_convergence,
                          run_oracle_suite, run_snr_sweep, schedule_for, stream)
from .scorer import load_checkpoint, load_hyper



def _load(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _seeds(args, cfg):
    return (args.seed,) if args.seed is not None else cfg.run.seeds


def cmd_converge(args) -> int:
    cfg = _load(args)
    res = run_convergence(cfg, args.out, _seeds(args, cfg))
    for p in res.paths:
        print(p)
    return 0 if res.ok else 1


def cmd_sweep(args) -> int:
    cfg = _load(args)
    res = run_snr_sweep(cfg, args.out, _seeds(args, cfg))
    for p in res.paths:
        print(p)
    return 0 if res.ok else 1


def cmd_oracle(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = cfg.with_section("run", seeds=(args.seed,))
    res = run_oracle_suite(cfg, args.out, include_training=not args.skip_training)
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return 0 if res.ok else 1


def cmd_sample(args) -> int:
    """Draw one matching from a saved denoiser for a fresh drop."""
    cfg = _load(args)
    seed = args.seed if args.seed is not None else cfg.run.seeds[0]
    p = load_checkpoint(args.checkpoint)
    hyper = load_hyper(args.checkpoint)
    steps = args.steps or int(hyper.get("diffusion_steps", max(cfg.training.diffusion_steps)))
    snr = cfg.sweep.convergence_snr_db if args.snr is None else args.snr
    scenario = build_scenario(cfg, seed, (snr,))
    drop = scenario.drop_at(stream(seed, STREAM_EVAL, 2), snr)
    if p.layer_dims[0] != gdm.denoiser_dims(scenario.num_users, scenario.num_experts,
                                            len(drop.cond))[0]:
        raise DiffmatchError(f"checkpoint input size {p.layer_dims[0]} does not fit the "
                             f"{scenario.num_users}x{scenario.num_experts} scenario")
    m, _ = gdm.sample_matching(p, drop.cond, schedule_for(cfg, steps), stream(seed, STREAM_EVAL, 3))
    br = drop.problem.evaluate(m)
    lines = [f"# seed {seed} snr_db {snr} diffusion_steps {steps}", m.to_text()]
    lines += [f"# {k} = {v!r}" for k, v in br.as_row().items()]
    text = "\n".join(lines) + "\n"
    out = output_dir(cfg, args.out) / f"sample_seed{seed}.txt"
    out.write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diffmatch", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="sectioned key = value config file")
        sp.add_argument("--seed", type=int, help="run a single seed instead of [run] seeds")
        sp.add_argument("--out", type=Path, help="output directory (else $DIFFMATCH_OUT)")
        return sp

    common(sub.add_parser("converge", help="training curves: gdm, dqn, random")).set_defaults(
        fn=cmd_converge)
    common(sub.add_parser("sweep", help="normalized QoE over the SNR grid")).set_defaults(
        fn=cmd_sweep)
    sp = common(sub.add_parser("oracle", help="small-instance checks against brute force"))
    sp.add_argument("--skip-training", action="store_true",
                    help="run only the classical checks")
    sp.set_defaults(fn=cmd_oracle)
    sp = common(sub.add_parser("sample", help="emit one matching from a denoiser checkpoint"))
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--snr", type=float)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(fn=cmd_sample)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except DiffmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
