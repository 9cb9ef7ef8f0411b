#!/usr/bin/env python3
"""
sflab - Sobolev training lab: datasets, training runs, kernel reports and
verification experiments for two-layer ReLU networks
"""

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from rich.console import Console
from rich.table import Table

from . import __version__
from . import config
from .config import derive_seed
from .config_manager import load_config, load_experiment_file, merge_overrides, save_config
from .dataset import TARGET_KINDS, generate, load, save, validate
from .errors import SflabError, StepSizeError
from .gradient_flow import (
    INTEGRATORS,
    FlowConfig,
    decay_certificate,
    drift_monitor,
    escape_monitor,
    run_flow,
    write_trajectory_csv,
)
from .network import init, load_params, save_params
from .ntk_kernel import spectrum_report
from .theory_harness import EXPERIMENTS, ExperimentConfig, Verdict, run_experiment

console = Console(stderr=True)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CLAIM_FAILED = 3


@dataclass
class RunManifest:
    command_line: List[str]
    config_digest: str
    seeds: List[int]
    artifacts: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    runtime_seconds: float = 0.0

    @property
    def digest(self) -> str:
        """sha256 over everything except the runtime"""
        body = asdict(self)
        body.pop("runtime_seconds")
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "digest": self.digest}


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars, dataclasses and non-finite floats for JSON"""
    if is_dataclass(value) and not isinstance(value, type):
        return _jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def canonical_json(value: Any) -> str:
    return json.dumps(_jsonable(value), sort_keys=True, separators=(",", ":"))


def config_digest(settings: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(settings).encode()).hexdigest()


def write_json(path: Path, document: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(_jsonable(document), f, sort_keys=True, indent=2)
        f.write("\n")


def _manifest(argv: List[str], settings: Dict[str, Any], seeds: List[int], artifacts: Dict[str, str]) -> RunManifest:
    return RunManifest(
        command_line=["sflab"] + list(argv),
        config_digest=config_digest(settings),
        seeds=seeds,
        artifacts={k: v for k, v in artifacts.items() if v},
    )


def cmd_generate(args, argv: List[str]) -> int:
    """Write a generated training set"""
    settings = {
        "n": args.n, "d": args.d, "k": args.k, "target": args.target,
        "seed": args.seed, "tilt": args.tilt, "antipodal_pair": args.antipodal_pair,
    }
    manifest = _manifest(argv, settings, [args.seed], {"dataset": args.out, "summary": args.summary})
    started = time.monotonic()

    ts = generate(
        args.n, args.d, args.k, args.target, derive_seed(args.seed, "dataset"),
        tilt=args.tilt, antipodal_pair=args.antipodal_pair,
    )
    report = validate(ts)
    save(ts, Path(args.out), manifest=manifest.digest)
    manifest.runtime_seconds = time.monotonic() - started

    if args.summary:
        write_json(Path(args.summary), {
            "manifest": manifest.to_dict(),
            "config": settings,
            "report": report.to_dict(),
            "records_path": args.out,
        })
    console.print(
        f"[green]Wrote {ts.n} samples to {args.out} "
        f"(delta1={report.delta1:.4g}, delta2={report.delta2:.4g})[/green]"
    )
    return EXIT_OK


def cmd_train(args, argv: List[str]) -> int:
    """Train on a dataset file and log the trajectory"""
    settings = {
        "dataset": args.dataset, "m": args.m, "eta": args.eta, "steps": args.steps,
        "bias": args.bias, "seed": args.seed, "log_every": args.log_every,
        "kernel_log_every": args.kernel_log_every, "integrator": args.integrator,
        "allow_large_step": args.allow_large_step, "mc_samples": args.mc_samples,
        "init_checkpoint": args.init_checkpoint,
    }
    manifest = _manifest(argv, settings, [args.seed], {
        "trajectory": args.out, "summary": args.summary, "checkpoint": args.checkpoint,
    })
    started = time.monotonic()

    ts = load(Path(args.dataset))
    if args.init_checkpoint:
        p0 = load_params(Path(args.init_checkpoint))
    else:
        p0 = init(args.m, ts.d, ts.k, args.bias, derive_seed(args.seed, "init"))

    lambda_star = margin = None
    if args.mc_samples:
        with console.status("[bold]Estimating the limiting kernel spectrum..."):
            report, _ = spectrum_report(ts, args.mc_samples, derive_seed(args.seed, "mc"), bias=p0.has_bias)
        lambda_star, margin = report.lambda_min_estimate, report.std_error
        if lambda_star <= 0:
            console.print("[yellow]Warning: lambda* estimate is not positive; no drift radius[/yellow]")
            lambda_star = None

    flow_cfg = FlowConfig(
        eta=args.eta,
        steps=args.steps,
        log_every=args.log_every,
        kernel_log_every=args.kernel_log_every,
        integrator=args.integrator,
        seed=args.seed,
        allow_large_step=args.allow_large_step,
    )
    with console.status(f"[bold]Training m={p0.m} for {args.steps} steps..."):
        result = run_flow(p0, ts, flow_cfg, lambda_star=lambda_star)

    write_trajectory_csv(result.records, Path(args.out))
    if args.checkpoint:
        save_params(result.params, Path(args.checkpoint), manifest=manifest.digest)
    manifest.runtime_seconds = time.monotonic() - started

    summary: Dict[str, Any] = {
        "manifest": manifest.to_dict(),
        "config": settings,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "records_path": args.out,
        "step_cap": result.step_cap,
        "trace_cap": result.trace_cap,
        "lambda_max_H0": result.lambda_max_H0,
        "lambda_min_H0": result.lambda_min_H0,
        "monotone": result.monotone,
        "flip_jumps": len(result.jumps),
        "jump_r_sq": result.jump_r_sq,
        "lambda_star": lambda_star,
        "eigen_margin": margin,
    }
    if args.kernel_log_every:
        certificate = decay_certificate(result.records, r_sq=result.jump_free_r_sq)
        summary["decay_certificate"] = asdict(certificate)
        summary["decay_certificate_with_jumps"] = asdict(decay_certificate(result.records))
        if lambda_star is not None:
            summary["tau0"] = escape_monitor(result.records, lambda_star)
            summary["drift_within_R"] = drift_monitor(result.records, result.records[0].R_bound)
    if args.summary:
        write_json(Path(args.summary), summary)

    console.print(
        f"[green]Loss {result.initial_loss:.4g} -> {result.final_loss:.4g}; "
        f"{len(result.records)} records written to {args.out}[/green]"
    )
    return EXIT_OK


def cmd_kernel(args, argv: List[str]) -> int:
    """Estimate lambda_min of H-infinity and compare it with the applicable bound"""
    settings = {"dataset": args.dataset, "mc_samples": args.mc_samples, "seed": args.seed, "bias": args.bias}
    manifest = _manifest(argv, settings, [args.seed], {"report": args.out})
    started = time.monotonic()

    ts = load(Path(args.dataset))
    with console.status(f"[bold]Sampling {args.mc_samples} Gaussian weights..."):
        report, _ = spectrum_report(ts, args.mc_samples, derive_seed(args.seed, "mc"), bias=args.bias)
    manifest.runtime_seconds = time.monotonic() - started

    write_json(Path(args.out), {"manifest": manifest.to_dict(), "config": settings, "report": report.to_dict()})
    colour = "green" if report.bound_satisfied else "yellow"
    console.print(
        f"[{colour}]lambda_min = {report.lambda_min_estimate:.6g} +- {report.std_error:.2g}; "
        f"bound satisfied: {report.bound_satisfied}[/{colour}]"
    )
    return EXIT_OK


def render_verdict(verdict: Verdict) -> Table:
    table = Table(title=f"Verdict: {verdict.experiment}")
    table.add_column("Claim")
    table.add_column("Policy")
    table.add_column("Required")
    table.add_column("Result")
    for claim in verdict.claims:
        result = "[green]pass[/green]" if claim.passed else ("[red]FAIL[/red]" if claim.required else "[yellow]fail[/yellow]")
        table.add_row(claim.name, claim.margin_policy, "yes" if claim.required else "no", result)
    return table


def cmd_verify(args, argv: List[str]) -> int:
    """Run a verification experiment and write its verdict"""
    file_settings = load_experiment_file(Path(args.config)) if args.config else {}
    overrides = {
        "n": args.n, "d": args.d, "k": args.k, "m": args.m, "eta": args.eta, "steps": args.steps,
        "delta": args.delta, "mc_samples": args.mc_samples, "seeds": args.seeds,
    }
    cfg = ExperimentConfig.from_mapping(args.experiment, merge_overrides(file_settings, overrides))
    settings = cfg.to_dict()
    settings.pop("workers")
    manifest = _manifest(argv, settings, list(cfg.seeds), {"verdict": args.out})
    started = time.monotonic()

    with console.status(f"[bold]Running {cfg.which} over {len(cfg.seeds)} seed(s)..."):
        verdict = run_experiment(cfg)
    manifest.runtime_seconds = time.monotonic() - started

    write_json(Path(args.out), {"manifest": manifest.to_dict(), "config": settings, "verdicts": [verdict.to_dict()]})
    console.print(render_verdict(verdict))
    if not verdict.passed:
        console.print(f"[red]{len(verdict.failed_claims)} required claim(s) failed[/red]")
        return EXIT_CLAIM_FAILED
    console.print(f"[green]All required claims passed; verdict written to {args.out}[/green]")
    return EXIT_OK


def cmd_config(args, argv: List[str]) -> int:
    """Update the user defaults file"""
    settings = load_config()
    if args.default_threads is not None:
        settings["threads"] = args.default_threads
    if args.default_mc_samples is not None:
        settings["mc_samples"] = args.default_mc_samples
    if not save_config(settings):
        return EXIT_RUNTIME
    config.reload_defaults()
    console.print(f"[green]Defaults saved: {settings}[/green]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sflab", description="sflab - Sobolev training lab")
    parser.add_argument('--threads', type=int, help='Worker threads for Monte-Carlo and seed sweeps')
    parser.add_argument('--version', action='version', version=f"sflab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="Generate a training set")
    gen.add_argument('--n', type=int, required=True)
    gen.add_argument('--d', type=int, required=True)
    gen.add_argument('--k', type=int, required=True)
    gen.add_argument('--target', choices=TARGET_KINDS, required=True)
    gen.add_argument('--seed', type=int, required=True)
    gen.add_argument('--tilt', type=float, default=0.0, help='|v^T x| for every direction (default 0)')
    gen.add_argument('--antipodal-pair', action='store_true', help='Make the last point the negative of the first')
    gen.add_argument('--out', required=True)
    gen.add_argument('--summary', help='Optional JSON summary path')
    gen.set_defaults(handler=cmd_generate)

    train = sub.add_parser("train", help="Train with the discretized gradient flow")
    train.add_argument('--dataset', required=True)
    train.add_argument('--m', type=int, default=4096)
    train.add_argument('--eta', type=float, required=True)
    train.add_argument('--steps', type=int, required=True)
    train.add_argument('--bias', action='store_true')
    train.add_argument('--seed', type=int, default=0)
    train.add_argument('--log-every', type=int, default=1)
    train.add_argument('--kernel-log-every', type=int, default=config.DEFAULT_KERNEL_LOG_EVERY)
    train.add_argument('--integrator', choices=INTEGRATORS, default="euler")
    train.add_argument('--allow-large-step', action='store_true', help='Warn instead of failing above the step cap')
    train.add_argument('--mc-samples', type=int, default=None,
                       help='Monte-Carlo samples for lambda* (0 to skip; default from user config)')
    train.add_argument('--init-checkpoint', help='Start from saved parameters instead of a fresh init')
    train.add_argument('--checkpoint', help='Write the final parameters here')
    train.add_argument('--out', required=True)
    train.add_argument('--summary')
    train.set_defaults(handler=cmd_train)

    kernel = sub.add_parser("kernel", help="Estimate the spectrum of the limiting kernel")
    kernel.add_argument('--dataset', required=True)
    kernel.add_argument('--mc-samples', type=int, default=None)
    kernel.add_argument('--seed', type=int, default=0)
    kernel.add_argument('--bias', action='store_true')
    kernel.add_argument('--out', required=True)
    kernel.set_defaults(handler=cmd_kernel)

    verify = sub.add_parser("verify", help="Run a verification experiment")
    verify.add_argument('--experiment', choices=EXPERIMENTS, required=True)
    verify.add_argument('--config', help='YAML or JSON experiment config')
    verify.add_argument('--out', required=True)
    verify.add_argument('--n', type=int)
    verify.add_argument('--d', type=int)
    verify.add_argument('--k', type=int)
    verify.add_argument('--m', type=int)
    verify.add_argument('--eta', type=float)
    verify.add_argument('--steps', type=int)
    verify.add_argument('--delta', type=float)
    verify.add_argument('--mc-samples', type=int)
    verify.add_argument('--seeds', type=int, nargs='+')
    verify.set_defaults(handler=cmd_verify)

    conf = sub.add_parser("config", help="Save user defaults")
    conf.add_argument('--threads', type=int, dest='default_threads')
    conf.add_argument('--mc-samples', type=int, dest='default_mc_samples')
    conf.set_defaults(handler=cmd_config)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI workflow"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    if args.threads is not None:
        if args.threads < 1:
            console.print("[red]Error: --threads must be >= 1[/red]")
            return EXIT_USAGE
        config.THREADS = args.threads
    if getattr(args, "mc_samples", 0) is None and args.command in ("train", "kernel"):
        args.mc_samples = config.MC_DEFAULT_SAMPLES

    try:
        return args.handler(args, argv)
    except StepSizeError as e:
        console.print(f"[red]Error: {e}[/red]")
        return EXIT_USAGE
    except (SflabError, OSError) as e:
        console.print(f"[red]Error: {e}[/red]")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
