"""Command-line runner: one protocol per invocation, CSV series plus a JSON summary.

Exit codes: 0 success, 2 usage, 3 config, 4 runtime. Every failure writes
exactly one line ``arrowsim: error[<stage>]: <message>`` to stderr as its
last line (usage failures print the usage text before it).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, SimConfig, load_config
from .io import emit_series, headline, relative_name, write_summary
from .perturbation import CouplingSpec, PerturbationSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

PROG = "arrowsim"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _fail(stage: str, message: str, code: int) -> int:
    print(f"{PROG}: error[{stage}]: {_one_line(message)}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, metavar="INT", help="override the config seed")
    common.add_argument("--out", required=True, metavar="DIR", help="output directory (created if missing)")

    parser = _Parser(prog=PROG, description="Reversible gas experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    sub.add_parser("expand", parents=[common], help="free expansion from the initial region")

    p = sub.add_parser("loschmidt", parents=[common], help="evolve, reverse velocities, evolve back")
    p.add_argument("--reversal-step", type=int, metavar="INT", help="default: config steps")
    p.add_argument("--epsilon", type=float, default=0.0, help="kick magnitude (default 0)")
    p.add_argument("--kick-step", type=int, metavar="INT", help="default: the reversal step")

    p = sub.add_parser("sync", parents=[common], help="expanding vessel A coupled to shrinking vessel B")
    p.add_argument("--config-b", metavar="PATH", help="config of vessel B (default: --config)")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0, help="spring strength (default 0)")
    p.add_argument("--prep-steps", type=int, required=True, metavar="INT",
                   help="steps B is evolved before its velocities are reversed")
    p.add_argument("--window", type=int, default=ex.SMOOTHING_WINDOW, metavar="SAMPLES",
                   help="moving-average width for the slope (default %(default)s)")
    p.add_argument("--persistence", type=int, default=ex.PERSISTENCE, metavar="SAMPLES",
                   help="consecutive rising slopes that mark synchronization (default %(default)s)")

    p = sub.add_parser("recurrence", parents=[common], help="search for a Poincare return (N <= 3)")
    p.add_argument("--max-steps", type=int, metavar="INT", help="default: config steps")
    p.add_argument("--radius", type=float, default=ex.RECURRENCE_RADIUS,
                   help="normalized phase-space distance (default %(default)s)")

    p = sub.add_parser("fit", parents=[common], help="twin-run divergence and growth-law fit")
    p.add_argument("--epsilon", type=float, default=1e-6, help="kick magnitude (default 1e-6)")
    p.add_argument("--kick-step", type=int, default=0, metavar="INT", help="step of the kick (default 0)")
    p.add_argument("--threshold", type=float, default=1e-2,
                   help="fit window ends where filtered divergence first reaches this")
    return parser


def _check_args(args) -> None:
    for name in ("reversal_step", "kick_step", "prep_steps", "max_steps"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 0")
    for name in ("epsilon", "lam"):
        v = getattr(args, name, None)
        if v is not None and not v >= 0:
            raise UsageError(f"--{'lambda' if name == 'lam' else name} must be >= 0")
    for name in ("window", "persistence"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name} must be >= 1")


def _load(path, seed) -> SimConfig:
    try:
        config = load_config(path)
    except OSError as exc:
        raise ConfigError([(str(path), f"cannot read: {exc.strerror or exc}")]) from None
    except UnicodeDecodeError:
        raise ConfigError([(str(path), "not valid UTF-8")]) from None
    return config if seed is None else config.with_(seed=seed)


def _summary(series: ex.ExperimentSeries, config: SimConfig, files: dict) -> dict:
    meta = dict(series.metadata)
    return {
        "protocol": meta.pop("protocol"),
        "config_digest": meta.pop("config_digest"),
        "seed": meta.pop("seed"),
        "headline": headline(series),
        "metadata": meta,
        "series": files,
        "config": config.to_document(),
    }


def _emit(out: Path, series: ex.ExperimentSeries, name: str) -> str:
    path = out / name
    emit_series(series, path)
    return relative_name(path, out)


def _run_expand(args, config, out):
    series = ex.run_free_expansion(config)
    return _summary(series, config, {"series": _emit(out, series, "series.csv")})


def _run_loschmidt(args, config, out):
    rev = config.steps if args.reversal_step is None else args.reversal_step
    kick = rev if args.kick_step is None else args.kick_step
    series = ex.run_loschmidt(config, rev, PerturbationSpec(args.epsilon, kick, seed=config.seed))
    return _summary(series, config, {"series": _emit(out, series, "series.csv")})


def _run_sync(args, config, out):
    config_b = config if args.config_b is None else _load(args.config_b, args.seed)
    sa, sb, sync = ex.run_two_vessel_sync(config, config_b, args.prep_steps, CouplingSpec(args.lam),
                                          window=args.window, persistence=args.persistence)
    files = {"series_a": _emit(out, sa, "series_a.csv"), "series_b": _emit(out, sb, "series_b.csv")}
    summary = _summary(sb, config_b, files)
    summary["seed"] = sb.metadata["seed_a"], sb.metadata["seed_b"]
    summary["config_digest_a"] = sa.metadata["config_digest"]
    summary["config_a"] = config.to_document()
    summary["headline"] = {"sync_step": sync, "vessel_a": headline(sa), "vessel_b": headline(sb)}
    return summary


def _run_recurrence(args, config, out):
    max_steps = config.steps if args.max_steps is None else args.max_steps
    series, step = ex.run_recurrence(config, max_steps, radius=args.radius)
    summary = _summary(series, config, {"series": _emit(out, series, "series.csv")})
    summary["headline"]["recurrence_step"] = step
    return summary


def _run_fit(args, config, out):
    series = ex.run_twin_divergence(config, PerturbationSpec(args.epsilon, args.kick_step, seed=config.seed))
    window = ex.growth_window(series, args.kick_step, args.threshold)
    fit = ex.fit_divergence_growth(series, window)
    summary = _summary(series, config, {"series": _emit(out, series, "series.csv")})
    summary["headline"].update(growth_model=fit.model, growth_rate=fit.rate, r2_linear=fit.r2_linear,
                               r2_exponential=fit.r2_exponential, fit_window=list(window))
    return summary


RUNNERS = {
    "expand": _run_expand,
    "loschmidt": _run_loschmidt,
    "sync": _run_sync,
    "recurrence": _run_recurrence,
    "fit": _run_fit,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(sys.argv[1:] if argv is None else argv)
        _check_args(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except SystemExit as exc:
        # --help exits 0 through argparse
        return int(exc.code or 0)

    try:
        config = _load(args.config, args.seed)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = RUNNERS[args.command](args, config, out)
        write_summary(summary, out / "summary.json")
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (ex.ProtocolError, ArithmeticError, ValueError, OSError) as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
