"""Command-line entry point: ``tpifilter {solve-gare,train,compare,simulate}``.

Exit codes: 0 success, 1 validation error (bad arguments or configuration),
2 numerical failure (Riccati breakdown, training divergence, unstable gain).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, tpi
from .approx import load_checkpoint, save_checkpoint
from .config import default_config_path, load_config
from .errors import ConfigError, NumericalError, ValidationError
from .plant import NoiseDistribution

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
RESIDUAL_LIMIT = 1e-9


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _fmt(mat) -> str:
    return np.array2string(np.asarray(mat), precision=10, suppress_small=False)


def cmd_solve_gare(args, cfg) -> int:
    weights = cfg.weights_for("quadratic")
    try:
        rep = bench.gare_report(cfg.plant, weights, kalman=cfg.kalman)
    except NumericalError as exc:
        if not cfg.kalman:
            raise NumericalError(f"{exc}; gamma={weights.gamma} may be below the achievable attenuation level") from exc
        raise
    # human-readable summary on stderr keeps stdout a clean CSV
    print(f"P =\n{_fmt(rep['P'])}\nK =\n{_fmt(rep['K'])}\nresidual = {rep['residual']:.3e}", file=sys.stderr)
    _emit(bench.gare_to_csv(rep), args.out)
    if not rep["residual"] <= RESIDUAL_LIMIT * (1.0 + np.linalg.norm(weights.Q)):
        print("residual above tolerance", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _checkpoint_path(args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    return Path(args.out).with_suffix(".ckpt.json") if args.out else Path("tpifilter.ckpt.json")


def cmd_train(args, cfg) -> int:
    mode = args.mode or "quadratic"
    tcfg = cfg.tpi_config(mode, seed=args.seed, iterations=args.iterations)
    weights = cfg.weights_for(mode)
    reference = tpi.reference_weights(cfg.plant, cfg.weights_for("quadratic")) if mode == "quadratic" else None
    status = EXIT_OK
    try:
        nets, records = tpi.train(tcfg, cfg.plant, weights, reference=reference)
    except tpi.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        nets, records, status = exc.nets, exc.records, EXIT_NUMERICAL
    _emit(tpi.records_to_csv(records), args.out)
    meta = {"mode": mode, "seed": tcfg.seed, "iterations": len(records), "diverged": status != EXIT_OK}
    save_checkpoint(_checkpoint_path(args), {"value": nets.value, "gain": nets.gain, "noise": nets.noise}, meta)
    if records and records[-1].e_omega is not None:
        print(f"final e_omega={records[-1].e_omega:.3e} e_theta={records[-1].e_theta:.3e}", file=sys.stderr)
    return status


def _reinforcement_gain(args):
    if not args.checkpoint:
        return None
    try:
        nets, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    if "gain" not in nets:
        raise ConfigError(f"checkpoint {args.checkpoint} has no 'gain' network")
    return nets["gain"].theta


def _bounds(cfg):
    if cfg.bounds is None:
        raise ConfigError("missing section 'noise'")
    return cfg.bounds


def cmd_compare(args, cfg) -> int:
    mode = args.mode or "quadratic"
    settings = cfg.compare
    trials = settings.trials if args.trials is None else args.trials
    if trials < 1:
        raise ConfigError("--trials must be positive")
    reports = bench.compare(
        cfg.plant, cfg.weights_for(mode), _bounds(cfg), settings.distributions,
        trials=trials, duration=settings.duration, rate=settings.rate, seed=args.seed or 0,
        reinforcement_gain=_reinforcement_gain(args), hinf_weights=cfg.weights_for("quadratic"),
    )
    _emit(bench.summary_to_csv(bench.summarize(reports), cfg.plant.n), args.out)
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    settings = cfg.compare
    dist = NoiseDistribution.parse(args.dist) if args.dist else settings.distributions[0]
    bounds = _bounds(cfg)
    gains = {}
    K_rl = _reinforcement_gain(args)
    if K_rl is not None:
        gains["reinforcement"] = K_rl
    gains["hinf"] = bench.gare_report(cfg.plant, cfg.weights_for("quadratic"))["K"]
    gains["kalman"] = bench.kalman_gain_from_bounds(cfg.plant, bounds, dist, dist, 1.0 / settings.rate)
    text = bench.simulate(cfg.plant, gains, bounds, dist, duration=settings.duration,
                          rate=settings.rate, seed=args.seed or 0)
    _emit(text, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration (default: packaged defaults)")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", help="output CSV path (default: stdout)")
    common.add_argument("--mode", choices=("quadratic", "bounded"), default=None)

    parser = _Parser(prog="tpifilter", description="H-infinity filtering with bounded noise via ternary policy iteration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("solve-gare", parents=[common], help="solve the game Riccati equation")

    p = sub.add_parser("train", parents=[common], help="run policy iteration training")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--checkpoint", help="checkpoint output path (default: next to --out)")

    p = sub.add_parser("compare", parents=[common], help="Monte-Carlo filter comparison")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--checkpoint", help="trained checkpoint providing the reinforcement gain")

    p = sub.add_parser("simulate", parents=[common], help="dump one trajectory")
    p.add_argument("--checkpoint", help="trained checkpoint providing the reinforcement gain")
    p.add_argument("--dist", help="noise distribution label, e.g. 'Beta(4,2)'")
    return parser


COMMANDS = {"solve-gare": cmd_solve_gare, "train": cmd_train, "compare": cmd_compare, "simulate": cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config or default_config_path())
        if getattr(args, "iterations", None) is not None and args.iterations < 0:
            raise ConfigError("--iterations must be nonnegative")
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
