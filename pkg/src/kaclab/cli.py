"""Command line entry point: `kaclab <subcommand> [--config PATH] [--out DIR] [--seed U64] [--workers INT]`.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import ch, ikk
from .entropy import DiffusionCoefficient, EntropyError
from .experiments import ConfigError, ExperimentConfig, run
from .grid import GridError
from .kernel import KernelError
from .noise import NoiseError
from .skeleton import RecoveryError, recover_control_ch, recover_control_ikk
from .stepping import NumericalAbort
from .trajectory import read_trajectory, write_control

log = logging.getLogger("kaclab")

SUBCOMMANDS = {
    "simulate": "simulate",
    "converge": "converge_two_step",
    "entropy": "entropy_report",
    "remainders": "remainder_scaling",
    "ldp-regime": "ldp_regime",
    "gamma-converge": "gamma_converge",
    "noise-check": "noise_checks",
}
CONFIG_ERRORS = (ConfigError, ikk.ParamError, ch.CHParamError, GridError, KernelError, NoiseError, EntropyError)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config; defaults are used when omitted")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kaclab", description="Kac-Kawasaki fluctuation experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, kind in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        _common(p)
        if name == "simulate":
            p.add_argument("--model", choices=("ikk", "ch"))
    p = sub.add_parser("rate", help="recover the minimal control and rate of a stored trajectory")
    p.add_argument("--traj", type=Path, required=True)
    p.add_argument("--model", choices=("ikk", "ch"), required=True)
    p.add_argument("--gamma", type=float, help="Kac scale (required for --model ikk)")
    p.add_argument("--out", type=Path, help="directory for the recovered control")
    return parser


def load_config(args, kind: str) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand (expected {kind!r})")
    else:
        cfg = ExperimentConfig.default(kind)
    over = {}
    if args.out is not None:
        over["out"] = str(args.out)
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "model", None):
        over["model"] = args.model
    return cfg.replace(**over) if over else cfg


def _params_from_header(params: dict, model: str, gamma: float | None, traj):
    """Rebuild solver parameters from a trajectory header, falling back to defaults."""
    dt = float(np.min(np.diff(traj.times))) if len(traj) > 1 else 1e-4
    base = {"N": traj.n_points, "dt": params.get("dt", dt), "T": float(traj.times[-1]) or dt}
    if model == "ch":
        keys = {"a", "D", "kernel_radius", "cubic", "dealias"}
        base.update({k: v for k, v in params.items() if k in keys})
        return ch.CHParams(**base)
    if gamma is None:
        gamma = params.get("gamma")
    if gamma is None:
        raise ConfigError("--gamma is required for --model ikk when the trajectory header has none")
    keys = {"a", "delta", "kernel_radius", "mollifier_radius", "dealias"}
    base.update({k: v for k, v in params.items() if k in keys})
    if isinstance(params.get("coefficient"), dict):
        base["coefficient"] = DiffusionCoefficient(**params["coefficient"])
    return ikk.IKKParams(gamma=gamma, **base)


def cmd_rate(args) -> int:
    try:
        traj = read_trajectory(args.traj)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trajectory {args.traj}: {exc}") from None
    p = _params_from_header(traj.params, args.model, args.gamma, traj)
    if args.model == "ch":
        control, rate = recover_control_ch(traj, p)
    else:
        control, rate = recover_control_ikk(traj, p)
    print(f"rate {rate.value!r}")
    print(f"residual {rate.residual_norm!r}")
    if args.model == "ikk":
        print(f"elliptic_residual {rate.elliptic_residual!r}")
    if args.out is not None:
        path = Path(args.out) / (args.traj.stem + ".control")
        write_control(path, control)
        print(f"control {path}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rate":
            return cmd_rate(args)
        cfg = load_config(args, SUBCOMMANDS[args.command])
        _, path = run(cfg, workers=max(1, args.workers))
        print(path)
        return 0
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except RecoveryError as exc:
        print(f"recovery failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
