"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .errors import DmimocalError, InvalidConfigError
from .experiments import default_scenario, load_config, run_scenario, write_outputs

FULL_SCALE_TRIALS = 200
FULL_SCALE_FRAMES = 1000


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dmimocal",
        description="Desk-scale distributed-MIMO phase-calibration experiments")
    p.add_argument("--config", help="TOML config file (defaults apply when omitted)")
    p.add_argument("--scenario", help="cdf_two_ap | se_vs_frame_length | "
                                      "se_vs_pn_level | se_vs_num_aps | custom")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--trials", type=int, help="placement trials per grid point")
    p.add_argument("--out", default="results", help="output directory for CSVs")
    p.add_argument("--full-scale", action="store_true",
                   help="paper-scale counts: 200 trials x 1000 frames")
    p.add_argument("--estimator", choices=("kalman", "direct"),
                   help="restrict to one phase estimator")
    p.add_argument("--beamformer", choices=("conj", "zf", "both"), default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, scenario = load_config(args.config)
        if args.scenario and args.scenario != scenario.name:
            scenario = default_scenario(args.scenario, cfg)
        if args.seed is not None:
            cfg = cfg.with_(master_seed=args.seed)
        if args.trials is not None:
            cfg = cfg.with_(trials=args.trials)
        if args.full_scale:
            cfg = cfg.with_(trials=FULL_SCALE_TRIALS,
                            frames_per_trial=FULL_SCALE_FRAMES)
        if args.estimator:
            scenario = type(scenario)(scenario.name, scenario.sweep,
                                      scenario.baselines, (args.estimator,),
                                      scenario.beamformers)
        if args.beamformer and args.beamformer != "both":
            scenario = type(scenario)(scenario.name, scenario.sweep,
                                      scenario.baselines, scenario.estimators,
                                      (args.beamformer,))
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        table = run_scenario(cfg, scenario, progress=True)
        res, summ = write_outputs(table, args.out, scenario.name)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DmimocalError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {res}")
    print(f"wrote {summ}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
