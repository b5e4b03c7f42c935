"""Command-line entry point.

    dmcvqkd {fig2,fig3,fig4,table1,e2e,calibrate} [--config PATH] [--seed N]
            [--out DIR] [--format {csv,json}] [--set dotted.path=value ...]

Exit status: 0 success, 2 configuration error, 3 reconciliation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import ConfigError, ExperimentConfig, parse_override

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RECONCILIATION = 3

COMMANDS = ("fig2", "fig3", "fig4", "table1", "e2e", "calibrate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmcvqkd", description="Four-phase discrete-modulated CV-QKD simulator")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file; missing fields take defaults")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (default: output.dir from the config)")
    parser.add_argument("--format", choices=("csv", "json"), help="output file format")
    parser.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field")
    parser.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = [parse_override(s) for s in args.set]
        if args.seed is not None:
            overrides.append(("seed", args.seed))
        if args.format is not None:
            overrides.append(("output.format", args.format))
        if args.out is not None:
            overrides.append(("output.dir", args.out))
        cfg = ExperimentConfig.load(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.dump_config:
        print(cfg.canonical_json())
        return EXIT_OK

    out = cfg["output"]["dir"]
    if args.command == "fig2":
        rows = experiments.run_fig2(cfg, out)
        print(f"fig2: {len(rows)} rows written to {out}")
    elif args.command == "fig3":
        res = experiments.run_fig3(cfg, out)
        for f in res.fits:
            print(f"fig3: phi={f['phase_deg']:3d} deg  mean={f['mean']:+.4f}  var={f['variance']:.4f}  n={f['n']}")
        print(f"fig3: KS 90 vs 270 deg p={res.ks_pvalue:.3f}")
    elif args.command == "fig4":
        rows = experiments.run_fig4(cfg, out)
        print(f"fig4: {len(rows)} rows written to {out}")
    elif args.command == "table1":
        rep = experiments.run_table1(cfg, out)
        for key in ("signal_processed_pulses", "sifted_bits", "conclusive_bits", "pse", "qber", "key_per_pulse"):
            print(f"table1: {key} = {rep[key]}")
    elif args.command == "e2e":
        res = experiments.run_e2e(cfg, out)
        r = res.report
        print(
            f"e2e: final key {r['final_key_bits']} bits, keys match: {res.keys_match}, "
            f"blocks {r['blocks_ok']}/{r['blocks']}"
        )
        if res.reconciliation_failed:
            print("e2e: reconciliation failed", file=sys.stderr)
            return EXIT_RECONCILIATION
    elif args.command == "calibrate":
        rep = experiments.run_calibrate(cfg, out)
        print(f"calibrate: clearance = {rep['clearance']:.4f}, r^2 = {rep['r_squared']:.6f}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
