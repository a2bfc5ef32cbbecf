#!/usr/bin/env python3
"""Run the complete verification battery into one results directory.

Produces, under --out (default results/):
  selfcheck/   module invariant suite
  lln/         deviation rate of the noisy state from the closed loop
  clt_r2/      fluctuation limit rate with delta = 0.5 epsilon
  clt_r1/      fluctuation limit rate with delta = epsilon^2
  mterms/      held-gap decomposition diagnostics (regime 2)
  simulate/    one coupled path bundle for plotting

Exit code 0 only if every verdict passes.
"""

import argparse
import sys
from pathlib import Path

from jumpflux.cli import run_subcommand
from jumpflux.config import build_config, default_config_dict

R1_LADDER = [0.3, 0.2, 0.12, 0.08]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--paths", type=int, default=None,
                        help="paths per point (default: config value, 2000)")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()
    out = Path(args.out)

    def config(**regime):
        raw = default_config_dict()
        if regime:
            raw["regime"] = regime
        if args.paths is not None:
            raw["paths_per_point"] = max(2, args.paths)
        if args.seed is not None:
            raw["master_seed"] = args.seed
        return build_config(raw)

    runs = [
        ("selfcheck", config(), {}),
        ("lln", config(), {}),
        ("clt", config(regime="R2", c=0.5, epsilons=[0.2, 0.1, 0.05, 0.025]), {"label": "clt_r2"}),
        ("clt", config(regime="R1", epsilons=R1_LADDER, p=2.0), {"label": "clt_r1"}),
        ("mterms", config(regime="R2", c=0.5, epsilons=[0.2, 0.1, 0.05, 0.025]), {}),
        ("simulate", config(), {}),
    ]
    all_ok = True
    for command, cfg, extra in runs:
        label = extra.get("label", command)
        manifest = run_subcommand(command, cfg, out_dir=out / label)
        ok = manifest["status"] == "ok" and all(manifest["verdicts"].values())
        all_ok = all_ok and ok
        verdicts = ", ".join(
            f"{k}={'pass' if v else 'FAIL'}" for k, v in sorted(manifest["verdicts"].items())
        ) or manifest["status"]
        print(f"{label:10s} {'ok ' if ok else 'FAIL'} ({manifest['duration_seconds']:.1f}s) {verdicts}")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
