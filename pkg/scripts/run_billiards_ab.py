#!/usr/bin/env python3
"""Billiards-mini A/B: long-range backend vs the local baseline.

Writes <out>/bsh/convergence.csv and <out>/local-baseline/convergence.csv,
then prints a short comparison. The baseline's gradient is exactly zero at
the trivial initialization, so its loss history is flat.
"""

import argparse
import sys
from pathlib import Path

from diffcontact.cli import main as cli_main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "billiards_mini.toml"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="billiards_ab")
    ap.add_argument("--config", default=str(CONFIG))
    ap.add_argument("--baseline-iters", type=int, default=5,
                    help="baseline iterations to record (its gradient is 0)")
    args = ap.parse_args()
    out = Path(args.out)
    code = cli_main(["optimize", "--config", args.config, "--out", str(out / "bsh"),
                     "--backend", "bsh"])
    if code:
        return code
    # the baseline cannot move: a few iterations suffice to show the flat curve
    import tomli as toml_r  # noqa: F401  (py3.10)

    base_cfg = Path(args.config).read_text()
    base_cfg = base_cfg.replace("iters = 400", f"iters = {args.baseline_iters}")
    tmp = out / "baseline_config.toml"
    tmp.parent.mkdir(parents=True, exist_ok=True)
    tmp.write_text(base_cfg)
    code = cli_main(["optimize", "--config", str(tmp), "--out",
                     str(out / "local-baseline"), "--backend", "local-baseline"])
    if code:
        return code
    print(f"A/B complete; convergence CSVs under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
