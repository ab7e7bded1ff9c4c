"""CSV-in / image-out command line front end.

    contactplots convergence runA/convergence.csv runB/convergence.csv \
        --labels ours baseline --out convergence.png
    contactplots scaling scaling.csv --out scaling.png
    contactplots ipc-kink ipc_demo.csv --out kink.png
    contactplots trajectory-trace trajectory.csv --out trace.png
"""

import argparse
import sys

from .figures import FIGURE_KINDS, PlotJob, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="contactplots", description=__doc__)
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("csvs", nargs="+", help="input CSV file(s)")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--labels", nargs="*", default=None,
                        help="legend labels (convergence only)")
    args = parser.parse_args(argv)
    try:
        out = render(PlotJob(args.csvs, args.kind, args.out, labels=args.labels))
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
