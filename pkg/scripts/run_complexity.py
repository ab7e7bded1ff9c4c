#!/usr/bin/env python3
"""Uniform-grid interaction-count experiment; writes scaling.csv."""

import argparse

from diffcontact.cli import _atomic_write_csv
from diffcontact.oracles import uniform_grid_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="scaling.csv")
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    args = ap.parse_args()
    rows = uniform_grid_experiment(args.sizes)
    _atomic_write_csv(args.out, ["N", "exact_terms", "centered_terms"], rows)
    for n, ex, ce in rows:
        print(f"N={n:3d}: exact {ex:6d} centered {ce:6d} total {ex + ce}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
