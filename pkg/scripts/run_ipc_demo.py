#!/usr/bin/env python3
"""Kinked-derivative demo CSV (same as `diffcontact verify ipc-demo`)."""

import argparse
import sys

from diffcontact.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="ipc_demo.csv")
    args = ap.parse_args()
    return cli_main(["verify", "ipc-demo", "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
