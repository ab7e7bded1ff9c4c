"""Figure builders for the simulator's CSV outputs.

Read-only consumers: every figure is regenerated from CSV files alone.
Each builder validates the header against the documented format and
raises ValueError naming the first missing column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIGURE_KINDS = ("convergence", "scaling", "ipc-kink", "trajectory-trace")


@dataclass
class PlotJob:
    inputs: list
    kind: str
    output: Path
    labels: list | None = None

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r} (use {FIGURE_KINDS})")
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)


def read_csv_columns(path, required):
    """Load a CSV, insisting that every required column is present and the
    file has at least one data row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file")
        for col in required:
            if col not in header:
                raise ValueError(f"{path}: missing required column '{col}'")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in header}
    table = {}
    for col in header:
        values = [r[idx[col]] for r in rows]
        try:
            table[col] = np.array([float(v) for v in values])
        except ValueError:
            table[col] = np.array(values)
    return table


def convergence_figure(csv_paths, labels=None):
    """Loss histories, one line per run, log-scale loss axis."""
    if not csv_paths:
        raise ValueError("need at least one convergence CSV")
    if labels is None:
        labels = [Path(p).parent.name or Path(p).stem for p in csv_paths]
    if len(labels) != len(csv_paths):
        raise ValueError("one label per CSV required")
    fig, ax = plt.subplots(figsize=(6, 4))
    for path, label in zip(csv_paths, labels):
        data = read_csv_columns(path, ["iter", "loss"])
        ax.plot(data["iter"], data["loss"], label=label, linewidth=1.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig


def scaling_figure(csv_path):
    """Interaction terms vs triangle count on log-log axes with a slope-1
    reference line."""
    data = read_csv_columns(csv_path, ["N", "exact_terms", "centered_terms"])
    triangles = 2.0 * data["N"] ** 2
    total = data["exact_terms"] + data["centered_terms"]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.loglog(triangles, total, "o-", label="interaction terms")
    ref = total[0] * triangles / triangles[0]
    ax.loglog(triangles, ref, "--", color="gray", label="slope 1 reference")
    ax.set_xlabel("triangles per body (2 N^2)")
    ax.set_ylabel("terms per evaluation")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return fig


def ipc_kink_figure(csv_path):
    """The d'(x) curve whose kinks break twice-differentiability of
    distance-based potentials."""
    data = read_csv_columns(csv_path, ["x", "d", "d_prime"])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].plot(data["x"], data["d"])
    axes[0].set_xlabel("x")
    axes[0].set_ylabel("distance d(x)")
    axes[1].plot(data["x"], data["d_prime"])
    axes[1].set_xlabel("x")
    axes[1].set_ylabel("d'(x)")
    for ax in axes:
        for seam in (1.0, 2.0):
            ax.axvline(seam, color="gray", linestyle=":", alpha=0.6)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def trajectory_trace_figure(csv_path):
    """Top-down traces of every body's translation over a trajectory CSV."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ValueError(f"{csv_path}: empty file")
    bodies = [c[: -len("_tx")] for c in header if c.endswith("_tx")]
    if not bodies:
        raise ValueError(f"{csv_path}: missing required column '<body>_tx'")
    required = ["frame"] + [f"{b}_{c}" for b in bodies for c in ("tx", "ty")]
    data = read_csv_columns(csv_path, required)
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for body in bodies:
        xs, ys = data[f"{body}_tx"], data[f"{body}_ty"]
        ax.plot(xs, ys, label=body)
        ax.plot(xs[-1], ys[-1], "o", markersize=4, color=ax.lines[-1].get_color())
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def render(job: PlotJob) -> Path:
    if job.kind == "convergence":
        fig = convergence_figure(job.inputs, job.labels)
    elif job.kind == "scaling":
        fig = scaling_figure(job.inputs[0])
    elif job.kind == "ipc-kink":
        fig = ipc_kink_figure(job.inputs[0])
    else:
        fig = trajectory_trace_figure(job.inputs[0])
    job.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(job.output, dpi=150)
    plt.close(fig)
    return job.output
