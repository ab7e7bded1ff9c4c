"""Offline figure rendering for the contact simulator's CSV outputs."""

from .figures import (
    FIGURE_KINDS,
    PlotJob,
    convergence_figure,
    ipc_kink_figure,
    read_csv_columns,
    render,
    scaling_figure,
    trajectory_trace_figure,
)

__version__ = "0.1.0"

__all__ = [
    "FIGURE_KINDS",
    "PlotJob",
    "convergence_figure",
    "ipc_kink_figure",
    "read_csv_columns",
    "render",
    "scaling_figure",
    "trajectory_trace_figure",
    "__version__",
]
