"""Python bindings for the fracdiag C++ core."""

from ._core import (
    FracdiagError,
    Run,
    box_count,
    entropy,
    finite_differences,
    fractal_dimension,
    kernel_edge,
    main,
    open_run,
    propagation_operator,
    report,
    segment_starts,
    segments,
    train_synthetic,
    valid_scales,
)

__all__ = [
    "FracdiagError",
    "Run",
    "box_count",
    "entropy",
    "finite_differences",
    "fractal_dimension",
    "kernel_edge",
    "main",
    "open_run",
    "propagation_operator",
    "report",
    "segment_starts",
    "segments",
    "train_synthetic",
    "valid_scales",
]
