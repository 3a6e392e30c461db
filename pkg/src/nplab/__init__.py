"""Probability-free market laboratory: pathwise integration, trajectory
stopping times, trajectory metrics and empirical no-arbitrage harnesses."""

from .trajectory_core import (
    PartitionSequence,
    QVCurve,
    Trajectory,
    jumps,
    left_limit,
    make_trajectory,
    quadratic_variation,
)

__all__ = [
    "PartitionSequence",
    "QVCurve",
    "Trajectory",
    "jumps",
    "left_limit",
    "make_trajectory",
    "quadratic_variation",
]
