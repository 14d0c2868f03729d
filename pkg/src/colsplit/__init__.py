"""Two-stage column-partition distributed solvers for BP, LASSO and BPDN."""

from .core import (
    Box,
    Bpdn,
    ColumnPartition,
    DecoupledPolyhedron,
    Free,
    FusedL1,
    GeneralPolyhedron,
    GroupL2,
    L1,
    Lasso,
    NonNeg,
    RegBP,
    blocked_matvec,
    make_partition,
)

__all__ = [
    "Box",
    "Bpdn",
    "ColumnPartition",
    "DecoupledPolyhedron",
    "Free",
    "FusedL1",
    "GeneralPolyhedron",
    "GroupL2",
    "L1",
    "Lasso",
    "NonNeg",
    "RegBP",
    "blocked_matvec",
    "make_partition",
]
