"""Monte-Carlo laboratory for class-(Sigma) submartingales and their sigma-finite measure."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .core import MCEstimate, Path, RngSpec, TestResult, TimeGrid, equality_test, make_grid, mc_estimate

__all__ = [
    "MCEstimate",
    "Path",
    "RngSpec",
    "TestResult",
    "TimeGrid",
    "equality_test",
    "make_grid",
    "mc_estimate",
]
