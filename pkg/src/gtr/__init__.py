"""General tension-reduction measurement model: membranes, collapses and diagnostics."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .simplex import (  # noqa: E402
    Simplex,
    band,
    barycentric_of,
    make_regular_simplex,
    project_onto,
    region_of,
    subregion_measures,
)
from .membranes import (  # noqa: E402
    density_atomic,
    density_cellular,
    density_epsilon,
    density_piecewise,
    density_uniform,
)
from .engine import Agent, Measurement, run_measurement, sequential_probability  # noqa: E402

__all__ = [
    "Agent",
    "Measurement",
    "Simplex",
    "band",
    "barycentric_of",
    "density_atomic",
    "density_cellular",
    "density_epsilon",
    "density_piecewise",
    "density_uniform",
    "make_regular_simplex",
    "project_onto",
    "region_of",
    "run_measurement",
    "sequential_probability",
    "subregion_measures",
]
