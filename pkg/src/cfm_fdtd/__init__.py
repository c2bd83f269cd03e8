"""TM_z Maxwell FDTD with embedded PEC boundaries via local correction functions."""
from .geometry import Circle, Orientation, Polygon, Region, annulus, square, star
from .grid import FieldState, StaggeredGrid
from .harness import (ConvergenceTable, ErrorReport, compare_to_reference, convergence_study,
                      long_run_monitor, run, scattering_study)
from .schemes import SchemeConfig, Solver, multistep_coefficients
from .solutions import (ProblemSpec, bessel, bessel_root, circular_cavity, concentric_cylinders,
                        get_problem, manufactured, pulsed_wave_scattering, square_cavity)

__version__ = "0.1.0"
