"""dp-adaptive multiresolution topology optimization on structured quadrilateral meshes."""
from .adaptivity import AdaptivityConfig, run_adaptive_cycle
from .analysis import AnalysisModel, BoundaryConditions, MaterialModel, assemble_and_solve, objective
from .basis import composite_rule, gauss_rule, select_rule
from .design import BackgroundGrid, Projection, project_p1, project_p2
from .driver import RunConfig, RunReport, reference_accuracy, run
from .errors import (
    ConfigurationError,
    DpmtoError,
    InfeasibleError,
    NumericalFailure,
    ProjectionError,
    StateError,
)
from .mesh import MtoMesh, build_mesh
from .problems import ProblemSpec

__version__ = "0.1.0"
