"""Gravity-aided rotation averaging.

Cameras whose gravity direction is known keep a single unknown angle about
their vertical axis; the angles are recovered by robust circular regression.
"""

from .circular import SolverConfig, SolverError, SolveReport, solve
from .evaluation import EvalReport, align, auc, evaluate
from .mixed import MixedReport, solve_mixed
from .pose_graph import Edge, GraphFormatError, PoseGraph, Vertex, read_graph, write_graph
from .synth import SynthConfig, generate

__version__ = "0.1.0"
