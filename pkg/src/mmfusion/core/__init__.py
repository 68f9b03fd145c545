from . import ops
from .gradcheck import GradCheckReport, grad_check, relative_error
from .params import ParameterStore
from .tensor import Graph, ShapeError, Tensor, active_graph, apply, as_tensor, backward

__all__ = [
    "GradCheckReport", "Graph", "ParameterStore", "ShapeError", "Tensor",
    "active_graph", "apply", "as_tensor", "backward", "grad_check", "ops",
    "relative_error",
]
