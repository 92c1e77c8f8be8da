"""Low-rank multi-dictionary selection for 2D (graph x time) sparse coding."""

from .baselines import Omp2dModel, run_omp2d, run_sc_als
from .coder import CoderConfig, EncodingModel, Variant, fit, fit_exact, fit_fast
from .dictio import (Dictionary, Family, build_from_params, build_gft, build_graph_haar,
                     build_ramanujan, build_spline, stack)
from .matio import GraphSpec, ParseError
from .pipeline import PipelineConfig, PipelineTrace, SelectionMode, resume, run_lrmds
from .selection import SelectionState, project, screen, select_top_k

__version__ = "0.1.0"

__all__ = [
    "CoderConfig", "Dictionary", "EncodingModel", "Family", "GraphSpec", "Omp2dModel",
    "ParseError", "PipelineConfig", "PipelineTrace", "SelectionMode", "SelectionState",
    "Variant", "build_from_params", "build_gft", "build_graph_haar", "build_ramanujan",
    "build_spline", "fit", "fit_exact", "fit_fast", "project", "resume", "run_lrmds",
    "run_omp2d", "run_sc_als", "screen", "select_top_k", "stack",
]
