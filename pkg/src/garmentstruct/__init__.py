"""Refinement and evaluation of structured garment predictions.

A prediction is a set of 3D surface patches and boundary curves with validity
probabilities, a patch/curve adjacency matrix and per-patch 2D panels made of
edges. ``refine`` turns a raw prediction into closed, ordered panel loops;
``evaluate`` scores a structure against ground truth.
"""

from .geometry import GeometryParams, refine, refine_geometry
from .metrics import MetricConfig, MetricReport, aggregate, evaluate, evaluate_corpus
from .model import (
    Curve3D,
    Edge2D,
    GarmentStructure,
    LoopOrder,
    Panel,
    Patch3D,
    Stage,
    ValidationError,
    load,
    save,
)
from .synth import CorruptionSpec, Template, TemplateSpec, corrupt, generate, make_corpus
from .topology import ABLATION_SCHEDULE, RefinementRules, TopologyThresholds, refine_topology

__version__ = "0.1.0"
