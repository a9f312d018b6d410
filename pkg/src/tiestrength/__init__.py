"""Bow-tie decomposition of social ties and tie-strength prediction."""

import warnings

# numba falls back to its own thread pool when the system TBB is too old; the notice is noise
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .bowtie import FEATURE_COLUMNS, BowTie, FeatureTable, FeatureVector, extract_bowtie, feature_table
from .graph import AttributeTable, WeightedGraph, build_graph, union_multiplex
from .strength import TieStrengthTarget

__version__ = "0.1.0"

__all__ = [
    "AttributeTable", "BowTie", "FEATURE_COLUMNS", "FeatureTable", "FeatureVector", "TieStrengthTarget",
    "WeightedGraph", "build_graph", "extract_bowtie", "feature_table", "union_multiplex",
]
