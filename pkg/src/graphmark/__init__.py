"""Certified backdoor-based watermarking for federated graph classifiers.

The library trains an ensemble of independent GNN submodels across simulated
federated clients, learns per-client graph watermarks, computes provable
robustness certificates against layer-replacement attacks, and evaluates
empirical watermark-removal attacks.
"""

from graphmark.graphdata import Dataset, Graph, parse_tudataset, partition_clients, stratified_split
from graphmark.tensorcore import ParameterSet, Tensor

__all__ = [
    "Dataset",
    "Graph",
    "ParameterSet",
    "Tensor",
    "parse_tudataset",
    "partition_clients",
    "stratified_split",
]

__version__ = "0.1.0"
