"""Morphology-structured heterogeneous GNN for legged-robot contact perception.

Subpackages: ``morphology`` (URDF -> typed graph), ``numcore`` (autodiff
tensors), ``hgnn`` (the graph network), ``training`` (losses, Adam, MLP
baseline, train loop), ``dynamics`` (rigid-body chain algorithms and the
per-leg force estimator), ``data`` (synthetic quadruped datasets, windows,
per-node regrouping), ``evalcli`` (metrics and the command line).
"""

__version__ = "0.1.0"
