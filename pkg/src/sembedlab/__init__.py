"""Tools for s-embeddings of planar quad-graphs, the associated discrete
complex analysis, FK-Ising interfaces with Dobrushin boundary conditions,
and the continuum Laplace-Beltrami problems they converge to."""

from . import discrete_ops, fkmodel, quadgraph, sembedding

__version__ = "0.1.0"

__all__ = ["quadgraph", "sembedding", "discrete_ops", "fkmodel", "__version__"]
