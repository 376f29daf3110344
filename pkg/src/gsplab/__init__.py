"""gsplab: a self-contained graph signal processing and GNN laboratory.

Graph convolutional filters and graph neural networks built from first
principles on an in-house eigensolver, with numerical verification of
permutation equivariance, stability to relative graph perturbations,
graphon transferability, and a recommendation-system experiment suite.
"""

__version__ = "0.1.0"

from . import numerics  # noqa: F401  (establishes the kernel backend early)

__all__ = ["numerics", "__version__"]
