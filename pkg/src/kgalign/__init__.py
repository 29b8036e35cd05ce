"""Unsupervised knowledge-graph entity alignment toolkit.

Pipeline: textual feature assembly -> relation-structure reconstruction ->
contrastively trained graph conv-attention encoder -> consistency-based
alignment ranking with Hits@k / MRR evaluation.
"""

from kgalign.errors import ConfigError, DataError, NumericalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "__version__"]
