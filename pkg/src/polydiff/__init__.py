"""Near-duplicate document detection on a single machine.

Records are featurized into hashed TF-IDF vectors, blocked with k-means, and
compared pairwise within clusters; the scored pairs feed a similarity graph and
mergeable aggregation summaries.
"""

from .textfeat import SparseVector

__version__ = "0.1.0"
