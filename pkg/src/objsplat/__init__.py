"""Object-partitioned Gaussian splatting.

Point clouds are segmented into per-object Gaussian sets before
reconstruction; optimization keeps each set tied to its object through masked
per-object losses at three granularities, and querying maps text embeddings
to objects by cosine similarity.
"""

__version__ = "0.1.0"
