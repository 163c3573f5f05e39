"""
hefuzz

Two-party fuzzy name matching. The querier learns which of its names have a
close match in the responder's list; the responder learns nothing about the
queries and the querier learns nothing about non-matching records.

- Offline: MinHash encoding and cosine k-means over the responder's names
- Online: a CKKS-encrypted centroid round, then column-wise matching with
  masked scores, over an in-process channel or TCP
- Evaluation: synthetic datasets, sweeps and cost reports (`hefuzz bench`)
"""

__all__ = [
    "__version__",
]

__version__ = "0.1.0"
