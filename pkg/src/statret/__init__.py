"""Article-level statute retrieval.

A two-stage pipeline: a BM25 inverted index filters the corpus down to a
candidate set, and a neural reranker (attentive sentence encoder plus a
sparsemax paragraph aggregator) rescores the candidates.  Final scores are
a convex mix of the normalized lexical and neural scores.
"""

__version__ = "0.1.0"
