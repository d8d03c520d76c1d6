"""Adaptive table retrieval toolkit.

Given a natural-language query and a corpus of database schemas, the engine
retrieves a query-dependent number of tables: a first-stage embedder ranks the
corpus by cosine similarity, and a sliding-window reranker compares per-table
relevance logits against a query-specific boundary logit to decide how many
tables to keep.
"""

__version__ = "0.1.0"
