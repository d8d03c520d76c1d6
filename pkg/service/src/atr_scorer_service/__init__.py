"""HTTP service implementing the table-relevance scorer wire protocol.

Two backends: a stub that answers from a fixed table-id -> logit lookup
(protocol conformance without any model), and an optional transformer
encoder that derives logits from the hidden states of the boundary and
per-table marker tokens.
"""

__version__ = "0.1.0"
