"""Binary function similarity via dominance-enhanced semantic graphs.

Pipeline: lifted P-Code functions (interchange JSON) -> DESG construction
-> gated GNN embeddings -> cosine similarity matching/search, plus a
GED-based stability analyzer comparing CFGs against dominator trees.
"""

__version__ = "0.1.0"
