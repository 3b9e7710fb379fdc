"""Transaction fraud detection on dynamic snapshot graphs.

Pipeline: ingest transaction logs into a bipartite order/entity graph,
partition it into mini-communities, expand each partition into a directed
dynamic snapshot (DDS) graph that only lets information flow forward in
time, train a two-stage GNN on it, precompute entity embeddings into a
key-value store, and score new orders with a single 1-hop lookup.
"""

__version__ = "0.1.0"
