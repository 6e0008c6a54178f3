"""Performance embeddings of parallel loop nests and transfer tuning."""
__version__ = "0.1.0"
