# ustar: online spatiotemporal unit embeddings
__version__ = "1.0.0"
