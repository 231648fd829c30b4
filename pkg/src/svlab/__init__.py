"""svlab: a desk-scale laboratory for self-supervised speaker verification."""

__version__ = "0.1.0"
