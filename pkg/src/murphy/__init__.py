"""Hierarchical surgical-workflow recognition with relational graph convolution
and hierarchy-masked cross attention, plus a synthetic data generator and the
matching evaluation metrics."""

__version__ = "0.1.0"
