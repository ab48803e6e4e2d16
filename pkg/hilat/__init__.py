"""Hierarchical label-wise attention for explainable multi-label document coding."""

__version__ = "0.1.0"
