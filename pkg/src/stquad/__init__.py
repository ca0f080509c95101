"""Peer-to-peer quadtree index for spatio-temporal expert finding."""

__version__ = "0.1.0"
