"""Discrete tokenization of 64^3 voxel shapes, with the codec, metrics,
dialogue-corpus builder and n-gram shape prior built around it."""

__version__ = "0.1.0"
