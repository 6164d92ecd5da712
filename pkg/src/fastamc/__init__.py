"""Modulation classification from (sub)sampled I/Q frames: signal synthesis, channel
impairments, datasets, input reduction, a numpy neural-network engine and experiments."""

__version__ = "0.1.0"
