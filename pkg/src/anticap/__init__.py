"""Anticipation captioning on numpy: concept graphs, a graph attention prompt and a frozen decoder."""

__version__ = "0.1.0"
