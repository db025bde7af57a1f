"""Diffusion-based musical timbre transfer toolkit.

Train a mel-conditioned noise-prediction model that re-renders a performance
with a different instrument's timbre, learn short inference noise schedules
with a secondary schedule network, and evaluate outputs with
Frechet-distance machinery over pluggable embeddings.
"""

__version__ = "0.1.0"
