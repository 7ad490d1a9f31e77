"""tokensieve: desk-scale token scoring, pruning, and dual-attention encoding
over multi-scale feature pyramids, plus an analytical FLOP model and a
synthetic-scene training harness."""

__version__ = "0.1.0"
