"""Toolkit for one-shot periocular verification experiments.

Covers image normalization, verification pair protocols, classical and
CNN-activation features, blocked pairwise scoring, FAR/FRR/EER metrics,
and per-layer sweep/transfer analysis.
"""

__version__ = "0.1.0"
