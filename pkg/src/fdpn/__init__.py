"""Weakly-supervised frame-level video anomaly scoring with saliency masking and direction prediction."""

__version__ = "0.1.0"
