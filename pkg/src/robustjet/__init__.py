"""Robust jet classification: histogram-resampling augmentation, typed feature
embeddings, RDSA attacks and mixed clean/adversarial evaluation."""

__version__ = "0.1.0"
