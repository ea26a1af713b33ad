"""Diversity-enhancing conditional GAN oversampling for tabular binary classification."""

__version__ = "0.1.0"
