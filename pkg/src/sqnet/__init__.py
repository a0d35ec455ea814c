"""Compressive meta-learning toolkit.

Datasets are compressed into fixed-size, mergeable sketches; model parameters
(PCA bases, ridge weights, k-means centroids, autoencoder biases, frequency and
membership tables) are decoded from the sketch alone.
"""

__version__ = "0.1.0"
