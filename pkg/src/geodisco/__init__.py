"""Geometry-constrained probabilistic novel-class discovery on the hypersphere.

Library layout:

- ``vmf``: von Mises-Fisher densities, entropies, divergences, sampling.
- ``proxies``: Riesz-energy-minimized proxy placement and the proxy file format.
- ``losses``: bounding, dispersion, and structuring objectives with gradients.
- ``encoder``: two-head MLP encoder, manual backprop, seeded training.
- ``spectral``: eigengap class-count estimation and a sweep-k baseline.
- ``pipeline``: spherical k-means, Hungarian matching, discovery metrics.
- ``data``: synthetic shifted long-tailed benchmarks and embedding I/O.
- ``cli``: the ``geodisco`` command-line front end.
"""

__version__ = "0.1.0"
