"""Shared helpers for the test suite.

The converters here are written from the storage definition on purpose, so
band-matrix checks do not lean on the package's own conversion code.
"""
import numpy as np


def dense_from_bands(bands: np.ndarray, half_bandwidth: int) -> np.ndarray:
    """Expand compact band storage to a dense matrix.

    Entry (i, j) lives at bands[half_bandwidth + i - j, j].
    """
    k = half_bandwidth
    n = bands.shape[1]
    dense = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - k), min(n, i + k + 1)):
            dense[i, j] = bands[k + i - j, j]
    return dense


def bands_from_dense(dense: np.ndarray, half_bandwidth: int) -> np.ndarray:
    """Inverse of dense_from_bands; entries outside the band are dropped."""
    k = half_bandwidth
    n = dense.shape[0]
    bands = np.zeros((2 * k + 1, n))
    for i in range(n):
        for j in range(max(0, i - k), min(n, i + k + 1)):
            bands[k + i - j, j] = dense[i, j]
    return bands


def random_spd_bands(rng: np.random.Generator, n: int, k: int):
    """Symmetric, strictly diagonally dominant random band storage."""
    bands = np.zeros((2 * k + 1, n))
    for o in range(1, k + 1):
        vals = rng.uniform(-1.0, 1.0, n - o)
        bands[k + o, : n - o] = vals
        bands[k - o, o:] = vals
    bands[k, :] = 2.0 * k + 1.0
    return bands
