import numpy as np


def random_stable(rng, d, radius=None):
    """Random A rescaled to spectral radius ``radius`` (uniform in [0.3, 1] if None)."""
    A = rng.standard_normal((d, d))
    if radius is None:
        radius = rng.uniform(0.3, 1.0)
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    return A * (radius / rho)
