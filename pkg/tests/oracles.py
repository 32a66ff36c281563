"""Derivative-free reference computations shared by the test modules."""

import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln


def zoom_grid_max(f, center, half_width, points=11, rounds=40, shrink=0.5):
    """Maximise f by repeated grid search on a shrinking box."""
    center = np.asarray(center, dtype=float)
    half_width = np.asarray(half_width, dtype=float)
    best_val = f(center)
    for _ in range(rounds):
        axes = [np.linspace(c - h, c + h, points) for c, h in zip(center, half_width)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.size)
        vals = np.array([f(pt) for pt in mesh])
        k = int(np.argmax(vals))
        if vals[k] >= best_val:
            best_val, center = vals[k], mesh[k]
        half_width = half_width * shrink
    return center, best_val


def laplace_random_intercept(y_clusters, beta, sigma, x=None):
    """Laplace marginal log-likelihood for design [1, x] and a random intercept.

    Each cluster's mode is found by bracketing root search on its score, so
    nothing is shared with the package's Newton solvers.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    total = 0.0
    for y in y_clusters:
        y = np.asarray(y, dtype=float)
        xs = np.arange(y.size, dtype=float) if x is None else np.asarray(x, dtype=float)
        eta = beta[0] + (beta[1] * xs if beta.size > 1 else np.zeros_like(xs))

        def score(b):
            return np.sum(y - np.exp(eta + b)) - b / sigma**2

        b = brentq(score, -60, 60, xtol=1e-14)
        mu = np.exp(eta + b)
        joint = np.sum(y * (eta + b) - mu - gammaln(y + 1)) - 0.5 * b**2 / sigma**2 - math.log(sigma)
        total += joint - 0.5 * math.log(np.sum(mu) + 1 / sigma**2)
    return total
