"""NumPy implementations of the numeric kernels.

Used when the compiled ``_ckernels`` extension is unavailable.  Both
modules expose identical functions and must agree to rounding error.
"""
import numpy as np


def pairwise_distances(pos):
    pos = np.asarray(pos, dtype=np.float64)
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def radius_pairs(pos, cutoff):
    """Ordered pairs (i, j), i != j, closer than ``cutoff``; row-major order."""
    d = pairwise_distances(pos)
    ok = d < cutoff
    np.fill_diagonal(ok, False)
    i, j = np.nonzero(ok)
    return i.astype(np.int64), j.astype(np.int64), d[i, j]


def segment_sum(values, index, n):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, np.asarray(index, dtype=np.int64), values)
    return out


def surrogate_terms(pos, radii, tolerance, k_bond, lj_epsilon, sigma_scale, sigma_offset):
    """Per-pair energies (i < j, row-major): harmonic if bonded else Lennard-Jones."""
    pos = np.asarray(pos, dtype=np.float64)
    n = len(pos)
    i, j = np.triu_indices(n, 1)
    diff = pos[i] - pos[j]
    r = np.sqrt((diff * diff).sum(axis=1))
    r0 = radii[i] + radii[j]
    bonded = r <= tolerance * r0
    out = np.empty(len(r))
    out[bonded] = k_bond * (r[bonded] - r0[bonded]) ** 2
    nb = ~bonded
    sr6 = (sigma_scale * (r0[nb] + sigma_offset) / r[nb]) ** 6
    out[nb] = 4.0 * lj_epsilon * (sr6 * sr6 - sr6)
    return out


def min_cross_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=-1).min()))
