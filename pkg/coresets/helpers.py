import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed, *parts):
    """Mix a 64-bit seed with a tuple of tags into an independent 64-bit seed."""
    tag = ":".join(str(part) for part in parts).encode("utf-8")
    digest = hashlib.blake2b(tag, digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & _MASK64


def symmetrize(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return 0.5 * (matrix + matrix.T)


def central_difference_gradient(func, x, step=1e-5):
    """Central finite-difference gradient of a scalar function.

    The step for coordinate i is ``step * (1 + |x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] += h
        backward[i] -= h
        grad[i] = (func(forward) - func(backward)) / (2.0 * h)
    return grad


def central_difference_jacobian(func, x, step=1e-5):
    """Jacobian of a vector-valued function by central differences, column i = d func / d x_i."""
    x = np.asarray(x, dtype=float)
    columns = []
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        forward = x.copy()
        backward = x.copy()
        forward[i] += h
        backward[i] -= h
        columns.append((np.asarray(func(forward)) - np.asarray(func(backward))) / (2.0 * h))
    return np.column_stack(columns)
