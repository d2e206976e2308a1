"""Dense 3-mode tensor utilities: unfolding, mode products and truncated HOSVD.

All tensors here are plain numpy arrays.  Mode numbering is 1-based to match
the usual tensor-algebra convention (mode 1 = first axis).
"""

import numpy as np


def unfold(tensor, mode):
    """Mode-n unfolding: rows indexed by `mode`, columns by the remaining modes."""
    axis = mode - 1
    return np.moveaxis(tensor, axis, 0).reshape(tensor.shape[axis], -1)


def fold(matrix, mode, shape):
    """Inverse of :func:`unfold` for a target tensor `shape`."""
    axis = mode - 1
    full = [shape[axis]] + [s for i, s in enumerate(shape) if i != axis]
    return np.moveaxis(matrix.reshape(full), 0, axis)


def mode_product_matrix(tensor, matrix, mode):
    """Tensor-times-matrix along `mode`; matrix shape (k, size_of_mode)."""
    axis = mode - 1
    if matrix.shape[1] != tensor.shape[axis]:
        raise ValueError(
            f"mode-{mode} size mismatch: tensor has {tensor.shape[axis]}, "
            f"matrix has {matrix.shape[1]} columns"
        )
    moved = np.moveaxis(tensor, axis, -1)
    out = moved @ matrix.T
    return np.moveaxis(out, -1, axis)


def mode_product(tensor, vector, mode):
    """Contract `tensor` with `vector` along `mode`, reducing the order by one."""
    axis = mode - 1
    vector = np.asarray(vector)
    if vector.ndim != 1 or vector.shape[0] != tensor.shape[axis]:
        raise ValueError(
            f"mode-{mode} size mismatch: tensor has {tensor.shape[axis]}, "
            f"vector has length {vector.shape[0] if vector.ndim == 1 else vector.shape}"
        )
    return np.tensordot(tensor, vector, axes=([axis], [0]))


def hosvd_factors(tensor, mode, rank):
    """Leading `rank` left singular vectors of the mode-n unfolding."""
    u, _, _ = np.linalg.svd(unfold(tensor, mode), full_matrices=False)
    return u[:, :rank]
