"""
Dense 3-order tensor primitives.

Tensors are float64 numpy arrays. The linear layout is mode-1 fastest
(Fortran order), and the mode-n unfolding orders its columns with the
lower-numbered remaining mode fastest, so that

    unfold(Z x_1 A x_2 B, 3) == unfold(Z, 3) @ kron(B, A).T

holds exactly as written in the model. Modes are numbered 1, 2, 3.
"""

from typing import Sequence

import numpy as np


def _check_mode(mode: int, ndim: int = 3) -> int:
    """Validate a 1-based mode number and return the 0-based axis."""
    if isinstance(mode, bool) or not isinstance(mode, (int, np.integer)):
        raise ValueError(f"mode must be an integer in 1..{ndim}, got {mode!r}")
    if not 1 <= mode <= ndim:
        raise ValueError(f"mode must be in 1..{ndim}, got {mode}")
    return int(mode) - 1


def as_tensor(t, name: str = "tensor") -> np.ndarray:
    """Return `t` as a finite float64 3-order array or raise ValueError."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3-order, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} has an empty dimension: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return `m` as a finite float64 matrix or raise ValueError."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def unfold(t, mode: int) -> np.ndarray:
    """Return the mode-`mode` unfolding of `t`.

    The result has `t.shape[mode-1]` rows; its columns are the mode-n fibers.
    """
    t = as_tensor(t)
    axis = _check_mode(mode, t.ndim)
    return np.reshape(np.moveaxis(t, axis, 0), (t.shape[axis], -1), order="F")


def fold(m, mode: int, dims: Sequence[int]) -> np.ndarray:
    """Fold a mode-`mode` unfolding back into a tensor of shape `dims`."""
    m = as_matrix(m)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    axis = _check_mode(mode, len(dims))
    rest = dims[:axis] + dims[axis + 1:]
    expected = (dims[axis], int(np.prod(rest)))
    if m.shape != expected:
        raise ValueError(
            f"cannot fold a {m.shape[0]}x{m.shape[1]} matrix at mode {mode} "
            f"into {dims}: expected {expected[0]}x{expected[1]}"
        )
    return np.moveaxis(np.reshape(m, (dims[axis],) + rest, order="F"), 0, axis)


def mode_product(t, u, mode: int) -> np.ndarray:
    """Return the n-mode product `t x_mode u`.

    Args:
        t: tensor with `t.shape[mode-1] == u.shape[1]`
        u: matrix of shape (J, I_mode)
        mode: 1, 2 or 3

    Returns:
        Tensor whose mode-`mode` dimension is replaced by J.
    """
    t = as_tensor(t)
    u = as_matrix(u)
    axis = _check_mode(mode, t.ndim)
    if u.shape[1] != t.shape[axis]:
        raise ValueError(
            f"mode-{mode} product needs {t.shape[axis]} matrix columns, got {u.shape[1]}"
        )
    # tensordot puts the new axis last; move it back into place
    return np.moveaxis(np.tensordot(t, u, axes=(axis, 1)), -1, axis)


def multi_mode_product(t, matrices: Sequence, modes: Sequence[int], transpose: bool = False) -> np.ndarray:
    """Apply several mode products in order; `transpose` uses each matrix's transpose."""
    out = t
    for u, mode in zip(matrices, modes):
        out = mode_product(out, np.asarray(u).T if transpose else u, mode)
    return as_tensor(out)


def kron(a, b) -> np.ndarray:
    """Kronecker product of two matrices."""
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def norms(t) -> tuple[float, float]:
    """Return the (Frobenius, l1) norms of `t`."""
    t = as_tensor(t)
    return float(np.sqrt(np.sum(t * t))), float(np.sum(np.abs(t)))


def inner(t1, t2) -> float:
    """Sum of the elementwise products of two equally shaped tensors."""
    t1 = as_tensor(t1, "t1")
    t2 = as_tensor(t2, "t2")
    if t1.shape != t2.shape:
        raise ValueError(f"inner product needs equal dims, got {t1.shape} and {t2.shape}")
    return float(np.sum(t1 * t2))


def frobenius(t) -> float:
    """Frobenius norm, without the finiteness check (for solver diagnostics)."""
    return float(np.linalg.norm(np.ravel(t)))
