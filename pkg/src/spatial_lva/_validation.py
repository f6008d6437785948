"""Small input-validation helpers used by the public operations."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_float_array(x, name="array"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_square_matrix(x, name="matrix"):
    arr = as_float_array(x, name)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_symmetric(arr, name="matrix", tol=1e-9):
    dev = np.max(np.abs(arr - arr.T)) if arr.size else 0.0
    if dev > tol:
        raise ValidationError(f"{name} is not symmetric (max deviation {dev:.3g})")


def check_same_ids(ids_a, ids_b, what="inputs"):
    """Require identical id sequences, reporting the offenders otherwise."""
    a, b = list(ids_a), list(ids_b)
    if a == b:
        return
    missing = [i for i in a if i not in set(b)]
    extra = [i for i in b if i not in set(a)]
    if missing or extra:
        raise ValidationError(
            f"id mismatch between {what}: missing={missing[:10]} extra={extra[:10]}"
        )
    raise ValidationError(f"ids of {what} agree as sets but differ in order")
