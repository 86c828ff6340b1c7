"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np

from .exceptions import InvalidCell, ShapeMismatch

MIN_SIDE = 4


def check_cell(cell, name="cell"):
    """Validate a single binary cell and return it as a C-contiguous uint8 array."""
    arr = np.asarray(cell)
    if arr.ndim != 2:
        raise InvalidCell(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise InvalidCell(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape}")
    if arr.dtype == np.bool_:
        return np.ascontiguousarray(arr, dtype=np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidCell(f"{name} values must be exactly 0 or 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_cells(cells, name="cells"):
    """Validate a stack of cells sharing one resolution; returns (n, H, W) uint8."""
    if isinstance(cells, np.ndarray) and cells.ndim == 2:
        raise InvalidCell(f"{name} must be a sequence of 2-D cells; got a single cell")
    arr = np.asarray(cells) if not isinstance(cells, list) else None
    if arr is None:
        if len(cells) == 0:
            raise InvalidCell(f"{name} is empty")
        shapes = {np.shape(c) for c in cells}
        if len(shapes) != 1:
            raise ShapeMismatch(f"{name} mix resolutions: {sorted(shapes)}")
        arr = np.stack([np.asarray(c) for c in cells])
    if arr.ndim != 3:
        raise InvalidCell(f"{name} must have shape (n, H, W), got {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidCell(f"{name} is empty")
    check_cell(arr[0], name=f"{name}[0]")
    if arr.dtype != np.bool_ and not np.all((arr == 0) | (arr == 1)):
        raise InvalidCell(f"{name} values must be exactly 0 or 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_field(field, name="sdf"):
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scale(size, name="scale"):
    """Validate a morphological kernel size (positive odd integer)."""
    if isinstance(size, (bool, np.bool_)) or not isinstance(size, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {size!r}")
    size = int(size)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"{name} must be a positive odd integer, got {size}")
    return size


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts None, an int, a ``SeedSequence`` or an existing ``Generator``
    (returned unchanged so callers can share a stream).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a Generator from {seed!r}")


def derived_seed(*keys):
    """Stable 64-bit integer derived from a tuple of non-negative ints."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
