"""Procedural nominal designs and an image importer for external cell data."""

import os

import numpy as np
from scipy import ndimage

from .._validation import check_cell
from ..exceptions import EmptyCell, GenerationExhausted, UnreadableImage

FAMILIES = ("bars", "crosses", "ring-slots", "random-symmetric-levelset")
VF_RANGE = (0.25, 0.75)


def _folded_coords(resolution):
    """Distance of each pixel center from the cell center, normalized to (0, 1).

    Computed from integers, so the arrays are exactly mirror symmetric.
    """
    h, w = resolution
    y = np.abs(2 * np.arange(h) + 1 - h) / h
    x = np.abs(2 * np.arange(w) + 1 - w) / w
    return np.meshgrid(y, x, indexing="ij")


def _bars(Y, X, rng):
    # center horizontal bar joined to a vertical bar on the cell edges
    t1, t2 = rng.uniform(0.15, 0.45, size=2)
    return (Y < t1) | (X > 1.0 - t2)


def _crosses(Y, X, rng):
    a, b = rng.uniform(0.15, 0.5, size=2)
    return (X < a) | (Y < b)


def _ring_slots(Y, X, rng):
    # plate with a central hole and slots cut in from the corners
    r = np.hypot(X, Y)
    r_hole = rng.uniform(0.2, 0.55)
    r_slot = rng.uniform(r_hole + 0.25, 1.3)
    width = rng.uniform(0.08, 0.25)
    slot = (np.abs(X - Y) < width) & (r > r_slot)
    return (r >= r_hole) & ~slot


def _levelset(Y, X, rng):
    modes = 4
    coef = rng.normal(size=(modes, modes)) / (1.0 + np.add.outer(np.arange(modes), np.arange(modes)))
    f = np.zeros_like(X)
    for k in range(modes):
        for l in range(modes):
            f += coef[k, l] * np.cos(np.pi * k * Y) * np.cos(np.pi * l * X)
    level = np.quantile(f, 1.0 - rng.uniform(0.35, 0.65))
    mask = f > level
    lab, n = ndimage.label(mask)
    if n > 1:
        sizes = ndimage.sum(mask, lab, index=np.arange(1, n + 1))
        mask = lab == (1 + int(np.argmax(sizes)))
    return mask


_BUILDERS = {"bars": _bars, "crosses": _crosses, "ring-slots": _ring_slots,
             "random-symmetric-levelset": _levelset}


def is_valid_nominal(cell):
    """Mirror symmetric about both axes, one 4-connected material body, vf within range."""
    cell = np.asarray(cell)
    if not (np.array_equal(cell, cell[::-1]) and np.array_equal(cell, cell[:, ::-1])):
        return False
    vf = cell.mean()
    if not VF_RANGE[0] <= vf <= VF_RANGE[1]:
        return False
    return ndimage.label(cell)[1] == 1


def gen_nominal(resolution, family, rng, max_attempts=100):
    if family not in _BUILDERS:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    Y, X = _folded_coords(resolution)
    for _ in range(max_attempts):
        cell = _BUILDERS[family](Y, X, rng).astype(np.uint8)
        if is_valid_nominal(cell):
            return cell
    raise GenerationExhausted(f"no valid {family} design after {max_attempts} attempts")


def gen_nominals(count, resolution, family="crosses", seed=0, max_attempts=100):
    """``count`` valid designs; ``family`` is a name or a sequence cycled over designs.

    Design ``i`` draws from a stream derived from ``(seed, i)``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    families = [family] if isinstance(family, str) else list(family)
    return [gen_nominal(resolution, families[i % len(families)],
                        np.random.default_rng(np.random.SeedSequence([int(seed), i])),
                        max_attempts)
            for i in range(count)]


def nearest_indices(size, target):
    """Source index of each target pixel for nearest-neighbor resizing."""
    return (np.arange(target) * 2 + 1) * size // (2 * target)


def import_image(path, resolution, threshold=128):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "1", "P"):
                raise UnreadableImage(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            arr = np.asarray(im.convert("L"))
    except (OSError, UnidentifiedImageError) as exc:
        if isinstance(exc, UnreadableImage):
            raise
        raise UnreadableImage(f"{path}: {exc}") from exc
    if arr.shape[0] != arr.shape[1]:
        raise UnreadableImage(f"{path}: image is not square ({arr.shape})")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    cell = (arr >= threshold).astype(np.uint8)
    rows = nearest_indices(arr.shape[0], resolution[0])
    cols = nearest_indices(arr.shape[1], resolution[1])
    cell = cell[np.ix_(rows, cols)]
    if cell.all():
        raise EmptyCell("void", path)
    if not cell.any():
        raise EmptyCell("material", path)
    return check_cell(cell)


IMAGE_SUFFIXES = (".png", ".bmp", ".pgm", ".tif", ".tiff", ".gif")


def import_cells(directory, resolution=64, threshold=128):
    """Binarize (pixel >= threshold is material) and resize every image in ``directory``.

    Files are taken in sorted name order.
    """
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
    return [import_image(os.path.join(directory, n), resolution, threshold) for n in names]
