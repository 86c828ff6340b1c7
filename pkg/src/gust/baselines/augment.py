"""Data augmentation for the augmented direct-training baseline."""

import numpy as np

from ..perturb import FABRICATED, PairedDataset, apply_pipeline, variant_rng


def augment_dataset(real, pipe, factor, seed=0):
    """Add ``factor`` perturbed copies of every fabricated record.

    Copy ``k`` of record ``r`` uses the stream derived from ``(seed, r, k)``.
    Nominal records are kept; originals stay in the output next to their
    copies, so the fabricated count grows by ``1 + factor``.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    nid, roles, cells = [], [], []
    for r in range(len(real)):
        nid.append(real.nominal_ids[r])
        roles.append(real.roles[r])
        cells.append(real.cells[r])
        if real.roles[r] != FABRICATED:
            continue
        for k in range(factor):
            nid.append(real.nominal_ids[r])
            roles.append(FABRICATED)
            cells.append(apply_pipeline(real.cells[r], pipe, variant_rng(seed, r, k)))
    return PairedDataset(np.array(nid), np.array(roles), np.stack(cells),
                         variants_per_nominal=real.variants_per_nominal * (1 + factor))
