"""Comparison methods: GRF perturbation, MLE dilation/erosion, augmentation.

Direct training needs no code of its own: it is
:func:`gust.diffusion.pretrain` run on the fine-tuning data.
"""

from .augment import augment_dataset
from .de import DEResult, differential_evolution
from .grf import (GRFConfig, GRFPerturber, KLBasis, grf_basis, grf_covariance, grf_perturb,
                  grf_realize, kl_decompose, lattice_points, perturb_with_field)
from .morphology import (MorphFit, MorphologyMLE, fit_morph_scales, kde_neg_loglik,
                         scott_bandwidth, nearest_odd)

__all__ = [
    "DEResult", "GRFConfig", "GRFPerturber", "KLBasis", "MorphFit", "MorphologyMLE",
    "augment_dataset", "differential_evolution", "fit_morph_scales", "grf_basis",
    "grf_covariance", "grf_perturb", "grf_realize", "kde_neg_loglik", "kl_decompose",
    "lattice_points", "scott_bandwidth", "nearest_odd", "perturb_with_field",
]
