"""Generative learning of manufacturing-induced geometric uncertainty in metamaterial unit cells.

Subpackages and modules:

- :mod:`gust.geometry`: signed distance fields, morphology, resampling.
- :mod:`gust.perturb`: synthetic fabrication operators and paired datasets.
- :mod:`gust.diffusion`: conditional DDPM (schedule, U-Net, training, sampling).
- :mod:`gust.baselines`: GRF perturbation, MLE dilation/erosion, augmentation.
- :mod:`gust.homogenize`: periodic FE homogenization.
- :mod:`gust.metrics`: embedding, density/coverage, Wasserstein and KDE tools.
- :mod:`gust.pipeline`: configuration, file formats and the ``gust`` CLI.
"""

from . import exceptions
from .exceptions import GustError

__version__ = "0.1.0"

__all__ = ["GustError", "exceptions", "__version__"]
