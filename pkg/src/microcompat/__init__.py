"""Polymer-blend compatibility recognition from SEM micrographs.

Subpackages: tensor (autodiff core), nn/models (architectures), optim
(loss + Adam + training loop), data (manifests, augmentation, synthetic
micrographs), sobel (edge baseline), metrics (confusion metrics and the
softmax compatibility criterion), experiment/cli (seeded harness).
"""

from .errors import (ConfigError, FormatError, LoadError, NumericalError,
                     RecipeError, ShapeError, UsageError)
from .tensor import Parameter, Tensor, no_grad

__version__ = "0.1.0"
