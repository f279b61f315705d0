"""Loss heads over Euclidean, hyperbolic and spherical embeddings, including a
stochastic von Mises-Fisher head, with a small numpy autodiff core."""

from .heads import VARIANTS, make_head
from .special import bessel_ratio_approx, bessel_ratio_bounds, log_cn_approx
from .tensor import Tensor
from .vmf import VmfParams, expected_value, make_init_plan, sample

__all__ = [
    "VARIANTS", "make_head", "bessel_ratio_approx", "bessel_ratio_bounds",
    "log_cn_approx", "Tensor", "VmfParams", "expected_value", "make_init_plan", "sample",
]
__version__ = "0.1.0"
