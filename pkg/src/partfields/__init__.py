"""Part-based neural radiance fields on a small numpy autodiff core.

The package trains per-object latent codes and shared networks from posed
images + masks, renders objects as a union of locally-framed part fields
under a hard ray-part assignment, and supports part-level editing, mixing,
generation, inversion, mesh extraction, and generative-quality metrics.
"""

from . import autodiff, geometry, losses, metrics, nets, optim, render
from .edit import InstanceState
from .render import PartView, RenderConfig, render_image, render_rays
from .training import TrainConfig, TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "autodiff",
    "geometry",
    "losses",
    "metrics",
    "nets",
    "optim",
    "render",
    "InstanceState",
    "PartView",
    "RenderConfig",
    "render_image",
    "render_rays",
    "TrainConfig",
    "TrainState",
    "fit",
    "__version__",
]
