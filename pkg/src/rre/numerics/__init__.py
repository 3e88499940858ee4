"""Float64 tensors with reverse-mode gradients, Adam, RNG and checkpoints."""

from rre.numerics import autodiff as ad
from rre.numerics.autodiff import Tensor, backward, no_grad, numerical_gradient, relative_error
from rre.numerics.checkpoint import FORMAT_VERSION
from rre.numerics.checkpoint import load as load_checkpoint
from rre.numerics.checkpoint import save as save_checkpoint
from rre.numerics.optim import ParamStore, adam_step, evaluate_with_gradients, uniform_init
from rre.numerics.rng import Rng, seeded_rng

__all__ = [
    "ad",
    "Tensor",
    "backward",
    "no_grad",
    "numerical_gradient",
    "relative_error",
    "ParamStore",
    "adam_step",
    "evaluate_with_gradients",
    "uniform_init",
    "Rng",
    "seeded_rng",
    "FORMAT_VERSION",
    "load_checkpoint",
    "save_checkpoint",
]
