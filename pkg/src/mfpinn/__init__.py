"""Mixed-form physics-informed networks for multigroup neutron diffusion.

Modules: ``autodiff`` (network and exact derivatives), ``network`` (hard
boundary conditions), ``physics`` (materials, residuals, losses),
``sampling``, ``training`` (Adam and the source trainer), ``eigen``
(inverse power iteration), ``refsolver`` (finite-volume reference) and
``bench`` (cases, metrics, runs, CLI).
"""
from .autodiff import Architecture, NetworkParams, forward, forward_with_input_jacobian, init_params, loss_gradient
from .eigen import EigenOptions, solve_eigen
from .network import build_hbc, constrained_eval
from .physics import Geometry, MaterialField, MaterialSpec, check_assumptions, loss_scaled, loss_unscaled
from .training import TrainOptions, train_source

__version__ = "0.1.0"

__all__ = [
    "Architecture", "NetworkParams", "forward", "forward_with_input_jacobian", "init_params", "loss_gradient",
    "EigenOptions", "solve_eigen", "build_hbc", "constrained_eval", "Geometry", "MaterialField", "MaterialSpec",
    "check_assumptions", "loss_scaled", "loss_unscaled", "TrainOptions", "train_source",
]
