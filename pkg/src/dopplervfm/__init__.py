"""Vector flow mapping of cardiac blood flow from color Doppler frames.

Two reconstruction families share one polar-grid data model:

* physics-informed networks trained with adaptive loss balancing
  (:class:`RBPinnReconstructor`) or an augmented Lagrangian
  (:class:`ALPinnReconstructor`);
* a one-shot constrained least-squares solver (:class:`IVFMReconstructor`).

Synthetic stream-function phantoms, degradation protocols, metrics and a
command-line harness (``dopplervfm``) complete the package.
"""

from .domain import BoundaryConditionSet, PolarGrid, Segmentation, build_grid, extract_boundary, sector_grid
from .domain import sector_segmentation
from .ivfm import IVFMReconstructor, assemble_kkt, calibrate_lambda, ivfm_solve
from .metrics import MetricsReport, aggregate_robust, nrmse, squared_correlation
from .mlp import MlpParams, load_weights, mlp_init, save_weights
from .phantom import DegradeSpec, DopplerFrame, StreamFunctionSpec, StreamTerm, VelocityField, degrade
from .phantom import phantom_cine, stream_function_field, synthesize_doppler
from .pinn import ALPinnReconstructor, RBPinnReconstructor, al_pinn_solve, pretrain_reference, rb_pinn_solve

__version__ = "0.1.0"

__all__ = [
    "ALPinnReconstructor",
    "BoundaryConditionSet",
    "DegradeSpec",
    "DopplerFrame",
    "IVFMReconstructor",
    "MetricsReport",
    "MlpParams",
    "PolarGrid",
    "RBPinnReconstructor",
    "Segmentation",
    "StreamFunctionSpec",
    "StreamTerm",
    "VelocityField",
    "aggregate_robust",
    "al_pinn_solve",
    "assemble_kkt",
    "build_grid",
    "calibrate_lambda",
    "degrade",
    "extract_boundary",
    "ivfm_solve",
    "load_weights",
    "mlp_init",
    "nrmse",
    "phantom_cine",
    "pretrain_reference",
    "rb_pinn_solve",
    "save_weights",
    "sector_grid",
    "sector_segmentation",
    "squared_correlation",
    "stream_function_field",
    "synthesize_doppler",
]
