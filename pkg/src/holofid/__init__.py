"""Fidelity of holonomic quantum gates under random control-parameter noise.

Exact Monte Carlo transport along noise-perturbed loops, cross-validated
against the closed-form second-order cumulant prediction.
"""

from .su_algebra import (LieBasis, CoeffVector, build_basis,
                         structure_constants, decompose, reconstruct, ad_map)
from .param_geometry import (ParamLoop, PathGrid, ClosedSpline, square_loop,
                             sample_path, fit_closed_spline,
                             arc_length_params, default_steps)
from .noise import (NoiseSpec, ErrorRealization, realization_rng,
                    perturb_loop, covariance, corr_length)
from .connection import (ConnectionField, CurvatureValue, pauli_connection,
                         abelian_test_connection, curvature, plaquette_oracle,
                         frobenius_norm_F)
from .transport import (TransportResult, ShiftedCurvatureSweep,
                        TransportConvergenceError, ordered_exp,
                        transport_state, transport_bloch,
                        shifted_curvature_sweep)
from .fidelity_lab import (FidelityEstimate, fidelity_overlap, mc_fidelity,
                           first_order_fidelity, van_kampen_fidelity,
                           smallness_parameter)
from .experiment_cli import (ExperimentConfig, SweepRow, ConfigError,
                             NumericFailure, run_sweep, emit_outputs)

__version__ = "0.1.0"

__all__ = [
    "LieBasis", "CoeffVector", "build_basis", "structure_constants",
    "decompose", "reconstruct", "ad_map",
    "ParamLoop", "PathGrid", "ClosedSpline", "square_loop", "sample_path",
    "fit_closed_spline", "arc_length_params", "default_steps",
    "NoiseSpec", "ErrorRealization", "realization_rng", "perturb_loop",
    "covariance", "corr_length",
    "ConnectionField", "CurvatureValue", "pauli_connection",
    "abelian_test_connection", "curvature", "plaquette_oracle",
    "frobenius_norm_F",
    "TransportResult", "ShiftedCurvatureSweep", "TransportConvergenceError",
    "ordered_exp", "transport_state", "transport_bloch",
    "shifted_curvature_sweep",
    "FidelityEstimate", "fidelity_overlap", "mc_fidelity",
    "first_order_fidelity", "van_kampen_fidelity", "smallness_parameter",
    "ExperimentConfig", "SweepRow", "ConfigError", "NumericFailure",
    "run_sweep", "emit_outputs",
]
