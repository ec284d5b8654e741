"""Numerical lab for the Hermitian-Yang-Mills flow on flat complex tori."""
from .bundle import (BundleState, ConnectionState, adjoint_identity_check, chern_connection, curvature,
                     degree_slope_lambda, gauge_act, make_test_bundle)
from .flow import (FlowConfig, Trajectory, cfl_timestep, connection_flow_rhs, gauge_link, integrate,
                   metric_flow_rhs, rhs_cross_check, trajectory_equivalence)
from .geometry import (build_torus_geometry, dolbeault_derivative, lambda_contract, make_test_metric,
                       metric_condition_check, torsion_adjoint_apply, wedge_power_volume)

__version__ = "0.1.0"

__all__ = [
    "BundleState", "ConnectionState", "FlowConfig", "Trajectory", "adjoint_identity_check",
    "build_torus_geometry", "cfl_timestep", "chern_connection", "connection_flow_rhs", "curvature",
    "degree_slope_lambda", "dolbeault_derivative", "gauge_act", "gauge_link", "integrate",
    "lambda_contract", "make_test_bundle", "make_test_metric", "metric_condition_check",
    "metric_flow_rhs", "rhs_cross_check", "torsion_adjoint_apply", "trajectory_equivalence",
    "wedge_power_volume",
]
