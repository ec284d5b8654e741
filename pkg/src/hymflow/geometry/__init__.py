from .forms import (FormField, covariant_derivative, dolbeault_derivative, graded_commutator,
                    scalar_function, wedge)
from .grid import GeometryError, GridGeometry, build_torus_geometry
from .metric import (MetricError, MetricField, lambda_contract, make_test_metric,
                     metric_condition_check, omega_norm, omega_power, wedge_power_volume)
from .torsion import tau_adjoint, tau_adjoint_direct, torsion_adjoint_apply

__all__ = [
    "FormField", "GeometryError", "GridGeometry", "MetricError", "MetricField",
    "build_torus_geometry", "covariant_derivative", "dolbeault_derivative",
    "graded_commutator", "lambda_contract", "make_test_metric", "metric_condition_check",
    "omega_norm", "omega_power", "scalar_function", "tau_adjoint", "tau_adjoint_direct",
    "torsion_adjoint_apply", "wedge", "wedge_power_volume",
]
