"""Torsion operators ``tau = [Lambda, del omega]`` and their pointwise adjoints."""
from __future__ import annotations

from math import factorial

import numpy as np

from .forms import FormField, dolbeault_derivative, wedge
from .metric import MetricField, omega_power


def _power_derivative(metric: MetricField, k: int, kind: str) -> FormField | None:
    """``del`` or ``delbar`` of ``omega^k / k!``; ``None`` when it vanishes identically."""
    if k < 0 or metric.geom.n == 1:
        return None
    if k == 0:
        return None
    return dolbeault_derivative(omega_power(metric, k), kind) * (1.0 / factorial(k))


def tau_adjoint(F: FormField, metric: MetricField, conjugate: bool = False) -> FormField:
    """``tau^* F`` (or ``taubar^* F``) for a 2-form ``F`` by the closed formula

    ``tau^* F = -*(delbar omega^{n-2} ^ F)/(n-2)! + *(delbar omega^{n-1} Lambda F)/(n-1)!``;
    the conjugate operator swaps ``delbar`` for ``del``.
    """
    n = metric.geom.n
    kind = "del" if conjugate else "delbar"
    out = FormField.zeros(metric.geom, 1, F.rank)
    first = _power_derivative(metric, n - 2, kind)
    if first is not None:
        out = out - metric.hodge_star(wedge(first, F))
    second = _power_derivative(metric, n - 1, kind)
    if second is not None:
        lam = metric.contract(F)
        out = out + metric.hodge_star(wedge(second, lam))
    return out


def torsion_adjoint_apply(F: FormField, metric: MetricField) -> FormField:
    """``(tau^* + taubar^*) F`` as a 1-form; zero for Kaehler metrics."""
    return tau_adjoint(F, metric) + tau_adjoint(F, metric, conjugate=True)


def torsion_matrix(metric: MetricField, conjugate: bool = False):
    """Per-site matrix of ``tau`` (or ``taubar``) acting on 1-forms, straight from
    ``tau = [Lambda, del omega]``; ``None`` when there are no 4-forms (``n = 1``)."""
    if metric.geom.dim < 4:
        return None
    domega = dolbeault_derivative(metric.omega, "delbar" if conjugate else "del")
    W = metric.wedge_matrix(domega, 1)
    L = metric.lefschetz_adjoint_matrix(4)
    return np.einsum("ij...,jk...->ik...", L, W)


def tau_adjoint_direct(F: FormField, metric: MetricField, conjugate: bool = False) -> FormField:
    """``tau^* F`` as the pointwise adjoint of the commutator matrix."""
    M = torsion_matrix(metric, conjugate)
    if M is None:
        return FormField.zeros(metric.geom, 1, F.rank)
    return metric.apply(metric.adjoint_matrix(M, 1, 2), F, 1)
