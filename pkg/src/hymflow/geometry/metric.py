"""Hermitian metrics on the lattice torus and the pointwise linear algebra they induce.

Convention: the fundamental form is ``omega = (i/2) g_{jk} dz^j ^ dzbar^k``, so
``g = Id`` is the Euclidean metric, ``dV = omega^n/n! = det(g) dx`` and
``Lambda omega = n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np

from .forms import (FormField, basis, basis_index, complement_table, dolbeault_derivative,
                    wedge, wedge_table)
from .grid import GridGeometry


class MetricError(ValueError):
    pass


def apply_sitewise(M: np.ndarray, comps: np.ndarray, vdim: int) -> np.ndarray:
    """Apply a per-site matrix ``M[J, I, *grid]`` to form components ``comps[I, *grid, *v]``."""
    ext = M.reshape(M.shape + (1,) * vdim)
    return np.einsum("ji...,i...->j...", ext, comps)


def _site_inv(M: np.ndarray) -> np.ndarray:
    """Invert per-site matrices stored as ``(m, m, *grid)``."""
    moved = np.moveaxis(M, (0, 1), (-2, -1))
    return np.moveaxis(np.linalg.inv(moved), (-2, -1), (0, 1))


def _site_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,jk...->ik...", A, B)


def _site_dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, 0, 1))


@dataclass(eq=False)
class MetricField:
    """Per-site Hermitian positive matrix ``g[..., j, k] = g_{j kbar}`` on a grid."""

    geom: GridGeometry
    g: np.ndarray

    def __post_init__(self):
        shape = self.geom.shape + (self.geom.n, self.geom.n)
        if self.g.shape != shape:
            raise MetricError(f"metric has shape {self.g.shape}, expected {shape}")
        self.g = 0.5 * (self.g + np.conj(np.swapaxes(self.g, -1, -2)))
        if self.min_eigenvalue <= 0:
            raise MetricError(f"metric is not positive definite (min eigenvalue {self.min_eigenvalue:.3g})")

    # -- cached scalar data ---------------------------------------------------
    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.g)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def max_inverse_eigenvalue(self) -> float:
        return float(1.0 / self.eigenvalues.min())

    @cached_property
    def ginv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def det(self) -> np.ndarray:
        """Volume density ``dV/dx`` per site."""
        return np.real(np.linalg.det(self.g))

    @cached_property
    def volume(self) -> float:
        return float(np.real(self.geom.integrate(self.det)))

    @cached_property
    def omega(self) -> FormField:
        n = self.geom.n
        entries = {(j, n + k): 0.5j * self.g[..., j, k] for j in range(n) for k in range(n)}
        return FormField.from_components(self.geom, 2, entries)

    @cached_property
    def coframe_det(self) -> complex:
        """``det P`` with ``e^{all} = det P dx^{all}`` for the complex coframe."""
        n = self.geom.n
        P = np.zeros((2 * n, 2 * n), complex)
        for j in range(n):
            P[j, 2 * j], P[j, 2 * j + 1] = 1, 1j
            P[n + j, 2 * j], P[n + j, 2 * j + 1] = 1, -1j
        return complex(np.linalg.det(P))

    # -- Gram matrices --------------------------------------------------------
    @cached_property
    def _gbil1(self) -> np.ndarray:
        """Bilinear inverse metric on the coframe, shape ``(*grid, 2n, 2n)``."""
        n = self.geom.n
        out = np.zeros(self.geom.shape + (2 * n, 2 * n), complex)
        gi = self.ginv
        out[..., :n, n:] = 2 * np.swapaxes(gi, -1, -2)
        out[..., n:, :n] = 2 * gi
        return out

    @cached_property
    def _gram1(self) -> np.ndarray:
        n = self.geom.n
        swap = [a + n if a < n else a - n for a in range(2 * n)]
        return self._gbil1[..., swap]

    def _minors(self, base: np.ndarray, p: int) -> np.ndarray:
        dim = self.geom.dim
        B = basis(dim, p)
        m = len(B)
        out = np.empty((m, m) + self.geom.shape, complex)
        if p == 0:
            out[...] = 1.0
            return out
        for i, I in enumerate(B):
            for j, J in enumerate(B):
                sub = base[..., list(I), :][..., list(J)]
                out[i, j] = np.linalg.det(sub)
        return out

    def gram(self, p: int) -> np.ndarray:
        """Hermitian Gram matrix ``<e^I, e^J>`` of p-forms, shape ``(m, m, *grid)``."""
        cache = self.__dict__.setdefault("_gram_cache", {})
        if p not in cache:
            cache[p] = self._minors(self._gram1, p)
        return cache[p]

    def gram_bilinear(self, p: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_gbil_cache", {})
        if p not in cache:
            cache[p] = self._minors(self._gbil1, p)
        return cache[p]

    # -- pointwise operations ---------------------------------------------------
    def inner(self, alpha: FormField, beta: FormField, H: np.ndarray | None = None) -> np.ndarray:
        """Pointwise Hermitian inner product; endomorphisms paired by ``tr(a H^-1 b^+ H)``."""
        G = self.gram(alpha.p)
        if alpha.rank is None:
            pair = alpha.comps[:, None] * np.conj(beta.comps[None, :])
        else:
            bd = np.conj(np.swapaxes(beta.comps, -1, -2))
            if H is not None:
                Hinv = np.linalg.inv(H)
                bd = Hinv @ bd @ H
            pair = np.einsum("i...ab,j...ba->ij...", alpha.comps, bd)
        return np.einsum("ij...,ij...->...", G, pair)

    def norm_sq(self, alpha: FormField, H=None) -> np.ndarray:
        return np.real(self.inner(alpha, alpha, H))

    def integrate(self, density: np.ndarray) -> complex:
        """``int density dV``."""
        return self.geom.integrate(density * self.det)

    def l2_norm(self, alpha: FormField, H=None) -> float:
        return float(np.sqrt(max(np.real(self.integrate(self.norm_sq(alpha, H))), 0.0)))

    def integrate_top(self, form: FormField) -> complex:
        """Integral of a top-degree form."""
        if form.p != self.geom.dim:
            raise ValueError("integrate_top needs a top-degree form")
        c = form.comps[0]
        if form.rank is not None:
            raise ValueError("integrate_top needs a scalar form")
        return self.geom.integrate(c * self.coframe_det)

    def hodge_star(self, beta: FormField) -> FormField:
        """Complex-linear Hodge star: ``alpha ^ *beta = (alpha, beta) dV`` (bilinear pairing)."""
        dim = self.geom.dim
        p = beta.p
        Gb = self.gram_bilinear(p)
        contracted = apply_sitewise(Gb, beta.comps, len(beta.vshape))
        fac = self.det / self.coframe_det
        fac = fac.reshape(fac.shape + (1,) * len(beta.vshape))
        out = FormField.zeros(self.geom, dim - p, beta.rank)
        for i, k, s in complement_table(dim, p):
            out.comps[k] = s * fac * contracted[i]
        return out

    def wedge_matrix(self, gamma: FormField, p: int) -> np.ndarray:
        """Per-site matrix of ``alpha -> gamma ^ alpha`` on p-forms (scalar ``gamma``)."""
        dim = self.geom.dim
        s = gamma.p
        mq = len(basis(dim, s + p))
        mp = len(basis(dim, p))
        M = np.zeros((mq, mp) + self.geom.shape, complex)
        for j, i, k, sign in wedge_table(dim, s, p):
            M[k, i] += sign * gamma.comps[j]
        return M

    def adjoint_matrix(self, M: np.ndarray, p: int, q: int) -> np.ndarray:
        """Pointwise adjoint of a per-site map from p-forms to q-forms."""
        Gp_T_inv = _site_inv(np.swapaxes(self.gram(p), 0, 1))
        Gq_T = np.swapaxes(self.gram(q), 0, 1)
        return _site_matmul(Gp_T_inv, _site_matmul(_site_dagger(M), Gq_T))

    def lefschetz_adjoint_matrix(self, p: int) -> np.ndarray:
        """Per-site matrix of ``Lambda`` on p-forms (adjoint of ``omega ^``)."""
        cache = self.__dict__.setdefault("_lambda_cache", {})
        if p not in cache:
            cache[p] = self.adjoint_matrix(self.wedge_matrix(self.omega, p - 2), p - 2, p)
        return cache[p]

    def contract(self, form: FormField) -> FormField:
        """``Lambda_omega`` on a form of any degree >= 2."""
        if form.p < 2:
            raise ValueError("Lambda needs a form of degree >= 2")
        M = self.lefschetz_adjoint_matrix(form.p)
        return FormField(self.geom, form.p - 2, apply_sitewise(M, form.comps, len(form.vshape)),
                         form.rank, form.twist)

    def apply(self, M: np.ndarray, form: FormField, q: int) -> FormField:
        return FormField(self.geom, q, apply_sitewise(M, form.comps, len(form.vshape)),
                         form.rank, form.twist)


def omega_power(metric: MetricField, k: int) -> FormField:
    """``omega^k`` (no factorial)."""
    if k == 0:
        return FormField(metric.geom, 0, np.ones((1,) + metric.geom.shape, complex))
    out = metric.omega
    for _ in range(k - 1):
        out = wedge(out, metric.omega)
    return out


def wedge_power_volume(metric: MetricField, k: int):
    """Return ``(omega^k / k!, density)``; density is ``dV/dx`` when ``k == n`` else ``None``."""
    n = metric.geom.n
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    form = omega_power(metric, k) * (1.0 / factorial(k))
    density = None
    if k == n:
        density = np.real(form.comps[0] * metric.coframe_det)
    return form, density


def lambda_contract(phi: FormField, metric: MetricField) -> np.ndarray:
    """``Lambda_omega`` of a (1,1)-form, returned as per-site scalar/endomorphism values.

    With the fixed normalisation, ``Lambda(i f dz^j ^ dzbar^j) = 2 f g^{jj}``.
    """
    if phi.p != 2:
        raise ValueError("lambda_contract expects a 2-form")
    n = metric.geom.n
    hol = [sum(1 for a in I if a < n) for I in basis(metric.geom.dim, 2)]
    if any(h != 1 and np.any(phi.comps[i] != 0) for i, h in enumerate(hol)):
        raise ValueError("lambda_contract expects a (1,1)-form")
    idx = basis_index(metric.geom.dim, 2)
    gi = metric.ginv
    out = 0
    for j in range(n):
        for k in range(n):
            c = -2j * gi[..., k, j]
            val = phi.comps[idx[(j, n + k)]]
            out = out + (c[..., None, None] * val if phi.rank is not None else c * val)
    return out


def metric_condition_check(metric: MetricField):
    """L2 norms of ``del delbar omega^{n-1}``, ``del delbar omega^{n-2}`` and ``d omega``.

    Powers that are undefined or constant for ``n <= 2`` give exactly zero.
    """
    n = metric.geom.n
    if n == 1:
        return 0.0, 0.0, 0.0
    w = omega_power(metric, n - 1)
    gaud = metric.l2_norm(dolbeault_derivative(dolbeault_derivative(w, "delbar"), "del"))
    astheno = 0.0
    if n >= 3:
        w2 = omega_power(metric, n - 2)
        astheno = metric.l2_norm(dolbeault_derivative(dolbeault_derivative(w2, "delbar"), "del"))
    kahler = metric.l2_norm(dolbeault_derivative(metric.omega, "d"))
    return gaud, astheno, kahler


def omega_norm(metric: MetricField) -> float:
    return metric.l2_norm(metric.omega)


def _ddbar_matrix(geom: GridGeometry, psi: np.ndarray) -> np.ndarray:
    n = geom.n
    out = np.empty(geom.shape + (n, n), complex)
    for j in range(n):
        dj = geom.partial(psi, j)
        for k in range(n):
            out[..., j, k] = geom.partial(dj, n + k)
    return out


def make_test_metric(geom: GridGeometry, kind: str = "kahler_flat", amplitude: float = 0.0,
                     seed: int = 0) -> MetricField:
    """Build a test metric.

    Kinds
    -----
    kahler_flat
        Identity.
    kahler_warped
        ``g = Id + ddbar psi`` for a smooth potential; closed fundamental form.
    gauduchon_nonkahler
        ``n = 2`` only.  ``g = Id + amplitude [[0, f], [conj f, 0]]`` with
        ``f = exp(2 pi i x^0 / p_0)``; ``del delbar omega = 0`` but ``d omega != 0``.
    hermitian_bump
        Conformal factor ``1 + amplitude b(x)`` with a random smooth ``b``;
        violates the Gauduchon condition when ``n = 2``.
    """
    n = geom.n
    x = geom.coords()
    p = geom.periods
    eye = np.broadcast_to(np.eye(n, dtype=complex), geom.shape + (n, n)).copy()
    if kind == "kahler_flat":
        g = eye
    elif kind == "kahler_warped":
        psi = sum(np.cos(2 * np.pi * x[2 * j] / p[2 * j]) for j in range(n))
        if n == 2:
            psi = psi + np.cos(2 * np.pi * (x[0] / p[0] + x[2] / p[2]))
        psi = amplitude / np.pi ** 2 * psi
        g = eye + _ddbar_matrix(geom, psi)
    elif kind == "gauduchon_nonkahler":
        if n != 2:
            raise MetricError("gauduchon_nonkahler requires n = 2")
        f = np.exp(2j * np.pi * x[0] / p[0])
        g = eye.copy()
        g[..., 0, 1] = amplitude * f
        g[..., 1, 0] = amplitude * np.conj(f)
    elif kind == "hermitian_bump":
        rng = np.random.default_rng(seed)
        b = np.zeros(geom.shape)
        for _ in range(3):
            k = rng.integers(-1, 2, size=geom.dim)
            if not k.any():
                k[0] = 1
            phase = rng.uniform(0, 2 * np.pi)
            b += np.cos(sum(2 * np.pi * k[m] * x[m] / p[m] for m in range(geom.dim)) + phase)
        b /= np.abs(b).max()
        g = eye * (1 + amplitude * b)[..., None, None]
    else:
        raise MetricError(f"unknown metric kind {kind!r}")
    try:
        return MetricField(geom, g)
    except MetricError as exc:
        raise MetricError(f"{kind} with amplitude {amplitude}: {exc}") from None
