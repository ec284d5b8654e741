"""Differential forms on the lattice in the complex coframe.

A p-form is stored as one array per strictly increasing index tuple over the
coframe ``(dz^1..dz^n, dzbar^1..dzbar^n)``, stacked along a leading axis in
lexicographic order.  Values are scalars or ``r x r`` endomorphisms.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np


@lru_cache(maxsize=None)
def basis(dim: int, p: int) -> tuple:
    return tuple(combinations(range(dim), p))


@lru_cache(maxsize=None)
def basis_index(dim: int, p: int) -> dict:
    return {I: k for k, I in enumerate(basis(dim, p))}


def _merge_sign(I, J):
    """Sign of the permutation sorting ``I + J``; 0 if they overlap."""
    if set(I) & set(J):
        return 0
    seq = list(I) + list(J)
    inversions = sum(1 for x in range(len(seq)) for y in range(x + 1, len(seq)) if seq[x] > seq[y])
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def wedge_table(dim: int, p: int, q: int) -> tuple:
    """Entries ``(i, j, k, sign)`` with ``e^{I_i} ^ e^{J_j} = sign e^{K_k}``."""
    if p + q > dim:
        return ()
    kidx = basis_index(dim, p + q)
    out = []
    for i, I in enumerate(basis(dim, p)):
        for j, J in enumerate(basis(dim, q)):
            s = _merge_sign(I, J)
            if s:
                out.append((i, j, kidx[tuple(sorted(I + J))], s))
    return tuple(out)


@lru_cache(maxsize=None)
def complement_table(dim: int, p: int) -> tuple:
    """Entries ``(i, k, sign)`` with ``e^{I_i} ^ e^{I_i^c} = sign e^{all}``."""
    kidx = basis_index(dim, dim - p)
    out = []
    for i, I in enumerate(basis(dim, p)):
        Ic = tuple(a for a in range(dim) if a not in I)
        out.append((i, kidx[Ic], _merge_sign(I, Ic)))
    return tuple(out)


def vproduct(x, y, xv, yv):
    """Product of per-site values: scalar or matrix on either side."""
    if xv and yv:
        return x @ y
    if xv:
        return x * y[..., None, None]
    if yv:
        return x[..., None, None] * y
    return x * y


class FormField:
    """Scalar- or endomorphism-valued p-form on a :class:`GridGeometry`.

    ``twist`` optionally records an integer flux vector for quasi-periodic
    fields; it is additive under wedge products.
    """

    def __init__(self, geom, p, comps, rank=None, twist=None):
        self.geom = geom
        self.p = p
        self.comps = comps
        self.rank = rank
        self.twist = None if twist is None else tuple(int(t) for t in twist)
        expected = (len(basis(geom.dim, p)),) + geom.shape + self.vshape
        if comps.shape != expected:
            raise ValueError(f"form components have shape {comps.shape}, expected {expected}")

    # -- construction -----------------------------------------------------
    @property
    def vshape(self) -> tuple:
        return () if self.rank is None else (self.rank, self.rank)

    @classmethod
    def zeros(cls, geom, p, rank=None):
        vs = () if rank is None else (rank, rank)
        return cls(geom, p, np.zeros((len(basis(geom.dim, p)),) + geom.shape + vs, complex), rank)

    @classmethod
    def from_components(cls, geom, p, entries: dict, rank=None):
        """Build from ``{index_tuple: array}``; tuples need not be sorted."""
        out = cls.zeros(geom, p, rank)
        idx = basis_index(geom.dim, p)
        for key, val in entries.items():
            key = tuple(key)
            if len(set(key)) != len(key):
                continue
            out.comps[idx[tuple(sorted(key))]] += _perm_sign(key) * np.broadcast_to(
                val, out.comps.shape[1:])
        return out

    def like(self, comps, p=None):
        return FormField(self.geom, self.p if p is None else p, comps, self.rank, self.twist)

    def __getitem__(self, key):
        key = tuple(key)
        if len(set(key)) != len(key):
            return np.zeros(self.comps.shape[1:], complex)
        return _perm_sign(key) * self.comps[basis_index(self.geom.dim, self.p)[tuple(sorted(key))]]

    # -- linear structure ---------------------------------------------------
    def __add__(self, other):
        _check_same(self, other)
        return self.like(self.comps + other.comps)

    def __sub__(self, other):
        _check_same(self, other)
        return self.like(self.comps - other.comps)

    def __neg__(self):
        return self.like(-self.comps)

    def __mul__(self, c):
        if np.isscalar(c):
            return self.like(self.comps * c)
        return NotImplemented

    __rmul__ = __mul__

    def scale(self, f: np.ndarray):
        """Multiply by a per-site scalar field."""
        f = np.asarray(f)
        return self.like(self.comps * f.reshape((1,) + f.shape + (1,) * len(self.vshape)))

    def conj(self):
        """Complex conjugate form (swaps dz and dzbar, conjugates values)."""
        n = self.geom.n
        swap = [a + n if a < n else a - n for a in range(2 * n)]
        entries = {}
        for I in basis(self.geom.dim, self.p):
            vals = self.comps[basis_index(self.geom.dim, self.p)[I]]
            entries[tuple(swap[a] for a in I)] = np.conj(vals)
        return FormField.from_components(self.geom, self.p, entries, self.rank)

    def dagger(self):
        """Hermitian adjoint of the form: conjugate form with transposed values."""
        out = self.conj()
        if self.rank is not None:
            out.comps = np.swapaxes(out.comps, -1, -2)
        return out

    def bidegree_part(self, pq):
        """Projection onto the (p, q) component."""
        p_hol = pq[0]
        n = self.geom.n
        keep = np.array([sum(1 for a in I if a < n) == p_hol for I in basis(self.geom.dim, self.p)])
        comps = self.comps * keep.reshape((-1,) + (1,) * (self.comps.ndim - 1))
        return self.like(comps)

    def l2_norm_flat(self) -> float:
        """Coefficient L2 norm with unit coframe weights (metric-free)."""
        return float(np.sqrt(np.sum(np.abs(self.comps) ** 2) * self.geom.cell_volume))

    def trace(self):
        if self.rank is None:
            return self
        return FormField(self.geom, self.p, np.trace(self.comps, axis1=-2, axis2=-1), None, self.twist)


def _perm_sign(seq) -> int:
    seq = list(seq)
    inv = sum(1 for x in range(len(seq)) for y in range(x + 1, len(seq)) if seq[x] > seq[y])
    return -1 if inv % 2 else 1


def _check_same(a, b):
    if a.p != b.p or a.rank != b.rank or a.geom is not b.geom and a.geom.shape != b.geom.shape:
        raise ValueError("form fields are incompatible")


def _add_twist(a, b):
    if a is None and b is None:
        return None
    ta = np.zeros_like(b) if a is None else np.asarray(a)
    tb = np.zeros_like(ta) if b is None else np.asarray(b)
    return tuple(int(v) for v in ta + tb)


def scalar_function(geom, f, rank=None) -> FormField:
    """Wrap a per-site scalar (or endomorphism if ``rank``) function as a 0-form."""
    f = np.asarray(f, dtype=complex)
    return FormField(geom, 0, f[None].copy(), rank)


def wedge(alpha: FormField, beta: FormField) -> FormField:
    """Exterior product; endomorphism values multiply as matrices (left to right)."""
    geom = alpha.geom
    p, q = alpha.p, beta.p
    rank = alpha.rank if alpha.rank is not None else beta.rank
    out = FormField.zeros(geom, p + q, rank) if p + q <= geom.dim else None
    if out is None:
        raise ValueError("wedge degree exceeds the manifold dimension")
    xv, yv = alpha.rank is not None, beta.rank is not None
    for i, j, k, s in wedge_table(geom.dim, p, q):
        out.comps[k] += s * vproduct(alpha.comps[i], beta.comps[j], xv, yv)
    out.twist = _add_twist(alpha.twist, beta.twist)
    return out


def graded_commutator(alpha: FormField, beta: FormField) -> FormField:
    """``[alpha ^ beta] = alpha^beta - (-1)^{pq} beta^alpha``."""
    sign = -1 if (alpha.p * beta.p) % 2 else 1
    return wedge(alpha, beta) - wedge(beta, alpha) * sign


def coframe_derivative(form: FormField, directions) -> FormField:
    """``sum_a e^a ^ d_a form`` over the given complex directions."""
    geom = form.geom
    if form.p + 1 > geom.dim:
        raise ValueError("derivative of a top-degree form")
    out = FormField.zeros(geom, form.p + 1, form.rank)
    directions = list(directions)
    grads = geom.gradient(form.comps, first_axis=1, directions=directions)
    pos = {a: k for k, a in enumerate(directions)}
    for i, j, k, s in wedge_table(geom.dim, 1, form.p):
        a = basis(geom.dim, 1)[i][0]
        if a in pos:
            out.comps[k] += s * grads[pos[a], j]
    out.twist = form.twist
    return out


def dolbeault_derivative(form: FormField, kind: str) -> FormField:
    """Apply ``d``, ``del`` (kind ``'del'``) or ``delbar`` (kind ``'delbar'``)."""
    n = form.geom.n
    if kind in ("del", "d10", "∂"):
        return coframe_derivative(form, range(n))
    if kind in ("delbar", "d01", "∂̄"):
        return coframe_derivative(form, range(n, 2 * n))
    if kind == "d":
        return coframe_derivative(form, range(2 * n))
    raise ValueError(f"unknown derivative kind {kind!r}")


def covariant_derivative(form: FormField, A: FormField, directions=None) -> FormField:
    """``D_A form = d form + [A ^ form]`` restricted to the given directions.

    ``form`` is endomorphism-valued (adjoint bundle); ``A`` is an
    endomorphism-valued 1-form.
    """
    n = form.geom.n
    if directions is None:
        directions = range(2 * n)
    directions = list(directions)
    mask = np.zeros(2 * n, bool)
    mask[directions] = True
    A_part = A.like(A.comps * mask.reshape((-1,) + (1,) * (A.comps.ndim - 1)))
    return coframe_derivative(form, directions) + graded_commutator(A_part, form)
