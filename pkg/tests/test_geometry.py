import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hymflow.geometry import (FormField, GeometryError, MetricError, MetricField, build_torus_geometry,
                              dolbeault_derivative, lambda_contract, make_test_metric,
                              metric_condition_check, omega_norm, scalar_function, tau_adjoint,
                              tau_adjoint_direct, torsion_adjoint_apply, wedge, wedge_power_volume)
from hymflow.geometry.forms import basis

from conftest import band_limited


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestGrid:
    def test_sites_and_radius(self):
        g = build_torus_geometry(1, 16, [1, 1])
        assert g.sites == 256
        assert g.injectivity_radius == 0.5
        assert build_torus_geometry(2, 8).sites == 4096

    def test_radius_uses_smallest_period(self):
        g = build_torus_geometry(1, 16, [2.0, 0.6])
        assert g.injectivity_radius == pytest.approx(0.3)
        assert g.spacing == pytest.approx((2.0 / 16, 0.6 / 16))

    @pytest.mark.parametrize("n,N,periods", [(1, 7, None), (1, 12, None), (1, 4, None), (3, 8, None),
                                             (1, 16, [1, -1]), (1, 16, [1, 1, 1])])
    def test_rejects_bad_input(self, n, N, periods):
        with pytest.raises(GeometryError):
            build_torus_geometry(n, N, periods)


class TestDolbeault:
    def test_constant_has_no_derivative(self, geom1):
        f = scalar_function(geom1, np.full(geom1.shape, 3.0 + 1j))
        assert np.abs(dolbeault_derivative(f, "delbar").comps).max() < 1e-13

    def test_exponential_mode(self, geom1):
        x = geom1.coords()
        u = np.exp(2j * np.pi * x[0])
        d = dolbeault_derivative(scalar_function(geom1, u), "del").comps[0]
        # d/dz = (d/dx - i d/dy)/2 applied to exp(2 pi i x)
        assert np.abs(d - np.pi * 1j * u).max() < 1e-12
        dbar = dolbeault_derivative(scalar_function(geom1, u), "delbar").comps[1]
        assert np.abs(dbar - np.pi * 1j * u).max() < 1e-12

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1), p=st.integers(0, 2))
    def test_squares_vanish(self, geom2_small, seed, p):
        g = geom2_small
        m = len(basis(g.dim, p))
        comps = np.stack([band_limited(g, seed + i) for i in range(m)])
        w = FormField(g, p, comps)
        scale = np.linalg.norm(comps) * (2 * np.pi * 2) ** 2
        for kind in ("del", "delbar"):
            dd = dolbeault_derivative(dolbeault_derivative(w, kind), kind)
            assert np.linalg.norm(dd.comps) <= 1e-10 * scale
        mixed = (dolbeault_derivative(dolbeault_derivative(w, "del"), "delbar")
                 + dolbeault_derivative(dolbeault_derivative(w, "delbar"), "del"))
        assert np.linalg.norm(mixed.comps) <= 1e-10 * scale

    def test_spectral_convergence(self):
        errors = []
        for N in (8, 16, 32):
            g = build_torus_geometry(1, N)
            x = g.coords()
            u = np.exp(np.sin(2 * np.pi * x[0]))
            exact = 0.5 * 2 * np.pi * np.cos(2 * np.pi * x[0]) * u
            errors.append(np.abs(g.partial(u.astype(complex), 0) - exact).max())
        assert errors[1] < errors[0] / 100 and errors[2] < 1e-12


class TestMetric:
    @pytest.mark.parametrize("kind,amp", [("kahler_flat", 0), ("kahler_warped", 0.1),
                                          ("gauduchon_nonkahler", 0.2), ("hermitian_bump", 0.3)])
    def test_lambda_omega_is_n(self, geom2_small, kind, amp):
        m = make_test_metric(geom2_small, kind, amp)
        assert np.abs(lambda_contract(m.omega, m) - 2).max() < 1e-12
        assert np.abs(m.contract(m.omega).comps[0] - 2).max() < 1e-12
        assert m.det.min() > 0

    def test_lambda_normalisation(self, geom1):
        m = make_test_metric(geom1, "kahler_flat")
        f = np.real(band_limited(geom1, 3))
        phi = FormField.from_components(geom1, 2, {(0, 1): 1j * f})
        # omega = (i/2) dz ^ dzbar has Lambda = 1, so i f dz ^ dzbar contracts to 2 f
        assert np.abs(lambda_contract(phi, m) - 2 * f).max() < 1e-13

    def test_lambda_of_zero_and_bad_input(self, geom2_small):
        m = make_test_metric(geom2_small, "kahler_flat")
        assert np.abs(lambda_contract(FormField.zeros(geom2_small, 2), m)).max() == 0
        bad = FormField.from_components(geom2_small, 2, {(0, 1): np.ones(geom2_small.shape)})
        with pytest.raises(ValueError):
            lambda_contract(bad, m)

    def test_volume_forms(self, geom1, geom2_small):
        m = make_test_metric(geom1, "kahler_flat")
        form, dens = wedge_power_volume(m, 1)
        assert np.allclose(dens, 1.0)
        form0, dens0 = wedge_power_volume(m, 0)
        assert np.allclose(form0.comps, 1.0) and dens0 is None
        with pytest.raises(ValueError):
            wedge_power_volume(m, 2)
        g = np.broadcast_to(np.diag([1.0, 2.0]).astype(complex), geom2_small.shape + (2, 2)).copy()
        m2 = MetricField(geom2_small, g)
        assert m2.volume == pytest.approx(2.0, rel=1e-14)
        _, d2 = wedge_power_volume(m2, 2)
        assert np.allclose(d2, np.linalg.det(g).real)

    def test_star_one_is_volume(self, geom2_small):
        m = make_test_metric(geom2_small, "hermitian_bump", 0.3)
        one = FormField(geom2_small, 0, np.ones((1,) + geom2_small.shape, complex))
        star = m.hodge_star(one).comps[0] * m.coframe_det
        assert np.abs(star - m.det).max() < 1e-12

    def test_condition_examples(self, geom2):
        flat = make_test_metric(geom2, "kahler_flat")
        assert metric_condition_check(flat) == (0.0, 0.0, 0.0)
        gm = make_test_metric(geom2, "gauduchon_nonkahler", 0.1)
        gaud, ast, kah = metric_condition_check(gm)
        w = omega_norm(gm)
        assert gaud <= 1e-8 * w and ast == 0.0 and kah > 0.01 * w
        bump = make_test_metric(geom2, "hermitian_bump", 0.2)
        assert metric_condition_check(bump)[0] > 1e-3
        warped = make_test_metric(geom2, "kahler_warped", 0.1)
        assert max(metric_condition_check(warped)) <= 1e-10 * omega_norm(warped)

    def test_gauduchon_amplitude_zero_is_flat(self, geom2_small):
        m = make_test_metric(geom2_small, "gauduchon_nonkahler", 0.0)
        assert np.array_equal(m.g, make_test_metric(geom2_small, "kahler_flat").g)

    def test_n1_conventions(self, geom1):
        m = make_test_metric(geom1, "hermitian_bump", 0.3)
        assert metric_condition_check(m) == (0.0, 0.0, 0.0)
        with pytest.raises(MetricError):
            make_test_metric(geom1, "gauduchon_nonkahler", 0.1)

    def test_positivity_failure(self, geom2_small):
        with pytest.raises(MetricError):
            make_test_metric(geom2_small, "gauduchon_nonkahler", 1.5)


class TestTorsion:
    def _forms(self, geom, seed):
        comps = np.stack([band_limited(geom, seed + i, rank=2) for i in range(len(basis(geom.dim, 2)))])
        return FormField(geom, 2, comps, rank=2)

    def test_vanishes_on_kahler(self, geom2_small):
        m = make_test_metric(geom2_small, "kahler_warped", 0.1)
        F = self._forms(geom2_small, 1)
        T = torsion_adjoint_apply(F, m)
        assert np.linalg.norm(T.comps) <= 1e-10 * np.linalg.norm(F.comps)

    def test_zero_form(self, geom2_small):
        m = make_test_metric(geom2_small, "gauduchon_nonkahler", 0.2)
        assert np.abs(torsion_adjoint_apply(FormField.zeros(geom2_small, 2, 2), m).comps).max() == 0

    @pytest.mark.parametrize("kind", ["gauduchon_nonkahler", "hermitian_bump"])
    @pytest.mark.parametrize("conjugate", [False, True])
    def test_closed_formula_matches_commutator(self, geom2_small, kind, conjugate):
        m = make_test_metric(geom2_small, kind, 0.2)
        for F in (m.omega, self._forms(geom2_small, 7)):
            a = tau_adjoint(F, m, conjugate).comps
            b = tau_adjoint_direct(F, m, conjugate).comps
            assert np.abs(b).max() > 1e-3
            assert rel(a, b) < 1e-12

    def test_n1_has_no_torsion(self, geom1):
        m = make_test_metric(geom1, "hermitian_bump", 0.3)
        F = FormField.from_components(geom1, 2, {(0, 1): band_limited(geom1, 2)})
        assert np.abs(torsion_adjoint_apply(F, m).comps).max() == 0


class TestForms:
    def test_twist_adds_under_wedge(self, geom1):
        a = FormField(geom1, 1, np.zeros((2,) + geom1.shape, complex), twist=(1,))
        b = FormField(geom1, 1, np.zeros((2,) + geom1.shape, complex), twist=(-3,))
        assert wedge(a, b).twist == (-2,)

    def test_antisymmetry(self, geom2_small):
        f = band_limited(geom2_small, 5)
        w = FormField.from_components(geom2_small, 2, {(2, 0): f})
        assert np.array_equal(w[(0, 2)], -f)
        assert np.array_equal(w[(2, 0)], f)
        assert np.abs(w[(1, 1)]).max() == 0

    def test_conjugate_swaps_types(self, geom2_small):
        f = band_limited(geom2_small, 6)
        w = FormField.from_components(geom2_small, 1, {(0,): f})
        c = w.conj()
        assert np.array_equal(c[(2,)], np.conj(f)) and np.abs(c[(0,)]).max() == 0
