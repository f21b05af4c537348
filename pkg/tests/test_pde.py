import math

import numpy as np
import pytest

from vidon import pde
from vidon.pde import AcWaveParams, GridField, StabilityError


def manufactured_darcy(n):
    """u* = sin(2 pi x) cos(2 pi y), a = 1 + 0.5 sin(2 pi x) sin(2 pi y),
    f = -div(a grad u*) computed analytically."""
    g = GridField(np.zeros((n, n)), 1.0)
    x, y = g.nodes()
    tp = 2 * math.pi
    u_star = np.sin(tp * x) * np.cos(tp * y)
    a = 1.0 + 0.5 * np.sin(tp * x) * np.sin(tp * y)
    a_x = math.pi * np.cos(tp * x) * np.sin(tp * y)
    a_y = math.pi * np.sin(tp * x) * np.cos(tp * y)
    u_x = tp * np.cos(tp * x) * np.cos(tp * y)
    u_y = -tp * np.sin(tp * x) * np.sin(tp * y)
    f = 8 * math.pi ** 2 * a * u_star - a_x * u_x - a_y * u_y
    return GridField(a, 1.0), GridField(f, 1.0), u_star


class TestDarcySolve:
    def test_laplace_eigenfunction(self):
        n = 64
        f = pde.darcy_forcing(n)
        a = GridField(np.ones((n, n)), 1.0)
        u = pde.darcy_solve(a, f)
        expected = f.values / (8 * math.pi ** 2)
        err = np.abs(u.values - expected).max() / np.abs(expected).max()
        assert err < 2e-3  # discretization error only

    def test_zero_forcing(self):
        n = 16
        a = GridField(np.ones((n, n)) + 0.2, 1.0)
        u = pde.darcy_solve(a, GridField(np.zeros((n, n)), 1.0))
        np.testing.assert_array_equal(u.values, np.zeros((n, n)))

    def test_second_order_convergence(self):
        errs = {}
        for n in (64, 128):
            a, f, u_star = manufactured_darcy(n)
            u = pde.darcy_solve(a, f)
            diff = u.values - (u_star - u_star.mean())
            errs[n] = math.sqrt((diff ** 2).mean())
        ratio = errs[64] / errs[128]
        assert 3.2 <= ratio <= 4.8

    def test_residual_and_mean_at_exit(self):
        n = 64
        a, f, _ = manufactured_darcy(n)
        u = pde.darcy_solve(a, f)
        res = pde.darcy_apply(a.values, u.values, 1.0 / n) - f.values
        res -= res.mean()   # solvable part of f only
        assert np.linalg.norm(res) / np.linalg.norm(f.values) < 1e-8
        assert abs(u.values.mean()) < 1e-12

    def test_linearity_in_forcing(self):
        n = 32
        a, f, _ = manufactured_darcy(n)
        u1 = pde.darcy_solve(a, f, tol=1e-12)
        u2 = pde.darcy_solve(a, GridField(3.0 * f.values, 1.0), tol=1e-12)
        assert np.abs(u2.values - 3.0 * u1.values).max() < 1e-10 * np.abs(u1.values).max() + 1e-10

    def test_positivity_guard(self):
        n = 8
        a = GridField(np.ones((n, n)), 1.0)
        a.values[3, 4] = -0.1
        with pytest.raises(ValueError):
            pde.darcy_solve(a, pde.darcy_forcing(n))

    def test_nonconvergence_reports_residual(self):
        n = 32
        a, f, _ = manufactured_darcy(n)
        with pytest.raises(pde.SolverError, match="residual"):
            pde.darcy_solve(a, f, max_iter=3)


class TestDarcySample:
    def test_determinism_and_positivity(self):
        a = pde.darcy_sample(np.random.default_rng(5), resolution=32, cutoff=6)
        b = pde.darcy_sample(np.random.default_rng(5), resolution=32, cutoff=6)
        assert a.a.values.tobytes() == b.a.values.tobytes()
        assert a.u.values.tobytes() == b.u.values.tobytes()
        assert a.a.values.min() > 0

    def test_min_coeff_positive_over_draws(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            spec_draw = pde.sample_grf(
                pde.GrfSpec(d=2, period=1.0, cutoff=4, zero_mean=True, **pde.DARCY_GRF), rng)
            assert np.exp(spec_draw.grid(16)).min() > 0

    def test_doubling_coefficient_halves_solution(self):
        s = pde.darcy_sample(np.random.default_rng(7), resolution=32, cutoff=6)
        doubled = pde.darcy_solve(GridField(2.0 * s.a.values, 1.0),
                                  pde.darcy_forcing(32), tol=1e-12)
        np.testing.assert_allclose(doubled.values, s.u.values / 2.0, atol=1e-9)

    def test_coeff_at_matches_grid(self):
        s = pde.darcy_sample(np.random.default_rng(8), resolution=16, cutoff=4)
        x, y = s.a.nodes()
        pts = np.column_stack([x.ravel(), y.ravel()])
        np.testing.assert_allclose(
            s.coeff_at(pts).reshape(16, 16), s.a.values, rtol=1e-10)


class TestAllenCahn:
    def test_half_on_the_front(self):
        w = AcWaveParams(0.15, 0.5, 0.5, 1.0, 0.0)
        # argument zero: x - o_x = 6 t at y arbitrary for c = (1, 0)
        t = 0.01
        assert pde.allen_cahn_eval(w, 0.5 + 6 * t, 1.3, t) == pytest.approx(0.5, abs=1e-14)

    def test_range_open_unit_interval(self):
        rng = np.random.default_rng(9)
        w = pde.sample_ac_params(rng)
        u = pde.allen_cahn_eval(w, rng.uniform(0, 2, 100), rng.uniform(0, 2, 100),
                                rng.uniform(0, 0.05, 100))
        assert np.all(u > 0) and np.all(u < 1)

    def test_travelling_wave_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            w = pde.sample_ac_params(rng)
            x, y = rng.uniform(0, 2, 2)
            t = rng.uniform(0, 0.05)
            moving = pde.allen_cahn_eval(w, x, y, t)
            shifted = pde.allen_cahn_eval(
                w, x - pde.AC_WAVE_SPEED * t * w.c_x,
                y - pde.AC_WAVE_SPEED * t * w.c_y, 0.0)
            assert abs(moving - shifted) < 1e-12

    def test_reflection_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            w = pde.sample_ac_params(rng)
            flipped = AcWaveParams(w.eps, 2.0 - w.o_x, w.o_y, -w.c_x, w.c_y)
            x, y, t = rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 0.05)
            assert pde.allen_cahn_eval(w, x, y, t) == pytest.approx(
                pde.allen_cahn_eval(flipped, 2.0 - x, y, t), rel=1e-12)

    def test_sample_slices_and_determinism(self):
        w1, u0, u = pde.allen_cahn_sample(np.random.default_rng(12), n_space=8, n_time=5)
        np.testing.assert_array_equal(u[:, :, 0], u0)
        w2, _, u_again = pde.allen_cahn_sample(np.random.default_rng(12), n_space=8, n_time=5)
        assert w1 == w2
        np.testing.assert_array_equal(u, u_again)

    def test_unit_direction_enforced(self):
        with pytest.raises(ValueError):
            AcWaveParams(0.15, 0.0, 0.0, 0.5, 0.5)


class TestNavierStokes:
    def test_zero_field_stays_zero(self):
        omega = GridField(np.zeros((16, 16)), 1.0)
        out = pde.ns_step(omega, 1e-3, 1e-2)
        np.testing.assert_array_equal(out.values, np.zeros((16, 16)))

    def test_taylor_green_decay(self):
        n = 64
        g = GridField(np.zeros((n, n)), 1.0)
        x, y = g.nodes()
        amp = -2.0 * (2 * math.pi) ** 2
        omega0 = GridField(amp * np.sin(2 * math.pi * x) * np.sin(2 * math.pi * y), 1.0)
        nu, t_final = 1e-3, 1.0
        final, _ = pde.ns_integrate(omega0, nu, t_final, cfl=0.4, n_checks=2)
        exact = omega0.values * math.exp(-8 * math.pi ** 2 * nu * t_final)
        rel = np.abs(final.values - exact).max() / np.abs(exact).max()
        assert rel < 1e-3

    def test_mean_conserved_per_step(self):
        rng = np.random.default_rng(13)
        spec = pde.GrfSpec(d=2, period=1.0, cutoff=6, zero_mean=False, **pde.NS_GRF)
        omega = GridField(pde.sample_grf(spec, rng).grid(32), 1.0)
        before = omega.values.mean()
        after = pde.ns_step(omega, 1e-3, 1e-3).values.mean()
        assert abs(after - before) < 1e-12

    def test_cfl_guard(self):
        n = 32
        g = GridField(np.zeros((n, n)), 1.0)
        x, y = g.nodes()
        omega = GridField(100.0 * np.sin(2 * math.pi * x) * np.sin(2 * math.pi * y), 1.0)
        with pytest.raises(StabilityError):
            pde.ns_step(omega, 1e-3, 10.0)

    def test_enstrophy_non_increasing(self):
        rng = np.random.default_rng(14)
        spec = pde.GrfSpec(d=2, period=1.0, cutoff=8, zero_mean=True, **pde.NS_GRF)
        omega = GridField(pde.sample_grf(spec, rng).grid(64), 1.0)
        z0 = pde.enstrophy(omega)
        omega1 = pde.ns_step(omega, 1e-3, 1e-3)
        assert pde.enstrophy(omega1) <= z0 * (1 + 1e-8)

    def test_sample_energy_decay_and_zero_mean(self):
        s = pde.ns_sample(np.random.default_rng(15), resolution=32, t_final=1.0, cutoff=8)
        _, energies = pde.ns_integrate(s.omega0, 1e-3, 1.0, n_checks=6)
        assert np.all(np.diff(energies) <= 1e-12)
        assert abs(s.omega_final.values.mean()) < 1e-10

    def test_sample_determinism(self):
        a = pde.ns_sample(np.random.default_rng(16), resolution=32, t_final=0.5, cutoff=6)
        b = pde.ns_sample(np.random.default_rng(16), resolution=32, t_final=0.5, cutoff=6)
        assert a.omega_final.values.tobytes() == b.omega_final.values.tobytes()
