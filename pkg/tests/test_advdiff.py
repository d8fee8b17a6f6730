"""Advection-diffusion: stepping oracles, dissipation times, fits."""

import math

import numpy as np
import pytest

from rcx.advdiff import (
    AdvDiffParams,
    AdvDiffStepper,
    HorizonError,
    KolmogorovFlow,
    ShearFlow,
    StepSizeError,
    StreamFlow,
    UnsupportedFlowError,
    dissipation_time,
    fit_decay_rate,
    fit_rate_exponent,
    hs_decay_constant,
    make_shear_velocity,
    predicted_rate_exponent,
    project_streamline_average,
    run_advdiff,
    shear_vanishing_order,
    step_advdiff,
    velocity_of,
)
from rcx.spectral import Grid, ParameterError, SpectralField, VectorField


def grid2(n=64):
    return Grid((n, n))


def sin_x1(grid):
    x1, _ = grid.meshgrid()
    return SpectralField.from_physical(grid, np.sin(x1))


def profile_field(n, fn):
    g = Grid((n,))
    return SpectralField.from_physical(g, fn(g.axis_points(0)))


class TestShearVelocity:
    def test_kolmogorov_is_sin_x2(self):
        g = grid2()
        U = make_shear_velocity(KolmogorovFlow(), g)
        _, x2 = g.meshgrid()
        np.testing.assert_allclose(U.physical()[0], np.sin(x2), atol=1e-13)
        np.testing.assert_allclose(U.physical()[1], 0.0, atol=1e-15)
        assert U.divergence().l2() <= 1e-13

    def test_cos_2x2_profile(self):
        g = grid2()
        prof = profile_field(64, lambda y: np.cos(2 * y))
        U = make_shear_velocity(ShearFlow(prof), g)
        _, x2 = g.meshgrid()
        np.testing.assert_allclose(U.physical()[0], np.cos(2 * x2), atol=1e-13)
        assert U.divergence().l2() <= 1e-13

    def test_zero_amplitude(self):
        g = grid2()
        U = make_shear_velocity(KolmogorovFlow(amplitude=0.0), g)
        assert U.l2() == 0.0

    def test_nonzero_mean_rejected(self):
        prof = profile_field(64, lambda y: 1.0 + np.sin(y))
        with pytest.raises(ParameterError):
            ShearFlow(prof)


class TestVanishingOrder:
    def test_sin_profile(self):
        assert shear_vanishing_order(profile_field(64, np.sin)) == 2

    def test_cos_profile(self):
        assert shear_vanishing_order(profile_field(64, np.cos)) == 2

    def test_mixed_profile_brute_force(self):
        # oracle: dense finite-difference scan of f' and f'' for
        # f(y) = sin(y) - sin(2 y)/8 confirms non-degenerate critical points
        yy = 2 * math.pi * np.arange(4096) / 4096
        h = yy[1] - yy[0]
        f = np.sin(yy) - np.sin(2 * yy) / 8.0
        fp = (np.roll(f, -1) - np.roll(f, 1)) / (2 * h)
        fpp = (np.roll(f, -1) - 2 * f + np.roll(f, 1)) / h**2
        crit = np.where(fp * np.roll(fp, -1) < 0)[0]
        assert len(crit) > 0
        assert np.min(np.abs(fpp[crit])) > 0.1
        prof = profile_field(64, lambda y: np.sin(y) - np.sin(2 * y) / 8.0)
        assert shear_vanishing_order(prof) == 2

    def test_higher_order_profile(self):
        # sin(y)^3 has f' = 3 sin^2 cos: at y = 0, f''=0, f'''=6 cos^3 != 0 -> order 3
        prof = profile_field(128, lambda y: np.sin(y) ** 3 - 0.0)
        assert shear_vanishing_order(prof) == 3

    def test_flat_profile_undetermined(self):
        prof = profile_field(64, lambda y: np.zeros_like(y))
        with pytest.raises(ParameterError):
            shear_vanishing_order(prof)


class TestRateExponent:
    @pytest.mark.parametrize("n0,expect", [(2, 0.5), (3, 0.6), (4, 2.0 / 3.0)])
    def test_values(self, n0, expect):
        assert math.isclose(predicted_rate_exponent(n0), expect, rel_tol=1e-15)

    def test_rejects_small(self):
        with pytest.raises(ParameterError):
            predicted_rate_exponent(1)


class TestStreamlineProjection:
    def test_constant_on_streamlines_killed(self):
        g = grid2()
        _, x2 = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x2))
        out = project_streamline_average(f, KolmogorovFlow())
        assert out.l2() <= 1e-14

    def test_zero_average_untouched(self):
        g = grid2()
        f = sin_x1(g)
        out = project_streamline_average(f, KolmogorovFlow())
        assert (out - f).l2() <= 1e-14

    def test_linearity(self):
        g = grid2()
        x1, x2 = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1) + np.cos(x2))
        out = project_streamline_average(f, KolmogorovFlow())
        assert (out - sin_x1(g)).l2() <= 1e-13

    def test_idempotent(self):
        g = grid2()
        f = SpectralField.from_physical(g, np.random.default_rng(0).standard_normal(g.sizes))
        once = project_streamline_average(f, KolmogorovFlow())
        twice = project_streamline_average(once, KolmogorovFlow())
        assert (twice - once).l2() <= 1e-14

    def test_non_shear_unsupported(self):
        g = grid2()
        psi = sin_x1(g)
        with pytest.raises(UnsupportedFlowError):
            project_streamline_average(sin_x1(g), StreamFlow(psi))


class TestStepping:
    def test_pure_diffusion_exact(self):
        g = grid2()
        eta, dt, nsteps = 0.1, 0.05, 40
        rho = sin_x1(g)
        U = VectorField.zero(g, 2)
        p = AdvDiffParams(eta=eta, dt=dt, T=dt)
        for _ in range(nsteps):
            rho = step_advdiff(rho, U, p)
        expect = math.exp(-eta * nsteps * dt) / math.sqrt(2.0)
        assert abs(rho.l2() - expect) <= 1e-13

    def test_constant_advection_closed_form(self):
        # oracle: characteristics give rho(t) = exp(-eta t) sin(x1 - t)
        g = grid2()
        eta, dt, t_end = 0.1, 1e-3, 0.5
        rho = sin_x1(g)
        U = VectorField.from_physical(g, np.stack([np.ones(g.sizes), np.zeros(g.sizes)]))
        p = AdvDiffParams(eta=eta, dt=dt, T=dt)
        for _ in range(round(t_end / dt)):
            rho = step_advdiff(rho, U, p)
        x1, _ = g.meshgrid()
        expect = math.exp(-eta * t_end) * np.sin(x1 - t_end)
        assert np.max(np.abs(rho.physical() - expect)) <= 1e-10

    def test_convergence_order_four(self):
        g = grid2(32)
        eta, t_end = 0.05, 1.0
        U = VectorField.from_physical(g, np.stack([np.ones(g.sizes), np.zeros(g.sizes)]))
        x1, _ = g.meshgrid()
        expect = math.exp(-eta * t_end) * np.sin(x1 - t_end)
        errs, dts = [], [0.005, 0.01, 0.02, 0.05]   # each divides the horizon exactly
        for dt in dts:
            rho = sin_x1(g)
            p = AdvDiffParams(eta=eta, dt=dt, T=dt)
            for _ in range(round(t_end / dt)):
                rho = step_advdiff(rho, U, p)
            errs.append(np.max(np.abs(rho.physical() - expect)))
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert abs(slope - 4.0) <= 0.3

    def test_mean_conserved_exactly(self):
        g = grid2()
        x1, x2 = g.meshgrid()
        f = SpectralField.from_physical(g, 2.0 + np.sin(x1) * np.cos(x2))
        U = velocity_of(KolmogorovFlow(), g)
        stepper = AdvDiffStepper(U, 1e-3, 0.02)
        coeff = f.coeff.copy()
        for _ in range(50):
            coeff = stepper.step(coeff)
        assert abs(coeff[0, 0].real - 2.0) <= 1e-13

    def test_energy_non_increasing(self):
        g = grid2()
        rng = np.random.default_rng(21)
        coeff = np.zeros(g.sizes, dtype=complex)
        for _ in range(32):
            k = (int(rng.integers(-10, 11)), int(rng.integers(-10, 11)))
            if k == (0, 0):
                continue
            z = rng.standard_normal() + 1j * rng.standard_normal()
            coeff[k[0] % 64, k[1] % 64] += z
            coeff[-k[0] % 64, -k[1] % 64] += np.conj(z)
        U = velocity_of(KolmogorovFlow(), g)
        stepper = AdvDiffStepper(U, 1e-3, 0.02)
        prev = float(np.sum(np.abs(coeff) ** 2))
        for _ in range(100):
            coeff = stepper.step(coeff)
            cur = float(np.sum(np.abs(coeff) ** 2))
            assert cur <= prev * (1.0 + 1e-10)
            prev = cur

    def test_poincare_envelope(self):
        g = grid2()
        x1, x2 = g.meshgrid()
        rho0 = SpectralField.from_physical(g, np.sin(x1) + 0.5 * np.cos(3 * x2))
        eta = 1e-2
        p = AdvDiffParams(eta=eta, dt=0.02, T=5.0, cadence=10)
        trace = run_advdiff(rho0, KolmogorovFlow(), p)
        envelope = np.exp(-eta * trace.times) * trace.l2[0]
        assert np.all(trace.l2 <= envelope * (1.0 + 1e-10))

    def test_hshear_invariance(self):
        # projecting then evolving equals evolving then projecting for shears
        g = grid2()
        rng = np.random.default_rng(31)
        vals = rng.standard_normal(g.sizes)
        f = SpectralField.from_physical(g, vals - vals.mean())
        flow = KolmogorovFlow()
        U = velocity_of(flow, g)
        stepper = AdvDiffStepper(U, 1e-3, 0.02)

        def evolve(field, nsteps=25):
            c = field.coeff.copy()
            for _ in range(nsteps):
                c = stepper.step(c)
            return SpectralField(g, c)

        a = evolve(project_streamline_average(f, flow))
        b = project_streamline_average(evolve(f), flow)
        assert (a - b).l2() <= 1e-10 * max(1.0, f.l2())

    def test_cfl_violation_raises(self):
        g = grid2()
        U = VectorField.from_physical(g, np.stack([10.0 * np.ones(g.sizes), np.zeros(g.sizes)]))
        with pytest.raises(StepSizeError) as info:
            AdvDiffStepper(U, 1e-3, 0.1)
        assert info.value.suggested_dt < 0.1


class TestDissipationTime:
    def test_heat_halving(self):
        g = grid2()
        for eta in (1e-1, 1e-2):
            td = dissipation_time(sin_x1(g), VectorField.zero(g, 2), eta,
                                  dt=1e-3 * math.log(2.0) / eta, cadence=5)
            assert abs(td - math.log(2.0) / eta) / (math.log(2.0) / eta) <= 1e-3

    def test_zero_initial_rejected(self):
        g = grid2()
        with pytest.raises(ParameterError):
            dissipation_time(SpectralField.zero(g), VectorField.zero(g, 2), 0.1, 0.01)

    def test_horizon_exceeded(self):
        g = grid2()
        with pytest.raises(HorizonError) as info:
            dissipation_time(sin_x1(g), VectorField.zero(g, 2), 1e-3, dt=0.05,
                             horizon=1.0)
        assert 0.9 <= info.value.final_ratio <= 1.0

    def test_mean_free_required(self):
        g = grid2()
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, 1.0 + np.sin(x1))
        with pytest.raises(ParameterError):
            dissipation_time(f, VectorField.zero(g, 2), 0.1, 0.01)


class TestFits:
    def test_diffusive_exponent(self):
        g = grid2()
        etas = [1e-1, 1e-2, 1e-3, 1e-4]
        fit = fit_rate_exponent(VectorField.zero(g, 2), etas, sin_x1(g),
                                dt=lambda e: 1e-3 * math.log(2.0) / e,
                                horizon=lambda e: 1.5 * math.log(2.0) / e)
        assert abs(fit.exponent - 1.0) <= 0.02
        assert fit.r2 > 0.999

    def test_too_few_etas(self):
        g = grid2()
        with pytest.raises(ParameterError):
            fit_rate_exponent(VectorField.zero(g, 2), [1e-2], sin_x1(g))

    def test_narrow_span_rejected(self):
        g = grid2()
        with pytest.raises(ParameterError):
            fit_rate_exponent(VectorField.zero(g, 2), [1e-2, 2e-2, 4e-2, 8e-2], sin_x1(g))

    def test_decay_rate_heat(self):
        g = grid2()
        eta = 0.05
        p = AdvDiffParams(eta=eta, dt=0.05, T=20.0, cadence=4)
        trace = run_advdiff(sin_x1(g), VectorField.zero(g, 2), p)
        lam, ok = fit_decay_rate(trace, (0.0, 20.0))
        assert ok
        assert abs(lam - eta) / eta <= 1e-6

    def test_decay_rate_needs_samples(self):
        g = grid2()
        p = AdvDiffParams(eta=0.1, dt=0.05, T=1.0, cadence=100)
        trace = run_advdiff(sin_x1(g), VectorField.zero(g, 2), p)
        with pytest.raises(ParameterError):
            fit_decay_rate(trace, (0.0, 1.0))


class TestHsConstant:
    def test_heat_single_mode_is_one(self):
        g = grid2()
        eta = 0.05
        res = hs_decay_constant(sin_x1(g), VectorField.zero(g, 2), eta, s=2.0,
                                lam=eta, T=10.0, dt=0.05)
        assert abs(res["constant"] - 1.0) <= 1e-10
        assert not res["envelope_violation"]

    def test_overshooting_lambda_flagged(self):
        g = grid2()
        eta = 0.05
        res = hs_decay_constant(sin_x1(g), VectorField.zero(g, 2), eta, s=0.0,
                                lam=10.0 * eta, T=40.0, dt=0.05)
        assert res["envelope_violation"]


class TestTraceCsv:
    def test_write_and_header(self, tmp_path):
        g = grid2(32)
        p = AdvDiffParams(eta=0.1, dt=0.05, T=1.0, cadence=5)
        trace = run_advdiff(sin_x1(g), KolmogorovFlow(), p, s_list=(1.0, 2.0))
        path = tmp_path / "trace.csv"
        trace.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("#")
        assert "eta=0.1" in lines[0]
        assert lines[1] == "t,l2,h1,h2"
        assert len(lines) == 2 + len(trace.times)
