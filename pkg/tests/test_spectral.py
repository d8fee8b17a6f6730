"""Spectral substrate: fields, multipliers, LP blocks, norms, IO."""

import math

import numpy as np
import pytest

from rcx.spectral import (
    CUTOFF_TABLE,
    Grid,
    MultiplierSpec,
    ParameterError,
    SpectralField,
    VectorField,
    apply_multiplier,
    besov_norm,
    derivative,
    load_field,
    lp_blocks,
    lp_project,
    lp_project_gt,
    lp_project_leq,
    save_field,
    smooth_cutoff,
    sobolev_norm,
)


def random_field(grid, rng, nmodes=64, kmax=None):
    """Hermitian field with random low modes (mean-free)."""
    coeff = np.zeros(grid.sizes, dtype=np.complex128)
    caps = [kmax or n // 3 for n in grid.sizes]
    for _ in range(nmodes):
        k = tuple(int(rng.integers(-c, c + 1)) for c in caps)
        if all(v == 0 for v in k):
            continue
        z = rng.standard_normal() + 1j * rng.standard_normal()
        pos = tuple(ki % n for ki, n in zip(k, grid.sizes))
        neg = tuple(-ki % n for ki, n in zip(k, grid.sizes))
        coeff[pos] += z
        coeff[neg] += np.conj(z)
    return SpectralField(grid, coeff)


class TestGrid:
    def test_valid(self):
        g = Grid((64, 32))
        assert g.dim == 2
        assert g.periods == (2 * math.pi, 2 * math.pi)
        assert g.npoints == 64 * 32

    @pytest.mark.parametrize("sizes", [(6, 8), (8, 12), (4, 4), (8, 8, 8, 8)])
    def test_invalid_sizes(self, sizes):
        with pytest.raises(ParameterError):
            Grid(sizes)

    def test_invalid_period(self):
        with pytest.raises(ParameterError):
            Grid((16, 16), (2 * math.pi, -1.0))

    def test_wavenumbers_integer_on_2pi(self):
        g = Grid((16,))
        np.testing.assert_allclose(np.sort(g.wavenumbers[0]), np.arange(-8, 8), atol=1e-12)

    def test_custom_period_rescales(self):
        g = Grid((16,), (math.pi,))
        assert math.isclose(np.max(np.abs(g.wavenumbers[0])), 16.0)


class TestSpectralField:
    def test_roundtrip_physical(self):
        g = Grid((32, 32))
        rng = np.random.default_rng(1)
        vals = rng.standard_normal(g.sizes)
        f = SpectralField.from_physical(g, vals)
        err = np.max(np.abs(f.physical() - vals)) / np.max(np.abs(vals))
        assert err <= 1e-12

    def test_hermitian_enforced(self):
        g = Grid((16, 16))
        bad = np.zeros(g.sizes, dtype=complex)
        bad[1, 0] = 1.0  # no conjugate partner
        with pytest.raises(ParameterError):
            SpectralField.from_coeff(g, bad)

    def test_mean_is_zero_mode(self):
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, 3.5 + np.sin(x1))
        assert math.isclose(f.mean, 3.5, rel_tol=1e-13)

    def test_immutability(self):
        g = Grid((16, 16))
        f = SpectralField.zero(g)
        with pytest.raises(ValueError):
            f.coeff[0, 0] = 1.0

    def test_physical_refined_matches_interpolant(self):
        g = Grid((16, 16))
        x1, x2 = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1) + np.cos(2 * x2))
        fine = f.physical_refined(4)
        xs = 2 * math.pi * np.arange(64) / 64
        X1, X2 = np.meshgrid(xs, xs, indexing="ij")
        expect = np.sin(X1) + np.cos(2 * X2)
        assert np.max(np.abs(fine - expect)) <= 1e-12


class TestMultipliers:
    def test_bracket_on_constant_is_identity(self):
        g = Grid((16, 16))
        one = SpectralField.from_physical(g, np.ones(g.sizes))
        for s in (-2.0, 0.5, 3.0):
            out = apply_multiplier(one, MultiplierSpec("inhomogeneous", order=s))
            assert abs(out.mean - 1.0) <= 1e-14
            assert abs(out.l2() - 1.0) <= 1e-14

    def test_homogeneous_square_is_minus_laplacian(self):
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1))
        out = apply_multiplier(f, MultiplierSpec("homogeneous", order=2.0))
        assert (out - f).l2() <= 1e-12

    def test_heat_half_life(self):
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1))
        out = apply_multiplier(f, MultiplierSpec("heat", param=math.log(2.0)))
        assert abs(out.l2() / f.l2() - 0.5) <= 1e-13

    def test_nonfinite_order_rejected(self):
        with pytest.raises(ParameterError):
            MultiplierSpec("inhomogeneous", order=float("nan"))

    def test_homogeneous_kills_mean(self):
        g = Grid((16, 16))
        f = SpectralField.from_physical(g, np.ones(g.sizes) * 2.0)
        out = apply_multiplier(f, MultiplierSpec("homogeneous", order=1.0))
        assert out.l2() <= 1e-15

    def test_composition_roundtrip(self):
        g = Grid((32, 32))
        f = random_field(g, np.random.default_rng(7))
        for s in (0.5, 1.0, 2.5):
            fwd = apply_multiplier(f, MultiplierSpec("inhomogeneous", order=s))
            back = apply_multiplier(fwd, MultiplierSpec("inhomogeneous", order=-s))
            assert (back - f).l2() / f.l2() <= 1e-12

    def test_derivative_of_sine(self):
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1))
        expect = SpectralField.from_physical(g, np.cos(x1))
        assert (derivative(f, 0) - expect).l2() <= 1e-13


class TestNorms:
    def test_constant_norm_one(self):
        g = Grid((16, 16))
        one = SpectralField.from_physical(g, np.ones(g.sizes))
        for s in (0.0, 1.0, 2.7):
            assert abs(sobolev_norm(one, s) - 1.0) <= 1e-14

    def test_sine_l2_closed_form(self):
        # oracle: (1/(2 pi)^2) integral of sin^2 = 1/2, quadrature on the nodes
        g = Grid((64, 64))
        x1, _ = g.meshgrid()
        vals = np.sin(x1)
        oracle = math.sqrt(float(np.mean(vals**2)))
        f = SpectralField.from_physical(g, vals)
        assert abs(sobolev_norm(f, 0.0) - oracle) <= 1e-13
        assert abs(oracle - 1.0 / math.sqrt(2.0)) <= 1e-13

    def test_sine_h1_weight(self):
        # modes |k| = 1 carry weight (1 + 1)^1 = 2: norm = sqrt(2) / sqrt(2) = 1
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1))
        assert abs(sobolev_norm(f, 1.0) - 1.0) <= 1e-13

    def test_parseval_random(self):
        g = Grid((64, 64))
        rng = np.random.default_rng(3)
        for _ in range(5):
            f = random_field(g, rng)
            phys_norm = math.sqrt(float(np.mean(f.physical() ** 2)))
            assert abs(phys_norm - f.l2()) / f.l2() <= 1e-12

    def test_homogeneous_vs_inhomogeneous(self):
        g = Grid((32, 32))
        f = random_field(g, np.random.default_rng(11))
        assert sobolev_norm(f, 1.0, homogeneous=True) <= sobolev_norm(f, 1.0)


class TestLittlewoodPaley:
    def test_cutoff_table_frozen(self):
        expect = smooth_cutoff(1.0 + np.arange(16) / 16.0)
        np.testing.assert_allclose(CUTOFF_TABLE, expect, rtol=0, atol=0)
        assert CUTOFF_TABLE[0] == 1.0
        assert all(b <= a for a, b in zip(CUTOFF_TABLE, CUTOFF_TABLE[1:]))

    def test_cutoff_endpoints(self):
        assert smooth_cutoff(np.array([0.0, 0.5, 1.0]))[2] == 1.0
        assert smooth_cutoff(np.array([2.0, 3.0]))[0] == 0.0

    def test_reconstruction_identity(self):
        g = Grid((64, 64))
        rng = np.random.default_rng(5)
        for _ in range(3):
            f = random_field(g, rng, nmodes=64, kmax=31)
            recon = lp_project_leq(f, 1)
            for n in lp_blocks(g):
                recon = recon + lp_project(f, n)
            assert (recon - f).l2() / f.l2() <= 1e-12

    def test_low_plus_high_identity(self):
        g = Grid((32, 32))
        f = random_field(g, np.random.default_rng(9))
        total = lp_project_leq(f, 4) + lp_project_gt(f, 4)
        assert (total - f).l2() / f.l2() <= 1e-13

    def test_sin4_blocks(self):
        # |k| = 4: cutoff gives P_4 at phi(1) - phi(2) = 1, P_8 at phi(1/2) - phi(1) = 0
        g = Grid((64, 64))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(4 * x1))
        p4 = lp_project(f, 4)
        p8 = lp_project(f, 8)
        assert ((p4 + p8) - f).l2() / f.l2() <= 1e-12
        for n in (2, 16, 32):
            assert lp_project(f, n).l2() <= 1e-12

    def test_bernstein_two_sided(self):
        # block-supported fields: support in (N/2, 2N) bounds D^s sharply
        g = Grid((128, 128))
        rng = np.random.default_rng(17)
        for n in (2, 4, 8, 16):
            f = lp_project(random_field(g, rng, nmodes=200, kmax=41), n)
            if f.l2() < 1e-10:
                continue
            for s in (0.5, 1.0, 2.0):
                ratio = sobolev_norm(f, s, homogeneous=True) / (n**s * f.l2())
                assert (0.5**s) - 1e-9 <= ratio <= (2.0**s) + 1e-9, (n, s, ratio)

    def test_above_nyquist_warns(self):
        g = Grid((16, 16))
        f = random_field(g, np.random.default_rng(2))
        with pytest.warns(RuntimeWarning):
            out = lp_project(f, 64)
        assert out.l2() <= 1e-12


class TestBesov:
    def test_constant(self):
        g = Grid((16, 16))
        one = SpectralField.from_physical(g, np.ones(g.sizes))
        for s in (0.0, 1.5):
            for q in (2, float("inf")):
                assert abs(besov_norm(one, s, q) - 1.0) <= 1e-12

    def test_single_mode_oracle(self):
        # oracle: build P_<=1 and block pieces by direct mode arithmetic
        g = Grid((32, 32))
        x1, _ = g.meshgrid()
        f = SpectralField.from_physical(g, np.sin(x1))
        # |k| = 1 sits entirely in the low piece (cutoff = 1 at 1, blocks vanish)
        assert abs(besov_norm(f, 2.0, 2) - 1.0) <= 1e-10
        assert abs(besov_norm(f, 2.0, float("inf")) - 1.0) <= 1e-10

    def test_monotonicity_linf_l2(self):
        g = Grid((64, 64))
        rng = np.random.default_rng(23)
        for _ in range(5):
            f = random_field(g, rng, nmodes=100)
            for s in (0.0, 1.0):
                assert besov_norm(f, s, float("inf")) <= besov_norm(f, s, 2) + 1e-12

    def test_unsupported_q(self):
        g = Grid((16, 16))
        f = SpectralField.zero(g)
        with pytest.raises(ParameterError):
            besov_norm(f, 1.0, 3)


class TestVectorField:
    def test_divergence_of_shear(self):
        g = Grid((32, 32))
        _, x2 = g.meshgrid()
        u = VectorField.from_physical(g, np.stack([np.sin(x2), np.zeros(g.sizes)]))
        assert u.divergence().l2() <= 1e-13

    def test_component_roundtrip(self):
        g = Grid((16, 16))
        rng = np.random.default_rng(4)
        f0, f1 = random_field(g, rng), random_field(g, rng)
        v = VectorField.from_components([f0, f1])
        assert (v.component(0) - f0).l2() <= 1e-15
        assert (v.component(1) - f1).l2() <= 1e-15


class TestSnapshotIO:
    def test_roundtrip_exact(self, tmp_path):
        g = Grid((16, 8), (2 * math.pi, 4.0))
        f = random_field(g, np.random.default_rng(8), nmodes=20, kmax=3)
        path = tmp_path / "field.rcxf"
        save_field(path, f)
        back = load_field(path)
        assert back.grid.sizes == g.sizes
        assert back.grid.periods == pytest.approx(g.periods)
        np.testing.assert_array_equal(back.coeff, f.coeff)

    def test_magic_check(self, tmp_path):
        p = tmp_path / "bad.rcxf"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParameterError):
            load_field(p)

    def test_3d_roundtrip(self, tmp_path):
        g = Grid((8, 8, 8))
        f = random_field(g, np.random.default_rng(12), nmodes=10, kmax=2)
        save_field(tmp_path / "f3.rcxf", f)
        back = load_field(tmp_path / "f3.rcxf")
        np.testing.assert_array_equal(back.coeff, f.coeff)
