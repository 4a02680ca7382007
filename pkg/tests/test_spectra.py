import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from sparsemp.ensemble import Distribution, EnsembleParams, sample_matrix
from sparsemp.errors import DataError, NumericalError, ParameterError
from sparsemp.law import LawParams, edge_newton
from sparsemp.spectra import (
    Spectrum,
    counting,
    delocalization_parts,
    delocalization_stat,
    eigenvalues,
    empirical_stieltjes,
    linearized_green,
    onatski_R,
    read_spectrum_csv,
    write_spectrum_csv,
)


def spec_of(values, M=None):
    lam = np.sort(np.asarray(values, dtype=float))[::-1]
    return Spectrum(lam, M or len(lam), len(lam))


class TestEigenvalues:
    def test_scalar(self):
        assert eigenvalues(np.array([[3.0]])).lambdas.tolist() == [9.0]

    def test_zero(self):
        assert np.all(eigenvalues(np.zeros((3, 5))).lambdas == 0)

    def test_rank_padding_and_trace(self):
        P = EnsembleParams(N=300, M=100, p=0.05, seed=1)
        for trial in range(3):
            X = sample_matrix(P, trial).entries
            spec = eigenvalues(X)
            assert len(spec.lambdas) == 300
            assert np.all(spec.lambdas[100:] == 0.0)
            assert np.all(spec.lambdas[:100] > 0)
            assert np.all(np.diff(spec.lambdas) <= 0)
            assert spec.lambdas.sum() == pytest.approx((X**2).sum(), rel=1e-10)

    def test_matches_gram_eigenvalues(self):
        X = sample_matrix(EnsembleParams(N=60, M=40, p=0.2, seed=2)).entries
        ref = np.sort(np.linalg.eigvalsh(X.T @ X))[::-1]
        np.testing.assert_allclose(eigenvalues(X).lambdas[:40], ref[:40], atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(DataError):
            eigenvalues(np.array([[1.0, np.nan]]))

    @given(arrays(float, (4, 6), elements=st.floats(-10, 10)))
    @settings(max_examples=100, deadline=None)
    def test_trace_identity(self, X):
        lam = eigenvalues(X).lambdas
        assert lam.sum() == pytest.approx((X**2).sum(), rel=1e-10, abs=1e-10)
        assert np.all(lam[4:] == 0)


class TestStieltjes:
    def test_examples(self):
        assert empirical_stieltjes(spec_of([1.0]), 1j) == pytest.approx((1 + 1j) / 2)
        assert empirical_stieltjes(spec_of([0.0, 0.0]), 1j) == pytest.approx(1j)

    @given(arrays(float, 7, elements=st.floats(0, 50)), st.floats(-5, 60), st.floats(1e-6, 10))
    @settings(max_examples=100, deadline=None)
    def test_positivity(self, lam, E, eta):
        assert empirical_stieltjes(spec_of(lam), complex(E, eta)).imag > 0

    def test_vectorised(self):
        spec = spec_of([3.0, 1.0, 0.5])
        Z = np.array([1j, 2 + 0.1j, -1 + 2j])
        np.testing.assert_allclose(empirical_stieltjes(spec, Z), [empirical_stieltjes(spec, z) for z in Z])


class TestLinearisation:
    def test_scalar_by_hand(self):
        g = linearized_green(np.array([[1.0]]), 1j)
        assert g.G_TT[0, 0] == pytest.approx((1 + 1j) / 2)
        assert g.G_TbarTbar[0, 0] == pytest.approx((1j - 1) / 2)

    def test_schur_identities(self):
        rng = np.random.default_rng(0)
        L = edge_newton(LawParams(d=2, q=10, s4=1)).L
        for k in range(20):
            N = int(rng.integers(50, 700))
            M = int(rng.integers(10, min(N, 1200 - N) + 1))
            P = EnsembleParams(N=N, M=M, p=float(rng.uniform(0.02, 0.5)), seed=k)
            X = sample_matrix(P).entries
            spec = eigenvalues(X)
            for z in (1j, 2 + 0.1j, L + 1e-2j):
                g = linearized_green(X, z)
                assert abs(g.m_bar - (z * g.m + 1 - M / N)) < 1e-10
                assert g.schur_error < 1e-9 and g.schur_error_bar < 1e-9
                assert abs(g.m - empirical_stieltjes(spec, z)) < 1e-9

    def test_direct_resolvent(self):
        X = sample_matrix(EnsembleParams(N=80, M=40, p=0.1, seed=3)).entries
        z = 1.5 + 0.05j
        g = linearized_green(X, z)
        R = np.linalg.inv(X.T @ X - z * np.eye(80))
        assert np.abs(g.G_TT - R).max() < 1e-9

    def test_guards(self):
        with pytest.raises(ParameterError):
            linearized_green(np.ones((2, 2)), 1.0)
        with pytest.raises(ParameterError):
            linearized_green(np.zeros((1000, 1001)), 1j)


class TestCounting:
    def test_examples(self):
        s = spec_of([3, 2, 1])
        assert counting(s, -np.inf, np.inf) == 1
        assert counting(s, 1.5, 3) == pytest.approx(2 / 3)
        assert counting(s, 1, 2) == pytest.approx(1 / 3)  # 1 excluded, 2 included

    def test_order(self):
        with pytest.raises(ParameterError):
            counting(spec_of([1]), 2, 1)


class TestDelocalisation:
    def test_trivial(self):
        assert delocalization_stat(np.array([[2.0]])) == pytest.approx(1.0)
        assert delocalization_stat(np.eye(5)) == pytest.approx(1.0)

    def test_kernel_excluded(self):
        # a single nonzero row: X^T X has one nonzero eigenvalue, eigenvector (1,1,1,1)/2
        X = np.array([[1.0, 1.0, 1.0, 1.0]])
        u_max, v_max = delocalization_parts(X)
        assert u_max == pytest.approx(0.5) and v_max == pytest.approx(1.0)

    def test_haar_oracle(self):
        # Gaussian singular vectors are Haar distributed; compare against Haar draws
        P = EnsembleParams(N=200, M=100, dist=Distribution.GAUSSIAN, seed=6)
        ours = [delocalization_parts(sample_matrix(P, t)) for t in range(30)]
        rng = np.random.default_rng(1)
        haar_u = [np.abs(stats.ortho_group.rvs(200, random_state=rng)[:100]).max() for _ in range(30)]
        haar_v = [np.abs(stats.ortho_group.rvs(100, random_state=rng)).max() for _ in range(30)]
        assert np.median([o[0] for o in ours]) == pytest.approx(np.median(haar_u), rel=0.08)
        assert np.median([o[1] for o in ours]) == pytest.approx(np.median(haar_v), rel=0.08)

    def test_gaussian_square_bound(self):
        # Known to fail: the extreme value of 3.2e5 Haar coordinates is ~0.235,
        # above 400**-0.25 = 0.224, so this threshold is too tight for any ensemble
        P = EnsembleParams(N=400, M=400, dist=Distribution.GAUSSIAN, seed=12)
        stat = np.array([delocalization_stat(sample_matrix(P, t)) for t in range(50)])
        assert np.mean(stat <= 400**-0.25) >= 0.95


class TestOnatski:
    def test_examples(self):
        assert onatski_R(spec_of([3, 2, 1])) == pytest.approx(1)
        assert onatski_R(spec_of([5, 3, 2])) == pytest.approx(2)

    def test_degenerate(self):
        with pytest.raises(NumericalError):
            onatski_R(spec_of([2, 1, 1]))


def test_csv_roundtrip(tmp_path):
    spec = eigenvalues(sample_matrix(EnsembleParams(N=30, M=10, p=0.3, seed=2)))
    path = tmp_path / "s.csv"
    write_spectrum_csv(path, spec)
    raw = path.read_bytes()
    assert raw.startswith(b"lambda\r\n")
    back = read_spectrum_csv(path)
    assert np.array_equal(back.lambdas, spec.lambdas) and back.M == 10 and back.N == 30


def test_csv_header_required(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x\n1\n")
    with pytest.raises(DataError):
        read_spectrum_csv(path)
