import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sparsemp.ensemble import (
    Distribution,
    EnsembleParams,
    cumulant_profile,
    dyson_flow_at,
    flow_state,
    moment_audit,
    read_matrix,
    sample_matrix,
    trial_rng,
    write_matrix,
)
from sparsemp.errors import DataError, ParameterError


def sparse(N=400, M=200, p=0.05, seed=0):
    return EnsembleParams(N=N, M=M, p=p, seed=seed)


class TestParams:
    def test_q_and_p_are_interchangeable(self):
        a = EnsembleParams(N=10_000, M=100, p=0.01)
        b = EnsembleParams(N=10_000, M=100, q=10.0)
        assert a.q == pytest.approx(10.0)
        assert b.p == pytest.approx(0.01)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(N=10, M=20, p=0.1),  # N < M
            dict(N=10, M=0, p=0.1),
            dict(N=10, M=5, p=0.0),
            dict(N=10, M=5, p=1.0),
            dict(N=10, M=5, p=-0.2),
            dict(N=100, M=5, q=20.0),  # p = 4
            dict(N=10, M=5, p=0.1, seed=-1),
            dict(N=10, M=5, p=0.1, seed=2**64),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            EnsembleParams(**kw)

    def test_aspect_ratio(self):
        assert sparse(N=300, M=100).d == 3.0


class TestSampling:
    def test_two_point_values(self):
        P = sparse(p=0.05)
        X = sample_matrix(P).entries
        c = math.sqrt(P.N * P.p * (1 - P.p))
        vals = np.unique(X)
        np.testing.assert_allclose(vals, [-P.p / c, (1 - P.p) / c], rtol=1e-15)

    def test_mean_and_second_moment(self):
        P = EnsembleParams(N=2000, M=1000, p=0.01, seed=3)
        X = sample_matrix(P).entries
        MN = X.size
        assert abs(X.mean()) <= 3 * MN**-0.5 * P.N**-0.5
        x2 = X.ravel() ** 2
        se = x2.std() / math.sqrt(MN)
        assert abs(x2.mean() - 1 / P.N) <= 5 * se

    def test_p_near_one(self):
        P = EnsembleParams(N=1000, M=1000, p=0.999, seed=1)
        X = sample_matrix(P).entries
        frac_pos = np.mean(X > 0)
        assert frac_pos == pytest.approx(0.999, abs=2e-4)

    def test_positive_fraction_q10(self):
        P = EnsembleParams(N=10_000, M=100, p=0.01, seed=2)
        assert np.mean(sample_matrix(P).entries > 0) == pytest.approx(0.01, abs=0.003)

    def test_gaussian_variance(self):
        P = EnsembleParams(N=1000, M=500, dist=Distribution.GAUSSIAN, seed=4)
        X = sample_matrix(P).entries
        x2 = X.ravel() ** 2
        assert abs(x2.mean() - 1e-3) <= 5 * x2.std() / math.sqrt(x2.size)

    def test_deterministic_per_trial(self):
        P = sparse(seed=11)
        a = sample_matrix(P, trial=5).entries
        # drawing other trials first must not change trial 5
        for t in range(5):
            sample_matrix(P, trial=t)
        b = sample_matrix(P, trial=5).entries
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_matrix(P, trial=6).entries)

    def test_streams_are_disjoint(self):
        u = trial_rng(1, 0, 0).random(8)
        v = trial_rng(1, 0, 1).random(8)
        w = trial_rng(1, 1, 0).random(8)
        assert not np.allclose(u, v) and not np.allclose(u, w)

    def test_biadjacency_matches_two_point_law(self):
        kw = dict(N=300, M=100, p=0.1, seed=9)
        bern = sample_matrix(EnsembleParams(dist=Distribution.SPARSE_BERNOULLI, **kw))
        bip = sample_matrix(EnsembleParams(dist=Distribution.BIPARTITE_BIADJACENCY, **kw))
        assert set(np.unique(bip.raw)) <= {0, 1}
        assert np.array_equal(bip.entries, bern.entries)
        c = math.sqrt(300 * 0.1 * 0.9)
        np.testing.assert_array_equal(bip.entries, (bip.raw - 0.1) / c)

    def test_custom_sampler_hook(self):
        P = sparse(N=50, M=10)
        X = sample_matrix(P, sampler=lambda rng, shape: np.full(shape, 0.5)).entries
        assert X.shape == (10, 50) and np.all(X == 0.5)
        with pytest.raises(ParameterError):
            sample_matrix(P, sampler=lambda rng, shape: np.zeros((3, 3)))
        with pytest.raises(DataError):
            sample_matrix(P, sampler=lambda rng, shape: np.full(shape, np.nan))


class TestFlow:
    def test_t_zero_is_identity(self):
        s = sample_matrix(sparse())
        assert np.array_equal(dyson_flow_at(flow_state(s, 0.0)).entries, s.entries)

    def test_long_time_reaches_gaussian(self):
        s = sample_matrix(sparse())
        st_ = flow_state(s, 60.0)
        out = dyson_flow_at(st_).entries
        # relative to the entry scale: tiny W^G entries make a pointwise ratio meaningless
        np.testing.assert_allclose(out, st_.WG, rtol=0, atol=1e-12 * np.abs(st_.WG).max())

    def test_negative_time(self):
        with pytest.raises(ParameterError):
            flow_state(sample_matrix(sparse()), -0.1)

    @pytest.mark.parametrize("t", [0, 1, 2, 3, 4, 5, 6])
    def test_variance_preserved(self, t):
        P = EnsembleParams(N=400, M=200, p=0.02, seed=21)
        for rep in range(10):
            X = dyson_flow_at(flow_state(sample_matrix(P, rep), t)).entries.ravel()
            se = (X**2).std() / math.sqrt(X.size)
            assert abs((X**2).mean() - 1 / P.N) <= 5 * se


class TestCumulants:
    def test_normalised_fourth_cumulant(self):
        p = 0.01
        prof = cumulant_profile(EnsembleParams(N=10_000, M=100, p=p))
        assert prof.s[3] == pytest.approx((1 - 6 * p + 6 * p * p) / (1 - p), rel=1e-12)
        assert prof.s[3] == pytest.approx(0.95010, abs=1e-5)

    def test_first_two(self):
        prof = cumulant_profile(sparse())
        assert prof.kappa[0] == 0 and prof.kappa[1] == pytest.approx(1 / 400)
        assert prof.s[0] == 0 and prof.s[1] == pytest.approx(1.0)

    def test_gaussian(self):
        prof = cumulant_profile(EnsembleParams(N=100, M=50, dist=Distribution.GAUSSIAN))
        assert prof.s[2] == 0 and prof.s[3] == 0

    def test_small_p_limit(self):
        prof = cumulant_profile(EnsembleParams(N=10**9, M=10, p=1e-7))
        np.testing.assert_allclose(prof.s[2:], 1.0, rtol=1e-4)

    def test_flowed(self):
        P = EnsembleParams(N=10_000, M=100, p=0.01)
        t = 0.7
        prof = cumulant_profile(P, t=t)
        assert prof.q_t == pytest.approx(10 * math.exp(t / 2))
        assert prof.kappa_t[1] == pytest.approx(1 / P.N)
        assert prof.kappa_t[3] == pytest.approx(math.exp(-2 * t) * prof.kappa[3])
        # s4_t / q_t^2 = e^{-2t} s4 / q^2
        assert prof.s4_over_q2() == pytest.approx(math.exp(-2 * t) * prof.s[3] / 100)

    def test_kmax(self):
        with pytest.raises(ParameterError):
            cumulant_profile(sparse(), K_max=3)

    @given(st.floats(min_value=1e-4, max_value=0.999))
    @settings(max_examples=60, deadline=None)
    def test_s4_closed_form(self, p):
        prof = cumulant_profile(EnsembleParams(N=10**6, M=1, p=p))
        assert prof.s[3] == pytest.approx((1 - 6 * p + 6 * p * p) / (1 - p), rel=1e-9, abs=1e-12)

    def test_monte_carlo_cumulants(self):
        # 1e7 draws split into 100 batches; k-statistics are unbiased cumulant estimators
        P = EnsembleParams(N=10_000, M=1000, p=0.01, seed=5)
        X = sample_matrix(P).entries.ravel()
        prof = cumulant_profile(P)
        batches = X.reshape(100, -1)
        for k in (2, 3, 4):
            est = np.array([stats.kstat(b, k) for b in batches])
            se = est.std(ddof=1) / math.sqrt(len(est))
            assert abs(est.mean() - prof.kappa[k - 1]) <= 3 * se, k


class TestAudit:
    def test_gaussian_third_moment(self):
        s = sample_matrix(EnsembleParams(N=1000, M=500, dist=Distribution.GAUSSIAN, seed=2))
        m3 = moment_audit(s)["moments"][2]
        assert abs(m3["moment"]) <= 5 * m3["stderr"]

    def test_sparse_fourth_moment(self):
        P = EnsembleParams(N=10_000, M=100, p=0.01, seed=8)
        m4 = moment_audit(sample_matrix(P))["moments"][3]["moment"]
        assert m4 * P.N * P.q**2 == pytest.approx(1.0, abs=0.05)

    def test_second_moment_and_flags(self):
        P = sparse(seed=4)
        audit = moment_audit(sample_matrix(P))
        m2 = audit["moments"][1]
        assert abs(m2["moment"] - 1 / P.N) <= 5 * m2["stderr"]
        assert not audit["any_violation"]
        # an impossible profile flags every bounded moment
        tight = moment_audit(sample_matrix(P), C=1e-3, c=1.0)
        assert tight["any_violation"]


def test_matrix_dump_roundtrip(tmp_path):
    X = sample_matrix(sparse()).entries
    path = tmp_path / "x.mpsl"
    write_matrix(path, X)
    raw = path.read_bytes()
    assert raw[:4] == b"MPSL"
    assert len(raw) == 4 + 4 + 8 + 8 + 8 * X.size
    assert np.array_equal(read_matrix(path), X)


def test_matrix_dump_rejects_garbage(tmp_path):
    path = tmp_path / "bad.mpsl"
    path.write_bytes(b"NOPE" + bytes(30))
    with pytest.raises(DataError):
        read_matrix(path)
