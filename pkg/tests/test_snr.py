import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rislab import phase, snr, specfun
from rislab.channel import ScenarioConfig, build_scenario, channels_from_gaussians, sample_channels
from rislab.errors import DomainError, MisuseError

INF = math.inf


def _scenario(seed=0, **kw):
    return build_scenario(ScenarioConfig(**kw), rng=np.random.default_rng(seed))


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def _mc_terms(s, n, seed, chunk=20_000):
    """Mean and standard error of the raw terms under sd_los, shape (K, 6)."""
    rng = np.random.default_rng(seed)
    tot = np.zeros((s.K, 6))
    sq = np.zeros((s.K, 6))
    done = 0
    while done < n:
        b = min(chunk, n - done)
        ch = channels_from_gaussians(s, _cn(rng, (b, s.K, s.M)), _cn(rng, (b, s.K, s.M, s.N)),
                                     _cn(rng, (b, s.K, s.N)))
        t = snr.batch_terms(s, ch, phase.batch_sd_los(s, ch)[0])
        tot += t.sum(axis=0)
        sq += (t ** 2).sum(axis=0)
        done += b
    mean = tot / n
    var = (sq - n * mean ** 2) / (n - 1)
    return mean, np.sqrt(var / n)


def _identity_ur(s):
    eye = np.broadcast_to(np.eye(s.N, dtype=complex), s.R_ur.shape).copy()
    return replace(s, R_ur=eye, S_ur=eye.copy())


# ----------------------------------------------------------------- instantaneous

def test_norm_expansion_identity():
    s = _scenario(M=4, N=8, K=2).with_es(3.0)
    rng = np.random.default_rng(1)
    for _ in range(100):
        ch = sample_channels(s, rng)
        phi = np.exp(1j * rng.uniform(0, 2 * np.pi, s.N))
        for k in range(s.K):
            y = ch.h_d[k] + ch.H_rb[k] @ (phi * ch.h_ur[k])
            want = 3.0 * np.sum(np.abs(y) ** 2)
            assert snr.snr_terms(s, ch, phi, k).total == pytest.approx(want, rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["sd_los", "isd", "random"]))
def test_single_user_has_no_interference_terms(seed, method):
    s = _scenario(M=2, N=4, K=1)
    rngs = [np.random.default_rng([seed, 1])]
    ch = sample_channels(s, rngs)
    t = snr.batch_terms(s, ch, phase.select_batch(method, s, ch, rngs=rngs).phi)
    assert np.all(t[..., 2:4] == 0) and np.all(t[..., 5] == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_quadratic_terms_nonnegative(seed):
    s = _scenario(M=4, N=8, K=2)
    ch = sample_channels(s, np.random.default_rng(seed))
    b = snr.snr_terms(s, ch, phase.batch_sd_los(s, ch)[0][0], 1)
    assert b.t_hdhd >= 0 and b.t_ff >= 0 and b.t_gg >= 0


def test_coherent_combining_identity():
    s = _scenario(M=4, N=8, K=1, kappa_rb=INF).with_es(2.0)
    rng = np.random.default_rng(2)
    h_ur = np.abs(_cn(rng, (1, 8)))
    H = np.sqrt(s.beta_rb[0]) * np.outer(s.a_b[0], s.a_r[0].conj())[None]
    from rislab.channel import ChannelRealization
    ch = ChannelRealization(np.zeros((1, 4), complex), H, h_ur.astype(complex))
    phi = phase.sd_los(s, ch, 0, on_degenerate="flag")
    got = snr.snr_terms(s, ch, phi, 0).total
    assert got == pytest.approx(2.0 * s.beta_rb[0] * 4 * np.sum(h_ur) ** 2, rel=1e-12)


def test_breakdown_total_and_dimension_check():
    b = snr.SnrBreakdown(1.0, 0.5, 0.25, 0.125, 2.0, 3.0, es_over_sigma2=10.0)
    assert b.total == pytest.approx(10 * (1 + 1 + 0.5 + 0.25 + 2 + 3))
    s = _scenario(M=2, N=4, K=1)
    ch = sample_channels(s, np.random.default_rng(0))
    with pytest.raises(DomainError):
        snr.snr_terms(s, ch, np.ones(5, complex), 0)


# ----------------------------------------------------------------- analytic terms

def test_hdhd_examples():
    s = _scenario(M=16, N=8, K=1)
    assert snr.mean_term_hdhd(replace(s, beta_d=np.array([1e-3])), 0) == pytest.approx(0.016)
    assert snr.mean_term_hdhd(replace(s, beta_d=np.array([0.0])), 0) == 0.0


def test_hdhd_mc():
    s = _scenario(M=4, N=4, K=1)
    m, _ = _mc_terms(s, 100_000, 1)
    assert m[0, 0] == pytest.approx(snr.mean_term_hdhd(s, 0), rel=0.02)


def test_hdf_los_direct_limit():
    # zeta_d -> 0 but L_1/2(-kappa_d c) grows like sqrt(kappa_d); the product
    # tends to N_k sqrt(pi)/2 |a_b'a_d| sqrt(b_d b_rb b_ur) eta_rb zeta_ur L_1/2(-kappa_ur)
    s = _scenario(seed=3, M=4, N=8, K=1, kappa_d=INF)
    k = s.kappa_ur[0]
    lim = (8 * math.sqrt(math.pi) / 2 * abs(np.vdot(s.a_b[0], s.a_d[0]))
           * math.sqrt(s.beta_d[0] * s.beta_rb[0] * s.beta_ur[0])
           * math.sqrt(s.kappa_rb[0] / (1 + s.kappa_rb[0])) / math.sqrt(1 + k)
           * specfun.laguerre_half(-k))
    assert snr.mean_term_hdf(s, 0) == pytest.approx(lim, rel=1e-10)
    near = _scenario(seed=3, M=4, N=8, K=1, kappa_d=1e6)
    assert snr.mean_term_hdf(near, 0) == pytest.approx(lim, rel=1e-5)
    m, se = _mc_terms(s, 200_000, 4)
    assert abs(m[0, 1] - lim) < 3 * se[0, 1]


def test_hdf_linear_in_block_size():
    pos = [[20.0, 1.0]]
    a = build_scenario(ScenarioConfig(M=4, N=8, K=1), ue_positions=pos)
    b = build_scenario(ScenarioConfig(M=4, N=16, K=1), ue_positions=pos)
    assert snr.mean_term_hdf(b, 0) == pytest.approx(2 * snr.mean_term_hdf(a, 0), rel=1e-12)


def test_hdf_mc_aligned_direct():
    s = _scenario(seed=3, M=4, N=8, K=1)
    eye = np.eye(4, dtype=complex)[None]
    s = replace(s, a_d=s.a_b.copy(), R_d=eye, S_d=eye.copy())
    m, se = _mc_terms(s, 200_000, 4)
    assert abs(m[0, 1] - snr.mean_term_hdf(s, 0)) < 3 * se[0, 1]


def test_c_matrix_limits():
    s = _scenario(M=4, N=8, K=2, kappa_ur=0.0)
    assert np.allclose(snr.c_matrix(s, 0), 0.0)
    s = _scenario(M=4, N=8, K=2, kappa_ur=1e6, kappa_d=1e6)
    for x in range(2):
        C = np.diag(snr.c_matrix(s, x))
        p = np.vdot(s.a_b[x], s.a_d[x])
        want = p / abs(p) * np.exp(1j * (np.angle(s.a_r[x]) - np.angle(s.a_ur[x])))[s.block(x)]
        assert np.allclose(C, want, atol=1e-2)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 20.0), st.floats(0.0, 20.0), st.floats(0.05, 1.0))
def test_c_matrix_entries_bounded(kd, kur, dr):
    s = _scenario(M=4, N=8, K=2, kappa_d=kd, kappa_ur=kur, d_r=dr)
    assert np.all(np.abs(np.diag(snr.c_matrix(s, 1))) <= 1 + 1e-12)


def test_c_matrix_scalar_mc():
    s = _scenario(seed=5, M=1, N=1, K=1)
    rng = np.random.default_rng(6)
    acc = []
    for _ in range(10):
        n = 1_000_000
        ch = channels_from_gaussians(s, _cn(rng, (n, 1, 1)), _cn(rng, (n, 1, 1, 1)), _cn(rng, (n, 1, 1)))
        acc.append(phase.batch_sd_los(s, ch)[0][:, 0])
    phi = np.concatenate(acc)
    want = snr.c_matrix(s, 0)[0, 0]
    se = math.sqrt(np.var(phi.real) / phi.size), math.sqrt(np.var(phi.imag) / phi.size)
    assert abs(phi.real.mean() - want.real) < 3 * se[0]
    assert abs(phi.imag.mean() - want.imag) < 3 * se[1]


def test_interference_terms_vanish_for_single_user():
    s = _scenario(M=4, N=8, K=1)
    assert snr.mean_term_hdg(s, 0) == 0
    assert snr.mean_term_fg(s, 0) == 0
    assert snr.mean_term_gg(s, 0) == 0


def test_hdg_vanishes_without_direct_los():
    s = _scenario(M=4, N=8, K=2, kappa_d=0.0)
    assert snr.mean_term_hdg(s, 0) == pytest.approx(0.0, abs=1e-30)


def test_fg_vanishes_for_independent_rayleigh_blocks():
    s = _identity_ur(_scenario(M=4, N=8, K=2, kappa_ur=0.0))
    assert snr.mean_term_fg(s, 0) == pytest.approx(0.0, abs=1e-30)


def test_gg_hand_expansion_two_users():
    # kappa_ur = 0 and R_ur = I: only i = j survives, each worth M beta_rb beta_ur
    s = _identity_ur(_scenario(M=4, N=8, K=2, kappa_ur=0.0))
    want = s.M * s.beta_rb[0] * s.beta_ur[0] * s.partition[1]
    assert snr.mean_term_gg(s, 0) == pytest.approx(want, rel=1e-10)


def test_ff_single_element():
    s = _scenario(M=4, N=2, K=2)
    assert snr.mean_term_ff(s, 1) == pytest.approx(s.M * s.beta_rb[1] * s.beta_ur[1], rel=1e-12)


@pytest.fixture(scope="module")
def small_mc():
    s = _scenario(seed=7, M=4, N=8, K=2, d_r=0.1)
    m, se = _mc_terms(s, 500_000, 8)
    return s, m, se, snr.mean_terms_all(s)


@pytest.mark.parametrize("j", range(6), ids=snr.TERMS)
def test_terms_within_three_stderr(small_mc, j):
    s, m, se, A = small_mc
    for k in range(s.K):
        assert abs(m[k, j] - A[k, j]) <= 3 * se[k, j] + 1e-15 * abs(A[k, j])


def test_ff_and_gg_relative_accuracy(small_mc):
    s, m, _, A = small_mc
    assert np.allclose(m[:, 4], A[:, 4], rtol=0.01)
    assert np.allclose(m[:, 5], A[:, 5], rtol=0.015)


def test_general_total_matches_mc(small_mc):
    s, m, _, A = small_mc
    assert np.allclose(m @ snr.WEIGHTS, A @ snr.WEIGHTS, rtol=0.015)
    rep = snr.mean_snr_general(s)
    assert np.allclose(rep.totals, A @ snr.WEIGHTS)
    assert rep.case == "general"


def test_general_single_user_uses_three_terms():
    s = _scenario(M=4, N=8, K=1)
    b = snr.mean_snr_general(s, 0)[0]
    assert b.total == pytest.approx(b.t_hdhd + 2 * b.t_hdf + b.t_ff)


def test_mean_snr_nondecreasing_in_block_size():
    pos = [[15.0, -1.0]]
    vals = [snr.mean_snr_general(build_scenario(ScenarioConfig(M=4, N=n, K=1), ue_positions=pos)).totals[0]
            for n in (1, 2, 4, 8)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("nk", [4, 8, 16])
def test_ff_quadratic_growth(nk):
    pos = [[20.0, 0.5]]
    f = [snr.mean_term_ff(build_scenario(ScenarioConfig(M=4, N=n, K=1, d_r=0.25), ue_positions=pos), 0)
         for n in (nk, 2 * nk)]
    assert 2 < f[1] / f[0] <= 4


# ----------------------------------------------------------------- special cases

def test_case_reports_drop_zero_mean_terms():
    s = _scenario(M=4, N=8, K=2, kappa_d=0.0, kappa_ur=0.0)
    for b in snr.mean_snr_case1(s).terms:
        assert b.t_hdg == 0 and b.t_fg == 0


def test_case2_two_element_block():
    s = _identity_ur(_scenario(M=4, N=2, K=1, kappa_d=0.0, kappa_ur=0.0, kappa_rb=INF))
    b = snr.mean_snr_case2(s)[0]
    assert b.t_ff == pytest.approx(s.M * s.beta_rb[0] * s.beta_ur[0] * (2 + math.pi / 2), rel=1e-12)


def test_case2_uncorrelated_pair_sum():
    s = _identity_ur(_scenario(M=4, N=8, K=1, kappa_d=0.0, kappa_ur=0.0, kappa_rb=INF))
    n = 8
    want = s.M * s.beta_rb[0] * s.beta_ur[0] * (n + math.pi / 4 * n * (n - 1))
    assert snr.mean_snr_case2(s)[0].t_ff == pytest.approx(want, rel=1e-12)


def test_case_misuse():
    with pytest.raises(MisuseError):
        snr.mean_snr_case1(_scenario(M=2, N=4, K=1))
    with pytest.raises(MisuseError):
        snr.mean_snr_case2(_scenario(M=2, N=4, K=1, kappa_d=0.0, kappa_ur=0.0))


@pytest.mark.parametrize("seed", [0, 1])
def test_case_chain(seed):
    base = _scenario(seed=seed, M=4, N=8, K=2, kappa_rb=1.0)
    g = snr.mean_snr_general(base.with_kappas(kappa_d=1e-8, kappa_ur=1e-8)).totals
    c1 = snr.mean_snr_case1(base.with_kappas(kappa_d=0.0, kappa_ur=0.0)).totals
    assert np.allclose(g, c1, rtol=1e-3)
    c1_los = snr.mean_snr_case1(base.with_kappas(kappa_d=0.0, kappa_ur=0.0, kappa_rb=1e8)).totals
    c2 = snr.mean_snr_case2(base.with_kappas(kappa_d=0.0, kappa_ur=0.0, kappa_rb=INF)).totals
    assert np.allclose(c1_los, c2, rtol=1e-3)


@pytest.mark.parametrize("kappa_rb,case", [(1.0, "case1"), (INF, "case2")])
def test_case_totals_match_mc(kappa_rb, case):
    s = _scenario(seed=9, M=4, N=8, K=2, kappa_d=0.0, kappa_ur=0.0, kappa_rb=kappa_rb)
    m, _ = _mc_terms(s, 200_000, 10)
    rep = getattr(snr, f"mean_snr_{case}")(s)
    assert np.allclose(m @ snr.WEIGHTS, rep.totals, rtol=0.015)


# ----------------------------------------------------------------- sum rate

def test_sum_rate_examples():
    assert snr.sum_rate_bound([1.0], [1.0]) == pytest.approx(1.0)
    assert snr.sum_rate_bound([3.0] * 4) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        snr.sum_rate_bound([-1.0])
    with pytest.raises(DomainError):
        snr.sum_rate_bound([1.0, 1.0], [1.0])


def test_sum_rate_gain_from_los_rb():
    base = _scenario(seed=4, M=8, N=64, K=4).with_es(10.0)
    lo = snr.sum_rate_bound(snr.mean_snr_general(base.with_kappas(kappa_rb=0.0)))
    hi = snr.sum_rate_bound(snr.mean_snr_general(base.with_kappas(kappa_rb=INF)))
    assert hi - lo > 0


def test_user_index_checked():
    s = _scenario(M=2, N=4, K=1)
    with pytest.raises(DomainError):
        snr.mean_term_ff(s, 1)
