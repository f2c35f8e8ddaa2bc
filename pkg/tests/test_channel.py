import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rislab import channel as chn
from rislab.channel import Geometry, ScenarioConfig, build_scenario, sample_channels
from rislab.errors import DomainError, GeometryError, NotPSDError


# ----------------------------------------------------------------- path loss

def test_pathloss_examples():
    assert chn.pathloss(1.0, 2.0) == pytest.approx(1e-3)
    assert chn.pathloss(40.0, 2.0) == pytest.approx(6.25e-7)
    assert chn.pathloss(10.0, 2.8) == pytest.approx(1e-3 * 10 ** -2.8, rel=1e-12)
    assert 1e-3 * 10 ** -2.8 == pytest.approx(1.5849e-6, rel=1e-4)


def test_pathloss_inside_reference_distance():
    with pytest.raises(DomainError):
        chn.pathloss(0.5, 2.0)


# ----------------------------------------------------------------- correlation

def test_sinc_correlation_examples():
    assert chn.sinc_correlation([[0.0, 0.0]]).tolist() == [[1.0]]
    R = chn.sinc_correlation([[0.0, 0.0], [0.5, 0.0]])
    assert abs(R[0, 1]) < 1e-16
    R = chn.sinc_correlation([[0.0, 0.0], [0.1, 0.0]])
    assert R[0, 1] == pytest.approx(math.sin(0.2 * math.pi) / (0.2 * math.pi), rel=1e-14)
    assert R[0, 1] == pytest.approx(0.935489, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.05, 1.0))
def test_sinc_correlation_is_psd_symmetric_unit_diagonal(lx, lz, d):
    R = chn.sinc_correlation(chn.grid_positions(lx, lz, d))
    assert np.allclose(R, R.T)
    assert np.allclose(np.diag(R), 1.0)
    assert np.linalg.eigvalsh(R).min() >= -1e-9


def test_psd_sqrt_examples():
    assert np.allclose(chn.psd_sqrt(np.eye(3)), np.eye(3))
    A = np.array([[1.0, 0.5], [0.5, 1.0]])
    S = chn.psd_sqrt(A)
    assert np.allclose(S, S.T)
    assert np.linalg.norm(S @ S.T - A) / np.linalg.norm(A) < 1e-12
    B = np.ones((2, 2))
    S = chn.psd_sqrt(B)
    assert np.linalg.norm(S @ S.conj().T - B) / np.linalg.norm(B) < 1e-12


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(NotPSDError):
        chn.psd_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_psd_sqrt_hermitian_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    R = X @ X.conj().T
    S = chn.psd_sqrt(R)
    assert np.linalg.norm(S @ S.conj().T - R) <= 1e-10 * np.linalg.norm(R)


# ----------------------------------------------------------------- steering

def test_vura_examples():
    assert np.allclose(chn.vura_steering(1, 1, 0.5, 0.3, 0.2), [1.0])
    assert np.allclose(chn.vura_steering(3, 3, 0.5, math.pi / 2, math.pi / 2), np.ones(9))
    a = chn.vura_steering(2, 1, 0.5, math.pi / 2, math.pi / 4)
    assert np.allclose(a, [1.0, np.exp(1j * math.pi * math.cos(math.pi / 4))])
    assert np.angle(a[1]) == pytest.approx(2.22144, abs=1e-5)


@given(st.integers(1, 8), st.integers(1, 8), st.floats(0.05, 1.0),
       st.floats(0, math.pi), st.floats(-math.pi, math.pi))
def test_vura_unit_modulus(lx, lz, d, th, ph):
    a = chn.vura_steering(lx, lz, d, th, ph)
    assert np.allclose(np.abs(a), 1.0, atol=1e-14)
    assert np.sum(np.abs(a) ** 2) == pytest.approx(lx * lz)


# ----------------------------------------------------------------- drops

def _dist_to_ris(g, pts):
    return np.linalg.norm(pts - g.ris, axis=1)


def test_drop_layout_c_single_user():
    g = Geometry()
    pts = chn.drop_users("C", g, 1, np.random.default_rng(0))
    assert pts.shape == (1, 2)
    assert np.all(g.in_corridor(pts))
    assert _dist_to_ris(g, pts)[0] >= g.exclusion_radius


def test_drop_layout_a_spacing():
    g = Geometry()
    pts = chn.drop_users("A", g, 4, np.random.default_rng(1))
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.allclose(steps, 1.0)
    # collinear: every pair of steps is parallel
    v = np.diff(pts, axis=0)
    assert np.allclose(v[:, 0] * v[0, 1] - v[:, 1] * v[0, 0], 0.0, atol=1e-12)


def test_drop_layout_b_groups():
    g = Geometry()
    pts = chn.drop_users("B", g, 4, np.random.default_rng(2))
    for grp in (pts[:2], pts[2:]):
        assert np.linalg.norm(grp[1] - grp[0]) == pytest.approx(1.0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["A", "B", "C"]), st.integers(0, 2**31 - 1))
def test_drops_respect_exclusion_zone(layout, seed):
    g = Geometry()
    pts = chn.drop_users(layout, g, 4, np.random.default_rng(seed))
    assert np.all(_dist_to_ris(g, pts) >= g.exclusion_radius - 1e-12)
    assert np.all(g.in_corridor(pts))


def test_drop_errors():
    with pytest.raises(DomainError):
        chn.drop_users("B", Geometry(), 3, np.random.default_rng(0))
    with pytest.raises(GeometryError):
        chn.drop_users("A", Geometry(corridor_length=2.0), 8, np.random.default_rng(0))
    with pytest.raises(DomainError):
        chn.drop_users("Z", Geometry(), 2, np.random.default_rng(0))


def test_geometry_validation():
    with pytest.raises(DomainError):
        Geometry(ris_distance=0.0)
    with pytest.raises(DomainError):
        Geometry(exclusion_radius=-1.0)


# ----------------------------------------------------------------- scenario

def test_scenario_defaults_and_invariants():
    s = build_scenario(ScenarioConfig(), rng=np.random.default_rng(3))
    assert (s.M, s.N, s.K) == (16, 128, 4)
    assert np.allclose(s.beta_rb, 6.25e-7)
    for name, L in (("a_d", s.M), ("a_b", s.M), ("a_r", s.N), ("a_ur", s.N)):
        a = getattr(s, name)
        assert np.allclose(np.sum(np.abs(a) ** 2, axis=-1), L)
    for R, S in ((s.R_d, s.S_d), (s.R_b, s.S_b), (s.R_r, s.S_r), (s.R_ur, s.S_ur)):
        R0, S0 = R[0], S[0]
        assert np.allclose(np.diag(R0), 1.0)
        assert np.allclose(R0, R0.conj().T)
        assert np.linalg.norm(S0 @ S0.conj().T - R0) <= 1e-10 * np.linalg.norm(R0)


def test_scenario_bs_horizontal_neighbours_uncorrelated():
    s = build_scenario(ScenarioConfig(M=16, m_x=4, d_b=0.5), rng=np.random.default_rng(0))
    R = s.R_b[0]
    # row-major 4x4 grid: entry p*4+q; horizontal neighbours differ in p
    for p in range(3):
        for q in range(4):
            assert abs(R[p * 4 + q, (p + 1) * 4 + q]) < 1e-15


def test_user_on_ris_bs_line_has_broadside_elevation():
    g = Geometry()
    mid = (g.bs + g.ris) / 2
    s = build_scenario(ScenarioConfig(K=1, N=16), ue_positions=[mid])
    # equal heights: elevation is pi/2, so the z-gradient of a_ur vanishes
    assert np.allclose(s.a_ur[0].reshape(s.arrays.n_x, -1)[:, 0],
                       s.a_ur[0].reshape(s.arrays.n_x, -1)[:, -1])


def test_partition_rules():
    with pytest.raises(DomainError):
        ScenarioConfig(K=3, N=128)
    s = build_scenario(ScenarioConfig(K=3, N=128, partition=(42, 43, 43)),
                       rng=np.random.default_rng(0))
    assert s.partition == (42, 43, 43)
    with pytest.raises(DomainError):
        ScenarioConfig(K=2, N=8, partition=(3, 4))


def test_build_scenario_deterministic():
    a = build_scenario(ScenarioConfig(), rng=np.random.default_rng(9))
    b = build_scenario(ScenarioConfig(), rng=np.random.default_rng(9))
    for f in ("beta_d", "beta_ur", "a_d", "a_ur", "R_r", "S_r", "ue_positions"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


# ----------------------------------------------------------------- sampling

def test_pure_los_is_deterministic():
    cfg = ScenarioConfig(M=4, N=8, K=2, kappa_d=math.inf, kappa_rb=math.inf, kappa_ur=math.inf)
    s = build_scenario(cfg, rng=np.random.default_rng(0))
    ch = sample_channels(s, np.random.default_rng(5))
    for k in range(2):
        assert np.array_equal(ch.h_d[k], np.sqrt(s.beta_d[k]) * s.a_d[k])
        assert np.array_equal(ch.H_rb[k], np.sqrt(s.beta_rb[k]) * np.outer(s.a_b[k], s.a_r[k].conj()))
        assert np.array_equal(ch.h_ur[k], np.sqrt(s.beta_ur[k]) * s.a_ur[k])


def _draws(s, n, seed=0):
    rng = np.random.default_rng(seed)
    rngs = [np.random.default_rng(x) for x in rng.integers(0, 2**62, n)]
    return sample_channels(s, rngs)


def test_rayleigh_direct_moments():
    cfg = ScenarioConfig(M=4, N=4, K=1, kappa_d=0.0, d_b=0.2)
    s = build_scenario(cfg, rng=np.random.default_rng(1))
    ch = _draws(s, 100_000)
    h = ch.h_d[:, 0]
    se = np.sqrt(s.beta_d[0] / h.shape[0])
    assert np.all(np.abs(h.mean(axis=0)) < 4 * se)
    C = h.T @ h.conj() / h.shape[0]
    target = s.beta_d[0] * s.R_d[0]
    assert np.linalg.norm(C - target) / np.linalg.norm(target) < 0.03


def test_direct_power_is_m_beta():
    s = build_scenario(ScenarioConfig(M=4, N=4, K=1), rng=np.random.default_rng(2))
    ch = _draws(s, 100_000, seed=1)
    p = np.sum(np.abs(ch.h_d[:, 0]) ** 2, axis=-1).mean()
    assert p == pytest.approx(s.M * s.beta_d[0], rel=0.02)


def test_ur_mean_and_scattered_covariance():
    s = build_scenario(ScenarioConfig(M=2, N=4, K=1, d_r=0.2), rng=np.random.default_rng(4))
    ch = _draws(s, 100_000, seed=2)
    h = ch.h_ur[:, 0]
    b, k = s.beta_ur[0], s.kappa_ur[0]
    eta, zeta = math.sqrt(k / (1 + k)), math.sqrt(1 / (1 + k))
    mean = math.sqrt(b) * eta * s.a_ur[0]
    se = math.sqrt(b) * zeta / math.sqrt(h.shape[0])
    assert np.all(np.abs(h.mean(axis=0) - mean) < 4 * se)
    x = h - mean
    C = x.T @ x.conj() / h.shape[0]
    target = b * zeta**2 * s.R_ur[0]
    assert np.linalg.norm(C - target) / np.linalg.norm(target) < 0.03


def test_batch_replicate_depends_only_on_its_generator():
    s = build_scenario(ScenarioConfig(M=2, N=4, K=2), rng=np.random.default_rng(0))
    seeds = [11, 12, 13]
    batch = sample_channels(s, [np.random.default_rng(x) for x in seeds])
    one = sample_channels(s, np.random.default_rng(12))
    assert np.array_equal(batch.h_d[1], one.h_d)
    assert np.array_equal(batch.H_rb[1], one.H_rb)
    assert np.array_equal(batch.h_ur[1], one.h_ur)


def test_link_params():
    lp = chn.LinkParams(1e-3, 3.0)
    assert lp.eta**2 + lp.zeta**2 == pytest.approx(1.0)
    assert lp.eta == pytest.approx(math.sqrt(0.75))
