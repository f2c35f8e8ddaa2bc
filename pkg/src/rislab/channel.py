"""Scenario construction and correlated Ricean channel sampling.

Geometry is two-dimensional: the BS sits at the origin, the RIS at distance
``ris_distance`` and angle ``ris_angle``, and users are dropped in a corridor
running from the RIS towards the BS. All nodes share one height, so every
elevation angle is pi/2.

Channel arrays carry optional leading batch axes. A realization for a batch of
``B`` replicates has shapes ``h_d (B, K, M)``, ``H_rb (B, K, M, N)`` and
``h_ur (B, K, N)``; the unbatched form simply drops the first axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, GeometryError, NotPSDError

C0 = 1e-3
D0 = 1.0
LAYOUTS = ("A", "B", "C")


def pathloss(d, alpha, c0=C0):
    """Distance-based power gain ``c0 (d / 1 m)^(-alpha)``.

    Parameters
    ----------
    d : float or array_like
        Link distance in metres, at least the 1 m reference distance.
    alpha : float
        Path-loss exponent.
    c0 : float, optional
        Gain at the reference distance (default -30 dB).
    """
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr < D0):
        raise DomainError(f"distance below the {D0} m reference distance")
    out = c0 * (d_arr / D0) ** (-float(alpha))
    return float(out) if out.ndim == 0 else out


def sinc_correlation(positions):
    """Spatial correlation ``R[n, m] = sinc(2 |p_n - p_m|)`` of isotropic scattering.

    Parameters
    ----------
    positions : array_like, shape (n, dim)
        Element coordinates in wavelengths.

    Returns
    -------
    ndarray, shape (n, n)
        Real symmetric matrix with unit diagonal.
    """
    p = np.atleast_2d(np.asarray(positions, dtype=float))
    if p.shape[0] < 1:
        raise DomainError("need at least one element")
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    return np.sinc(2.0 * dist)


def psd_sqrt(R, neg_tol=1e-9):
    """Principal square root of a Hermitian positive semidefinite matrix.

    Eigenvalues in ``[-neg_tol, 0)`` are treated as roundoff and clamped to
    zero; anything more negative raises :class:`NotPSDError`.
    """
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DomainError("psd_sqrt expects a square matrix")
    Rh = 0.5 * (R + R.conj().T)
    w, V = np.linalg.eigh(Rh)
    if np.any(w < -neg_tol):
        raise NotPSDError(f"eigenvalue {w.min():.3e} below -{neg_tol}")
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.conj().T
    if not np.iscomplexobj(R):
        S = S.real
    return S


def vura_steering(L_x, L_z, d, theta, phi):
    """Steering vector of a vertical uniform rectangular array.

    Entry ``p * L_z + q`` (row-major over the ``L_x x L_z`` grid) equals
    ``exp(j 2 pi d (p sin(theta) cos(phi) + q cos(theta)))``.
    """
    if L_x < 1 or L_z < 1:
        raise DomainError("array dimensions must be >= 1")
    p = np.repeat(np.arange(L_x), L_z)
    q = np.tile(np.arange(L_z), L_x)
    arg = 2.0 * np.pi * d * (p * math.sin(theta) * math.cos(phi) + q * math.cos(theta))
    return np.exp(1j * arg)


def grid_positions(L_x, L_z, d):
    """Element coordinates (in wavelengths) in the same row-major order as :func:`vura_steering`."""
    p = np.repeat(np.arange(L_x), L_z)
    q = np.tile(np.arange(L_z), L_x)
    return np.stack([p * d, q * d], axis=1).astype(float)


def default_width(L):
    """Smallest divisor of ``L`` that is at least ``sqrt(L)``; the grid is ``width x L/width``."""
    for w in range(max(1, math.isqrt(L)), L + 1):
        if L % w == 0 and w * w >= L:
            return w
    return L


@dataclass(frozen=True)
class Geometry:
    """Placement of BS, RIS and the user corridor (metres, radians)."""

    ris_distance: float = 40.0
    ris_angle: float = math.pi / 4
    corridor_half_width: float = 2.5
    corridor_length: float = 16.0
    exclusion_radius: float = 1.0
    bs_position: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.ris_distance > 0:
            raise DomainError("ris_distance must be positive")
        if self.exclusion_radius < 0:
            raise DomainError("exclusion_radius must be >= 0")
        if self.corridor_half_width < 0 or self.corridor_length <= 0:
            raise DomainError("corridor dimensions must be positive")
        if self.corridor_length > self.ris_distance - D0:
            raise DomainError("corridor must end at least 1 m short of the BS")

    @property
    def bs(self):
        return np.asarray(self.bs_position, dtype=float)

    @property
    def ris(self):
        return self.bs + self.ris_distance * np.array(
            [math.cos(self.ris_angle), math.sin(self.ris_angle)])

    @property
    def axis(self):
        """Unit vector from the RIS towards the BS."""
        v = self.bs - self.ris
        return v / np.linalg.norm(v)

    @property
    def normal(self):
        a = self.axis
        return np.array([-a[1], a[0]])

    def in_corridor(self, pts):
        """Boolean mask of points inside the corridor and outside the exclusion disc."""
        rel = np.atleast_2d(pts) - self.ris
        t = rel @ self.axis
        lat = rel @ self.normal
        tol = 1e-9
        inside = (t >= -tol) & (t <= self.corridor_length + tol) & (np.abs(lat) <= self.corridor_half_width + tol)
        return inside & (np.linalg.norm(rel, axis=1) >= self.exclusion_radius - tol)


@dataclass(frozen=True)
class ArrayLayout:
    """BS and RIS grid shapes and element spacings (in wavelengths)."""

    m_x: int
    m_z: int
    n_x: int
    n_z: int
    d_b: float = 0.5
    d_r: float = 0.5

    def __post_init__(self):
        if min(self.m_x, self.m_z, self.n_x, self.n_z) < 1:
            raise DomainError("array dimensions must be >= 1")
        if not (self.d_b > 0 and self.d_r > 0):
            raise DomainError("element spacings must be positive")

    @property
    def M(self):
        return self.m_x * self.m_z

    @property
    def N(self):
        return self.n_x * self.n_z

    @classmethod
    def from_counts(cls, M, N, d_b=0.5, d_r=0.5, m_x=None, n_x=None):
        m_x = m_x or default_width(M)
        n_x = n_x or default_width(N)
        if M % m_x or N % n_x:
            raise DomainError("row counts must divide element counts")
        return cls(m_x, M // m_x, n_x, N // n_x, d_b, d_r)


@dataclass(frozen=True)
class LinkParams:
    """Large-scale gain and Ricean K-factor of one link."""

    beta: float
    kappa: float

    def __post_init__(self):
        if self.beta < 0 or not self.kappa >= 0:
            raise DomainError("need beta >= 0 and kappa >= 0")

    @property
    def eta(self):
        return 1.0 if math.isinf(self.kappa) else math.sqrt(self.kappa / (self.kappa + 1.0))

    @property
    def zeta(self):
        return 0.0 if math.isinf(self.kappa) else math.sqrt(1.0 / (self.kappa + 1.0))


@dataclass(frozen=True)
class ScenarioConfig:
    """Static system description from which a :class:`Scenario` is built.

    ``partition`` defaults to an equal split ``N / K``. Path-loss exponents
    follow the direct (3.5), RIS-BS LoS (2.0) and UE-RIS (2.8) choices.
    """

    M: int = 16
    N: int = 128
    K: int = 4
    d_b: float = 0.5
    d_r: float = 0.1
    m_x: int | None = None
    n_x: int | None = None
    kappa_d: float = 1.0
    kappa_rb: float = 1.0
    kappa_ur: float = 1.0
    alpha_d: float = 3.5
    alpha_rb: float = 2.0
    alpha_ur: float = 2.8
    c0: float = C0
    partition: tuple | None = None
    geometry: Geometry = field(default_factory=Geometry)
    es_over_sigma2: float = 1.0

    def __post_init__(self):
        if self.K < 1 or self.M < 1 or self.N < 1:
            raise DomainError("M, N, K must be >= 1")
        part = self.resolved_partition()
        if sum(part) != self.N or min(part) < 1:
            raise DomainError("partition must have K positive entries summing to N")

    def resolved_partition(self):
        if self.partition is not None:
            if len(self.partition) != self.K:
                raise DomainError("partition length must equal K")
            return tuple(int(v) for v in self.partition)
        if self.N % self.K:
            raise DomainError(f"K={self.K} does not divide N={self.N}; give an explicit partition")
        return (self.N // self.K,) * self.K

    def layout(self):
        return ArrayLayout.from_counts(self.M, self.N, self.d_b, self.d_r, self.m_x, self.n_x)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Fully specified static system for one user drop.

    Per-user arrays have a leading axis of length K. Correlation matrices are
    shared across users (one BS and one RIS) but stored per user so that all
    per-user quantities index the same way.
    """

    config: ScenarioConfig
    arrays: ArrayLayout
    ue_positions: np.ndarray
    partition: tuple
    beta_d: np.ndarray
    beta_rb: np.ndarray
    beta_ur: np.ndarray
    kappa_d: np.ndarray
    kappa_rb: np.ndarray
    kappa_ur: np.ndarray
    a_d: np.ndarray
    a_b: np.ndarray
    a_r: np.ndarray
    a_ur: np.ndarray
    R_d: np.ndarray
    R_b: np.ndarray
    R_r: np.ndarray
    R_ur: np.ndarray
    S_d: np.ndarray
    S_b: np.ndarray
    S_r: np.ndarray
    S_ur: np.ndarray
    es_over_sigma2: float = 1.0

    @property
    def K(self):
        return len(self.partition)

    @property
    def M(self):
        return self.arrays.M

    @property
    def N(self):
        return self.arrays.N

    @property
    def geometry(self):
        return self.config.geometry

    @property
    def n_k(self):
        return self.partition

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.partition)])

    def block(self, k):
        """Slice of RIS element indices forming subsurface ``k``."""
        o = self.offsets
        return slice(int(o[k]), int(o[k + 1]))

    def block_ids(self):
        """Subsurface index of each RIS element."""
        return np.repeat(np.arange(self.K), self.partition)

    def link(self, k, name):
        """:class:`LinkParams` of link ``name`` in {'d', 'rb', 'ur'} for user ``k``."""
        beta = getattr(self, f"beta_{name}")[k]
        kappa = getattr(self, f"kappa_{name}")[k]
        return LinkParams(float(beta), float(kappa))

    def with_es(self, es_over_sigma2):
        return replace(self, es_over_sigma2=float(es_over_sigma2))

    def with_kappas(self, kappa_d=None, kappa_rb=None, kappa_ur=None):
        """Copy with K-factors overridden for all users (used by limit checks)."""
        upd = {}
        for name, val in (("kappa_d", kappa_d), ("kappa_rb", kappa_rb), ("kappa_ur", kappa_ur)):
            if val is not None:
                upd[name] = np.full(self.K, float(val))
        return replace(self, **upd)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One (or a batch of) draws of ``h_d``, ``H_rb`` and ``h_ur`` for all users."""

    h_d: np.ndarray
    H_rb: np.ndarray
    h_ur: np.ndarray

    @property
    def batched(self):
        return self.h_d.ndim == 3

    def replicate(self, b):
        """Unbatched realization for replicate ``b`` of a batch."""
        return ChannelRealization(self.h_d[b], self.H_rb[b], self.h_ur[b])

    @staticmethod
    def stack(items):
        return ChannelRealization(
            np.stack([c.h_d for c in items]),
            np.stack([c.H_rb for c in items]),
            np.stack([c.h_ur for c in items]))


def _sample_point(geom, rng):
    t = rng.uniform(0.0, geom.corridor_length)
    lat = rng.uniform(-geom.corridor_half_width, geom.corridor_half_width)
    return geom.ris + t * geom.axis + lat * geom.normal


def _draw_cluster(geom, size, rng, max_attempts):
    offs = (np.arange(size) - (size - 1) / 2.0)[:, None] * geom.axis[None, :]
    if size - 1 > geom.corridor_length:
        raise GeometryError(f"corridor of length {geom.corridor_length} m cannot hold "
                            f"{size} users spaced 1 m apart")
    for _ in range(max_attempts):
        pts = _sample_point(geom, rng)[None, :] + offs
        if np.all(geom.in_corridor(pts)):
            return pts
    raise GeometryError(f"no feasible cluster placement after {max_attempts} attempts")


def drop_users(layout, geometry, K, rng, max_attempts=1_000_000):
    """Draw ``K`` user positions for layout A, B or C.

    Layout A places one cluster of ``K`` users spaced 1 m apart along the
    corridor axis, layout B two clusters of ``K/2`` users, and layout C ``K``
    independent uniform positions. All points respect the RIS exclusion disc,
    which is enforced by rejection sampling.

    Returns
    -------
    ndarray, shape (K, 2)
    """
    if K < 1:
        raise DomainError("K must be >= 1")
    if layout == "A":
        return _draw_cluster(geometry, K, rng, max_attempts)
    if layout == "B":
        if K % 2:
            raise DomainError("layout B needs an even number of users")
        return np.concatenate([_draw_cluster(geometry, K // 2, rng, max_attempts)
                               for _ in range(2)])
    if layout == "C":
        return np.concatenate([_draw_cluster(geometry, 1, rng, max_attempts) for _ in range(K)])
    raise DomainError(f"unknown layout {layout!r}")


def build_scenario(config, ue_positions=None, layout="C", rng=None):
    """Assemble a :class:`Scenario` from a configuration and user positions.

    If ``ue_positions`` is omitted, users are dropped with ``layout`` using
    ``rng`` (seed 0 when no generator is supplied), which keeps the result a
    deterministic function of its inputs.
    """
    geom = config.geometry
    arrays = config.layout()
    part = config.resolved_partition()
    K, M, N = config.K, arrays.M, arrays.N
    if ue_positions is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        ue_positions = drop_users(layout, geom, K, rng)
    pos = np.asarray(ue_positions, dtype=float).reshape(K, 2)

    bs, ris = geom.bs, geom.ris
    d_rb = float(np.linalg.norm(ris - bs))
    d_ub = np.linalg.norm(pos - bs, axis=1)
    d_ur = np.linalg.norm(pos - ris, axis=1)
    beta_d = np.asarray(pathloss(d_ub, config.alpha_d, config.c0), float).reshape(K)
    beta_ur = np.asarray(pathloss(d_ur, config.alpha_ur, config.c0), float).reshape(K)
    beta_rb = np.full(K, pathloss(d_rb, config.alpha_rb, config.c0))

    theta = math.pi / 2
    az = lambda v: math.atan2(v[1], v[0])
    phi_bs_to_ris = az(ris - bs)
    phi_ris_to_bs = az(bs - ris)
    a_b = vura_steering(arrays.m_x, arrays.m_z, arrays.d_b, theta, phi_bs_to_ris)
    a_r = vura_steering(arrays.n_x, arrays.n_z, arrays.d_r, theta, phi_ris_to_bs)
    a_d = np.stack([vura_steering(arrays.m_x, arrays.m_z, arrays.d_b, theta, az(p - bs)) for p in pos])
    a_ur = np.stack([vura_steering(arrays.n_x, arrays.n_z, arrays.d_r, theta, az(p - ris)) for p in pos])

    R_b = sinc_correlation(grid_positions(arrays.m_x, arrays.m_z, arrays.d_b))
    R_r = sinc_correlation(grid_positions(arrays.n_x, arrays.n_z, arrays.d_r))
    S_b, S_r = psd_sqrt(R_b), psd_sqrt(R_r)
    tile = lambda A: np.broadcast_to(A, (K,) + A.shape)

    return Scenario(
        config=config, arrays=arrays, ue_positions=pos, partition=part,
        beta_d=beta_d, beta_rb=beta_rb, beta_ur=beta_ur,
        kappa_d=np.full(K, float(config.kappa_d)),
        kappa_rb=np.full(K, float(config.kappa_rb)),
        kappa_ur=np.full(K, float(config.kappa_ur)),
        a_d=a_d, a_b=tile(a_b), a_r=tile(a_r), a_ur=a_ur,
        R_d=tile(R_b), R_b=tile(R_b), R_r=tile(R_r), R_ur=tile(R_r),
        S_d=tile(S_b), S_b=tile(S_b), S_r=tile(S_r), S_ur=tile(S_r),
        es_over_sigma2=float(config.es_over_sigma2))


def _eta_zeta(kappa):
    kappa = np.asarray(kappa, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        eta = np.where(np.isinf(kappa), 1.0, np.sqrt(kappa / (kappa + 1.0)))
        zeta = np.where(np.isinf(kappa), 0.0, np.sqrt(1.0 / (kappa + 1.0)))
    return eta, zeta


def _cn(rng, shape):
    z = rng.standard_normal(shape + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5)


def draw_gaussians(s, rng):
    """The i.i.d. CN(0, 1) inputs of one realization, drawn in a fixed order."""
    K, M, N = s.K, s.M, s.N
    return _cn(rng, (K, M)), _cn(rng, (K, M, N)), _cn(rng, (K, N))


def channels_from_gaussians(s, u_d, U_rb, u_ur):
    """Map standard complex Gaussians (optionally batched) to channels.

    ``h_d = sqrt(beta_d)(eta_d a_d + zeta_d R_d^{1/2} u)``,
    ``H_rb = sqrt(beta_rb)(eta_rb a_b a_r^H + zeta_rb R_b^{1/2} U R_r^{1/2})`` and
    ``h_ur = sqrt(beta_ur)(eta_ur a_ur + zeta_ur R_ur^{1/2} u)``.
    """
    eta_d, zeta_d = _eta_zeta(s.kappa_d)
    eta_rb, zeta_rb = _eta_zeta(s.kappa_rb)
    eta_ur, zeta_ur = _eta_zeta(s.kappa_ur)
    col = lambda v: v[:, None]
    h_d = np.sqrt(s.beta_d)[:, None] * (
        col(eta_d) * s.a_d + col(zeta_d) * np.matmul(s.S_d, u_d[..., None])[..., 0])
    los = s.a_b[:, :, None] * s.a_r.conj()[:, None, :]
    scat = np.matmul(np.matmul(s.S_b, U_rb), s.S_r)
    H_rb = np.sqrt(s.beta_rb)[:, None, None] * (
        eta_rb[:, None, None] * los + zeta_rb[:, None, None] * scat)
    h_ur = np.sqrt(s.beta_ur)[:, None] * (
        col(eta_ur) * s.a_ur + col(zeta_ur) * np.matmul(s.S_ur, u_ur[..., None])[..., 0])
    return ChannelRealization(h_d, H_rb, h_ur)


def sample_channels(s, rng):
    """Draw channels for all users.

    Parameters
    ----------
    s : Scenario
    rng : numpy.random.Generator or sequence of Generators
        A single generator yields one realization; a sequence yields a batch
        whose replicate ``b`` depends only on ``rng[b]``.
    """
    if isinstance(rng, np.random.Generator):
        return channels_from_gaussians(s, *draw_gaussians(s, rng))
    draws = [draw_gaussians(s, g) for g in rng]
    u_d = np.stack([d[0] for d in draws])
    U = np.stack([d[1] for d in draws])
    u_ur = np.stack([d[2] for d in draws])
    return channels_from_gaussians(s, u_d, U, u_ur)
