"""Real-argument special functions and correlated Ricean moment series.

The two double series evaluated here are

* ``F_R = E[|h_i| |h_j|] / beta``, the normalized cross-moment of two
  correlated Ricean envelopes, and
* ``G_R = E[exp(j arg h_i) exp(-j arg h_j)]``, the cross-moment of their
  unit phasors,

for ``h = sqrt(beta) (eta a + zeta w)`` with unit-modulus LoS entries ``a`` and
scattered part ``w`` having ``E[w_i conj(w_j)] = rho``. Both series share one
table of ``log 1F1(m + 1/2, b, X)`` values, built by a forward recurrence in
the first parameter, so that each pair costs O(M^2) array operations.

All series are summed in float64 with explicit log scaling so that terms far
outside the float range can still be combined.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass

import numpy as np
from scipy.special import ive, roots_hermite

from .errors import DomainError, SeriesConvergenceError

__all__ = [
    "SeriesControl",
    "FRParams",
    "GRParams",
    "ln_gamma",
    "hyp1f1",
    "hyp2f1",
    "laguerre_half",
    "eval_fr",
    "eval_gr",
    "fr_batch",
    "gr_batch",
    "rice_mean",
    "phasor_mean",
    "rice_abs_times_value",
]

# Lanczos approximation, g = 7, nine coefficients.
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_RESCALE = 1e250


@dataclass(frozen=True)
class SeriesControl:
    """Truncation control for the F_R and G_R double series.

    Parameters
    ----------
    rel_tol : float
        Relative tolerance on the estimated tail of the outer series.
    max_terms : int
        Cap on the outer summation index.
    fallback : bool
        If true, pairs the series cannot certify (not converged within
        ``max_terms``, or float64 cancellation above ``rel_tol``) are
        evaluated by conditional-Gaussian quadrature instead. If false such
        pairs raise :class:`SeriesConvergenceError`.
    """

    rel_tol: float = 1e-10
    max_terms: int = 200
    fallback: bool = True

    def __post_init__(self):
        if not (0.0 < self.rel_tol < 1e-3):
            raise DomainError(f"rel_tol must lie in (0, 1e-3), got {self.rel_tol}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 16:
            raise DomainError(f"max_terms must be an integer >= 16, got {self.max_terms}")


def _check_pair(kappa_ur, rho_abs):
    if not (kappa_ur >= 0.0):
        raise DomainError(f"kappa_ur must be >= 0, got {kappa_ur}")
    if not (0.0 <= rho_abs < 1.0):
        raise DomainError(f"rho_abs must lie in [0, 1), got {rho_abs}")


@dataclass(frozen=True)
class FRParams:
    """Inputs of the envelope cross-moment F_R.

    ``rho_abs`` and ``rho_phase`` describe ``rho = E[w_i conj(w_j)]`` and
    ``delta_angle`` is ``arg a_i - arg a_j``.
    """

    kappa_ur: float
    rho_abs: float
    rho_phase: float = 0.0
    delta_angle: float = 0.0

    def __post_init__(self):
        _check_pair(self.kappa_ur, self.rho_abs)


@dataclass(frozen=True)
class GRParams:
    """Inputs of the phasor cross-moment G_R.

    ``rho = rho_abs * exp(j rho_phase) = E[w_i conj(w_j)]``; ``angle_i`` and
    ``angle_j`` are the LoS phases of elements i and j.
    """

    kappa_ur: float
    rho_abs: float
    rho_phase: float
    angle_i: float
    angle_j: float

    def __post_init__(self):
        _check_pair(self.kappa_ur, self.rho_abs)

    @property
    def _u(self):
        return self.rho_abs * np.exp(1j * (self.rho_phase - (self.angle_i - self.angle_j)))

    @property
    def mu_c(self):
        """Real part of rho rotated by the LoS phase difference."""
        return float(self._u.real)

    @property
    def mu_s(self):
        """Imaginary part of rho rotated by the LoS phase difference."""
        return float(self._u.imag)

    @property
    def kappa0(self):
        """Scale of the envelope coupling term, 2|rho|(1+kappa)/(1-|rho|^2)."""
        return 2.0 * self.rho_abs * (1.0 + self.kappa_ur) / (1.0 - self.rho_abs**2)

    @property
    def series_scale(self):
        """Scale of the LoS coupling term, 2 sqrt(1+kappa)/(1-|rho|^2)."""
        return 2.0 * math.sqrt(1.0 + self.kappa_ur) / (1.0 - self.rho_abs**2)

    @property
    def phi(self):
        """Angle of rho * conj(b_i) * b_j with b the whitened LoS drifts."""
        _, _, _, phi, _ = _pair_geometry(
            np.float64(self.kappa_ur), np.float64(self.rho_abs),
            np.float64(self.rho_phase), np.float64(self.angle_i - self.angle_j))
        return float(phi)


# ---------------------------------------------------------------------------
# Gamma function
# ---------------------------------------------------------------------------

def _ln_gamma_pos(x):
    x = np.asarray(x, dtype=float)
    small = x < 0.5
    y = np.where(small, x + 1.0, x)
    z = y - 1.0
    s = np.full_like(z, _LANCZOS[0])
    for i in range(1, len(_LANCZOS)):
        s = s + _LANCZOS[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    res = _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(s)
    res = np.where(small, res - np.log(x), res)
    return np.where((x == 1.0) | (x == 2.0), 0.0, res)


def ln_gamma(x):
    """Natural logarithm of the gamma function for positive arguments.

    Parameters
    ----------
    x : float or array_like
        Positive argument(s).

    Returns
    -------
    float or ndarray
        ``ln Gamma(x)``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0.0)) or np.any(~np.isfinite(arr)):
        raise DomainError("ln_gamma requires finite x > 0")
    out = _ln_gamma_pos(arr)
    return float(out) if out.ndim == 0 else out


def _gamma_signed(x):
    """Gamma function for real non-pole x, via reflection below 1/2."""
    if x > 0:
        return math.exp(_ln_gamma_pos(x))
    if x == math.floor(x):
        raise DomainError(f"gamma has a pole at {x}")
    return math.pi / (math.sin(math.pi * x) * _gamma_signed(1.0 - x))


def _is_nonpositive_int(v):
    return v <= 0 and v == math.floor(v)


# ---------------------------------------------------------------------------
# Confluent hypergeometric function
# ---------------------------------------------------------------------------

def _series_1f1(a, b, z, rel_tol=1e-15, max_terms=200000):
    """Sum the 1F1 power series for z >= 0, elementwise.

    Returns ``(mantissa, log_scale)`` with value ``mantissa * exp(log_scale)``.
    """
    a, b, z = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float),
                                  np.asarray(z, float))
    shape = a.shape
    a, b, z = a.ravel(), b.ravel(), z.ravel()
    s = np.ones(a.size)
    t = np.ones(a.size)
    ls = np.zeros(a.size)
    done = z == 0.0
    active = np.flatnonzero(~done)
    k = 0
    prev_ratio = np.full(a.size, np.inf)
    while active.size:
        if k >= max_terms:
            raise SeriesConvergenceError(f"1F1 series not converged after {max_terms} terms")
        ai, bi, zi = a[active], b[active], z[active]
        ti = t[active] * ((ai + k) * zi / ((bi + k) * (k + 1.0)))
        si = s[active] + ti
        big = (np.abs(si) > _RESCALE) | (np.abs(ti) > _RESCALE)
        if big.any():
            f = np.maximum(np.abs(si[big]), np.abs(ti[big]))
            si[big] /= f
            ti[big] /= f
            ls[active[big]] += np.log(f)
        t[active] = ti
        s[active] = si
        k += 1
        rn = np.abs((ai + k) * zi / ((bi + k) * (k + 1.0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(rn < 1.0, np.abs(ti) * rn / (1.0 - rn), np.inf)
        settled = (ai + k > 0) & (bi + k > 0) & (rn <= prev_ratio[active])
        conv = (ti == 0.0) | (settled & (tail <= rel_tol * np.abs(si)))
        prev_ratio[active] = rn
        active = active[~conv]
    return s.reshape(shape), ls.reshape(shape)


_ASYM_MIN = 60.0


def _asym_1f1_neg(a, b, x, rel_tol=1e-15):
    """Large-``x`` expansion of ``1F1(a; b; -x)``, or ``None`` if it cannot certify.

    Uses ``Gamma(b)/Gamma(b-a) x^-a sum_n (a)_n (a-b+1)_n / (n! x^n)``; the
    exponentially small companion must sit below ``rel_tol`` of the result.
    """
    if x < _ASYM_MIN or _is_nonpositive_int(a) or _is_nonpositive_int(b - a):
        return None
    s, t = 1.0, 1.0
    for n in range(200):
        nxt = t * (a + n) * (a - b + 1.0 + n) / ((n + 1.0) * x)
        if abs(nxt) > abs(t):
            return None
        t = nxt
        s += t
        if abs(t) <= rel_tol * abs(s):
            break
    else:
        return None
    g_b = _gamma_signed(b)
    main = g_b / _gamma_signed(b - a) * x ** (-a) * s
    companion = abs(g_b / _gamma_signed(a)) * math.exp(-x) * x ** (a - b)
    if main == 0.0 or companion > rel_tol * abs(main):
        return None
    return main


def hyp1f1(a, b, z, rel_tol=1e-15, max_terms=200000):
    """Kummer's confluent hypergeometric function 1F1(a; b; z) for real arguments.

    Negative ``z`` is mapped through ``1F1(a; b; z) = e^z 1F1(b - a; b; -z)``
    so that the summed series has no alternating cancellation from ``z``.

    Parameters
    ----------
    a, b, z : float
        Parameters and argument; ``b`` must not be a non-positive integer.
    rel_tol : float, optional
        Relative tolerance on the bounded series tail.
    max_terms : int, optional
        Term cap; exceeding it raises :class:`SeriesConvergenceError`.

    Returns
    -------
    float
    """
    a, b, z = float(a), float(b), float(z)
    if _is_nonpositive_int(b):
        raise DomainError(f"1F1 undefined for b = {b}")
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(z)):
        raise DomainError("1F1 requires finite arguments")
    if z == 0.0:
        return 1.0
    if z < 0.0:
        v = _asym_1f1_neg(a, b, -z, rel_tol)
        if v is not None:
            return v
    elif z > _ASYM_MIN and z < 709.0:
        v = _asym_1f1_neg(b - a, b, z, rel_tol)
        if v is not None:
            return math.exp(z) * v
    if z > 0.0:
        m, ls = _series_1f1(a, b, z, rel_tol, max_terms)
        shift = float(ls)
    else:
        m, ls = _series_1f1(b - a, b, -z, rel_tol, max_terms)
        shift = float(ls) + z
    m = float(m)
    if m == 0.0:
        return 0.0
    lg = math.log(abs(m)) + shift
    if lg > 709.0:
        return math.copysign(math.inf, m)
    return m * math.exp(shift)


def _hyp1f1_scaled(a, b, x):
    """``exp(-x) * 1F1(a; b; x)`` for x >= 0, elementwise and overflow free."""
    if np.ndim(x) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0:
        v = _asym_1f1_neg(float(b) - float(a), float(b), float(x))
        if v is not None:
            return v
    m, ls = _series_1f1(a, b, x)
    return m * np.exp(ls - np.asarray(x, float))


def laguerre_half(x):
    """Laguerre function of degree 1/2, ``L_{1/2}(x) = 1F1(-1/2; 1; x)``."""
    return hyp1f1(-0.5, 1.0, x)


# ---------------------------------------------------------------------------
# Gauss hypergeometric function
# ---------------------------------------------------------------------------

def hyp2f1(a, b, c, z, rel_tol=1e-15, max_terms=10_000_000):
    """Gauss hypergeometric function 2F1(a, b; c; z) for 0 <= z <= 1.

    At ``z = 1`` the Gauss summation theorem is used, which requires
    ``c - a - b > 0``.
    """
    a, b, c, z = float(a), float(b), float(c), float(z)
    if _is_nonpositive_int(c):
        raise DomainError(f"2F1 undefined for c = {c}")
    if not (0.0 <= z <= 1.0):
        raise DomainError(f"2F1 implemented for 0 <= z <= 1, got {z}")
    if z == 0.0:
        return 1.0
    if z == 1.0:
        if not (c - a - b > 0.0):
            raise DomainError("2F1 at z = 1 requires c - a - b > 0")
        return (_gamma_signed(c) * _gamma_signed(c - a - b)
                / (_gamma_signed(c - a) * _gamma_signed(c - b)))
    chunk = 4096
    total = 0.0
    t_last = 1.0
    k0 = 0
    prev_ratio = math.inf
    while k0 < max_terms:
        k = np.arange(k0, k0 + chunk, dtype=float)
        ratio = (a + k) * (b + k) / ((c + k) * (k + 1.0)) * z
        terms = t_last * np.concatenate(([1.0], np.cumprod(ratio[:-1])))
        partial = total + np.cumsum(terms)
        rn = np.abs(ratio)
        prev = np.concatenate(([prev_ratio], rn[:-1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(rn < 1.0, np.abs(terms) * rn / (1.0 - rn), np.inf)
        settled = (a + k + 1 > 0) & (b + k + 1 > 0) & (c + k + 1 > 0) & (rn <= prev)
        ok = (terms == 0.0) | (settled & (tail <= rel_tol * np.abs(partial)))
        hit = np.flatnonzero(ok)
        if hit.size:
            return float(partial[hit[0]])
        total = float(partial[-1])
        t_last = float(terms[-1] * ratio[-1])
        prev_ratio = float(rn[-1])
        k0 += chunk
    raise SeriesConvergenceError(f"2F1 series not converged after {max_terms} terms")


# ---------------------------------------------------------------------------
# Single-variable Ricean moments
# ---------------------------------------------------------------------------

def rice_mean(kappa):
    """``E|x| / sqrt(E|x|^2)`` for a Ricean variable with K-factor ``kappa``.

    Equals ``zeta (sqrt(pi)/2) L_{1/2}(-kappa)``, with limit 1 as kappa grows.
    """
    kappa = float(kappa)
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    if math.isinf(kappa):
        return 1.0
    return math.sqrt(1.0 / (1.0 + kappa)) * 0.5 * math.sqrt(math.pi) * laguerre_half(-kappa)


def phasor_mean(kappa):
    """Magnitude of ``E[exp(j arg x)]`` for a Ricean variable, ``(sqrt(pi kappa)/2) 1F1(1/2; 2; -kappa)``.

    The phase of the expectation equals the phase of the LoS component.
    """
    kappa = float(kappa)
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    if math.isinf(kappa):
        return 1.0
    if kappa == 0.0:
        return 0.0
    return 0.5 * math.sqrt(math.pi * kappa) * hyp1f1(0.5, 2.0, -kappa)


def rice_abs_times_value(kappa):
    """``E[|x| x] / (E|x|^2 e^{j arg a})`` for a Ricean variable.

    Equals ``zeta^2 sqrt(kappa) Gamma(5/2) e^{-kappa} 1F1(5/2; 2; kappa)``.
    """
    kappa = float(kappa)
    if kappa < 0:
        raise DomainError("kappa must be >= 0")
    if math.isinf(kappa):
        return 1.0
    if kappa == 0.0:
        return 0.0
    g52 = 0.75 * math.sqrt(math.pi)
    return math.sqrt(kappa) / (1.0 + kappa) * g52 * float(_hyp1f1_scaled(2.5, 2.0, kappa))


# ---------------------------------------------------------------------------
# F_R and G_R double series
# ---------------------------------------------------------------------------

def _pair_geometry(kappa, r, theta, delta):
    """Whitened quantities shared by F_R and G_R.

    Returns ``X``, the exponent ``E0``, ``psi`` (phase difference of the
    whitened drifts), ``phi`` (angle of rho conj(b_i) b_j) and ``log r``.
    """
    u = r * np.exp(1j * (theta - delta))
    mu_c = u.real
    one_m = 1.0 - r * r
    X = kappa * np.maximum(1.0 + r * r - 2.0 * mu_c, 0.0) / one_m
    E0 = X + kappa
    psi = delta + 2.0 * np.angle(1.0 - u)
    phi = theta - psi
    with np.errstate(divide="ignore"):
        lr = np.log(r)
    return X, E0, psi, phi, lr


def _log_1f1_table(X, n_rows):
    """``T[p, i, b-1] = log 1F1(i + 1/2; b; X[p])`` for ``1 <= b <= i + 1``.

    Entries with ``b > i + 1`` are NaN. Seeds on the two diagonals
    ``a = b -/+ 1/2`` are summed directly; the remainder follows from
    ``a F(a+1) = (2a - b + X) F(a) + (b - a) F(a-1)``, which for ``b <= a``
    has no destructive cancellation because ``1F1`` increases with ``a``.
    """
    P = X.size
    T = np.full((P, n_rows, n_rows), np.nan)
    bs = np.arange(1, n_rows + 1, dtype=float)
    A = np.concatenate([bs - 0.5, bs + 0.5])
    B = np.concatenate([bs, bs])
    m, ls = _series_1f1(A[None, :], B[None, :], X[:, None])
    seeds = np.log(m) + ls
    idx = np.arange(n_rows)
    T[:, idx, idx] = seeds[:, :n_rows]
    T[:, idx[1:], idx[:-1]] = seeds[:, n_rows:2 * n_rows - 1]
    Xc = X[:, None]
    for i in range(2, n_rows):
        a = i - 0.5
        b = bs[: i - 1][None, :]
        Lc = T[:, i - 1, : i - 1]
        Lp = T[:, i - 2, : i - 1]
        bracket = (2.0 * a - b + Xc - (a - b) * np.exp(Lp - Lc)) / a
        T[:, i, : i - 1] = Lc + np.log(bracket)
    return T


class _Grids:
    """Coefficient grids ``(m, n)`` for the two series, cached per size."""

    _cache: dict = {}

    @classmethod
    def get(cls, n_outer):
        g = cls._cache.get(n_outer)
        if g is None:
            g = cls._build(n_outer)
            cls._cache[n_outer] = g
        return g

    @staticmethod
    def _build(M):
        m = np.arange(M, dtype=float)[:, None]
        n = np.arange(M, dtype=float)[None, :]
        lower = n <= m
        lg = lambda v: _ln_gamma_pos(np.maximum(v, 0.5))
        mmn = np.where(lower, m - n, 0.0)
        g = {}
        eps = np.where(n == 0, 0.0, math.log(2.0))
        g["fr_coef"] = np.where(
            lower,
            eps + 2 * lg(m + 1.5) - lg(m + 1) - lg(mmn + 1) - 2 * lg(n + 1),
            -np.inf)
        g["fr_r"] = np.where(lower, 2 * m - n, 0.0)
        g["fr_x"] = np.where(lower, n, 0.0)
        # n >= 1 terms of G_R, stored at column j = n - 1 < m
        npos = n + 1
        strict = npos <= m
        mmp = np.where(strict, m - npos, 0.0)
        g["gp_coef"] = np.where(
            strict,
            2 * lg(m + 0.5) - lg(mmp + 1) - lg(m + 1) - 2 * lg(npos),
            -np.inf)
        g["gp_r"] = np.where(strict, 2 * m - npos, 0.0)
        g["gp_x"] = np.where(strict, npos - 1, 0.0)
        g["gp_n"] = npos
        # n = 0 term of G_R
        g["g0_coef"] = (2 * lg(m + 1.5) - 2 * lg(m + 1))[:, 0]
        g["g0_r"] = (2 * m)[:, 0]
        # n = -n' terms of G_R, stored at column j = n' - 1 < m
        g["gn_coef"] = np.where(
            strict,
            2 * lg(m + 1.5) - lg(mmp + 1) - lg(m + 1) - 2 * lg(npos + 2),
            -np.inf)
        g["gn_r"] = g["gp_r"]
        g["gn_x"] = np.where(strict, npos + 1, 0.0)
        return g


def _powers(cr, cx, lr, lX):
    """``cr*log r + cx*log X`` with the convention ``0 * log 0 = 0``."""
    pr = np.where(cr == 0, 0.0, cr * lr)
    px = np.where(cx == 0, 0.0, cx * lX)
    return pr + px


def _truncate(blocks, absblocks, rel_tol):
    """Locate the first outer block whose estimated tail is below tolerance.

    ``blocks`` are the outer contributions and ``absblocks`` the sums of the
    absolute inner terms. The tail after block m is bounded geometrically
    from the ratio of consecutive absolute blocks. Returns the truncated
    values, a convergence mask and the absolute sum up to the truncation
    point (used for the rounding-error estimate).
    """
    S = np.cumsum(blocks, axis=1)
    A = absblocks
    Aprev = np.concatenate([np.zeros((A.shape[0], 1)), A[:, :-1]], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(Aprev > 0, A / Aprev, np.where(A > 0, np.inf, 0.0))
        tail = np.where(q < 1.0, A * np.maximum(1.0, q / (1.0 - q)), np.inf)
    ok = ((A == 0) & (Aprev == 0)) | ((q < 1.0) & (tail <= rel_tol * np.abs(S)))
    ok[:, 0] = False
    conv = ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    rows = np.arange(S.shape[0])
    return S[rows, first], conv, np.cumsum(A, axis=1)[rows, first]


def _fr_block(X, E0, phi, lr, kappa, r, M):
    g = _Grids.get(M)
    T = _log_1f1_table(X, M + 1)
    Ts = T[:, 1 : M + 1, :M]
    Ts = np.where(np.isnan(Ts), 0.0, Ts)
    with np.errstate(divide="ignore"):
        lX = np.log(X)
        pre = 2.0 * np.log1p(-r * r) - np.log1p(kappa) - E0
    logmag = (g["fr_coef"][None] + 2.0 * Ts
              + _powers(g["fr_r"][None], g["fr_x"][None], lr[:, None, None], lX[:, None, None])
              + pre[:, None, None])
    mag = np.exp(logmag)
    n = np.arange(M)[None, None, :]
    blocks = np.sum(np.cos(n * phi[:, None, None]) * mag, axis=2)
    return blocks, np.sum(mag, axis=2), _log_span(Ts, E0)


def _gr_block(X, E0, psi, phi, lr, r, M):
    g = _Grids.get(M)
    T = _log_1f1_table(X, M + 2)
    T = np.where(np.isnan(T), 0.0, T)
    with np.errstate(divide="ignore"):
        lX = np.log(X)
        pre = np.log1p(-r * r) - E0
    lrb, lXb, preb = lr[:, None, None], lX[:, None, None], pre[:, None, None]
    # n >= 1: row m, column b = n
    lp = (g["gp_coef"][None] + 2.0 * T[:, :M, :M]
          + _powers(g["gp_r"][None], g["gp_x"][None], lrb, lXb) + preb)
    mp_ = np.exp(lp)
    nn = g["gp_n"][None]
    ph = phi[:, None, None]
    pos = np.sum(mp_ * np.exp(1j * nn * ph), axis=2)
    # n <= -1: row m+1, column b = n' + 2
    ln_ = (g["gn_coef"][None] + 2.0 * T[:, 1 : M + 1, 2 : M + 2]
           + _powers(g["gn_r"][None], g["gn_x"][None], lrb, lXb) + preb)
    mn_ = np.exp(ln_)
    neg = np.sum(mn_ * np.exp(-1j * nn * ph), axis=2)
    # n = 0: row m+1, column b = 2
    l0 = (g["g0_coef"][None] + 2.0 * T[:, 1 : M + 1, 1]
          + _powers(g["g0_r"][None], np.ones(1)[None], lr[:, None], lX[:, None]) + pre[:, None])
    m0 = np.exp(l0)
    blocks = np.exp(1j * psi)[:, None] * (pos + neg + m0)
    return blocks, np.sum(mp_, axis=2) + np.sum(mn_, axis=2) + m0, _log_span(T, E0)


def _log_span(T, E0):
    """Largest log-magnitude combined in a term, which sets its rounding error."""
    return 2.0 * np.max(np.abs(T), axis=(1, 2)) + E0 + 50.0


def _max_pairs(M):
    return max(1, int(4_000_000 // ((M + 1) ** 2)))


_EPS = np.finfo(float).eps


def _series_pass(kind, kappa, r, theta, delta, ctl):
    """Evaluate the double series; flag pairs whose float64 sum is unreliable.

    Returns ``(values, trusted)``. A pair is untrusted when its terms overflow
    or when the estimated rounding error of the oscillating inner sums
    exceeds ``rel_tol`` of the result.
    """
    out = np.zeros(kappa.size, dtype=complex if kind == "gr" else float)
    trusted = np.ones(kappa.size, dtype=bool)
    todo = np.arange(kappa.size)
    M = 48
    while todo.size:
        M = min(M, ctl.max_terms)
        remaining = []
        step = _max_pairs(M)
        for c0 in range(0, todo.size, step):
            sel = todo[c0 : c0 + step]
            X, E0, psi, phi, lr = _pair_geometry(kappa[sel], r[sel], theta[sel], delta[sel])
            with np.errstate(over="ignore", invalid="ignore"):
                if kind == "fr":
                    blocks, absb, span = _fr_block(X, E0, phi, lr, kappa[sel], r[sel], M)
                else:
                    blocks, absb, span = _gr_block(X, E0, psi, phi, lr, r[sel], M)
                bad = ~np.all(np.isfinite(blocks) & np.isfinite(absb), axis=1)
                vals, conv, abs_sum = _truncate(blocks, absb, ctl.rel_tol)
                err = 4.0 * _EPS * span * abs_sum
                lossy = ~(err <= ctl.rel_tol * np.abs(vals))
            untrusted = bad | (conv & lossy)
            trusted[sel[untrusted]] = False
            done = conv & ~untrusted
            out[sel[done]] = vals[done]
            remaining.append(sel[~conv & ~untrusted])
        todo = np.concatenate(remaining)
        if todo.size:
            if M >= ctl.max_terms:
                if not ctl.fallback:
                    raise SeriesConvergenceError(
                        f"{kind.upper()} series not converged within max_terms={ctl.max_terms}")
                trusted[todo] = False
                break
            M *= 2
    return out, trusted


def _quad_pass(kind, kappa, r, theta, delta, rel_tol, n0=48, n_max=256):
    """Conditional-Gaussian evaluation of F_R or G_R.

    The scattered pair is split as w_i = sqrt(r) c + sqrt(1-r) d_i and
    w_j = e^{-j theta}(sqrt(r) c + sqrt(1-r) d_j) with c, d_i, d_j i.i.d.
    CN(0, 1). Given c the two entries are independent Ricean variables, so the
    inner expectations are single-variable Ricean moments and the outer one is
    a smooth two-dimensional Gaussian integral over c.

    A Gauss-Hermite product rule is tried first. For strongly correlated pairs
    the integrand varies on a scale sqrt((1-r)/r) around the points where the
    conditional means vanish; those pairs move to a composite Gauss-Legendre
    rule whose panels shrink geometrically towards the two points.
    """
    out = np.empty(kappa.size, dtype=complex if kind == "gr" else float)
    for p in range(kappa.size):
        args = (kind, kappa[p], r[p], theta[p], delta[p])
        prev, n = None, n0
        while True:
            val = _quad_hermite(*args, n)
            if prev is not None and abs(val - prev) <= rel_tol * abs(val):
                break
            if n >= n_max:
                val = _quad_panels_settled(*args, rel_tol)
                break
            prev, n = val, min(int(n * 1.5), n_max)
        out[p] = val
    return out


def _pair_integrand(kind, kappa, r, theta, delta, c, W):
    eta = math.sqrt(kappa / (1.0 + kappa))
    s = math.sqrt(1.0 / (1.0 + kappa))
    v = s * s * (1.0 - r)
    mi = eta + s * math.sqrt(r) * c
    mj = eta * np.exp(-1j * delta) + s * math.sqrt(r) * np.exp(-1j * theta) * c
    Ki = np.abs(mi) ** 2 / v
    Kj = np.abs(mj) ** 2 / v
    # e^{-K} 1F1(3/2; 1; K) and sqrt(K) e^{-K} 1F1(3/2; 2; K) in scaled Bessel form
    i0i, i1i = ive(0, Ki / 2), ive(1, Ki / 2)
    i0j, i1j = ive(0, Kj / 2), ive(1, Kj / 2)
    if kind == "fr":
        gi = (1.0 + Ki) * i0i + Ki * i1i
        gj = (1.0 + Kj) * i0j + Kj * i1j
        return float(np.sum(W * gi * gj) * (math.pi / 4.0) * v)
    pi_ = np.sqrt(Ki) * (i0i + i1i) * np.exp(1j * np.angle(mi))
    pj = np.sqrt(Kj) * (i0j + i1j) * np.exp(1j * np.angle(mj))
    return complex(np.sum(W * pi_ * np.conj(pj)) * (math.pi / 4.0))


@lru_cache(maxsize=32)
def _hermite_rule(n):
    # scipy's rule stays finite for large n where numpy's weights overflow
    t, w = roots_hermite(n)
    keep = w > 1e-30 * w.max()
    return t[keep], w[keep]


def _quad_hermite(kind, kappa, r, theta, delta, n):
    t, w = _hermite_rule(n)
    c = (t[:, None] + 1j * t[None, :]).ravel()
    W = (w[:, None] * w[None, :]).ravel() / np.pi
    return _pair_integrand(kind, kappa, r, theta, delta, c, W)


_BOX = 7.0  # |Re c|, |Im c| beyond this carry < e^-49 of the Gaussian mass


def _panel_nodes(centres, width, order):
    """Composite Gauss-Legendre nodes on [-_BOX, _BOX] refined around ``centres``."""
    br = list(np.arange(-_BOX, _BOX + 0.5, 1.0))
    steps = width * 2.0 ** np.arange(-2, max(int(math.log2(2.0 / width)), -2) + 1)
    for x in centres:
        br += [x] + list(x - steps) + list(x + steps)
    br = np.unique(np.clip(br, -_BOX, _BOX))
    br = br[np.concatenate(([True], np.diff(br) > 1e-13))]
    g, gw = np.polynomial.legendre.leggauss(order)
    a, b = br[:-1, None], br[1:, None]
    x = ((b - a) / 2 * g + (a + b) / 2).ravel()
    w = ((b - a) / 2 * gw).ravel()
    return x, w * np.exp(-x * x)


def _quad_panels(kind, kappa, r, theta, delta, order):
    eta = math.sqrt(kappa / (1.0 + kappa))
    s = math.sqrt(1.0 / (1.0 + kappa))
    scale = s * math.sqrt(r)
    zi = -eta / scale
    zj = -eta * np.exp(1j * (theta - delta)) / scale
    width = max(math.sqrt((1.0 - r) / r), 1e-6)
    xr, wr = _panel_nodes((zi, zj.real), width, order)
    xi, wi = _panel_nodes((0.0, zj.imag), width, order)
    c = (xr[:, None] + 1j * xi[None, :]).ravel()
    W = (wr[:, None] * wi[None, :]).ravel() / np.pi
    return _pair_integrand(kind, kappa, r, theta, delta, c, W)


def _quad_panels_settled(kind, kappa, r, theta, delta, rel_tol):
    # both moments are O(1) (|G_R| <= 1), so the tolerance has an absolute floor
    prev = _quad_panels(kind, kappa, r, theta, delta, 6)
    for order in (10, 16, 24):
        val = _quad_panels(kind, kappa, r, theta, delta, order)
        if abs(val - prev) <= rel_tol * max(abs(val), 1.0):
            return val
        prev = val
    raise SeriesConvergenceError(
        f"{kind.upper()} quadrature did not settle (|diff|={abs(val - prev):.3g})")


def _run_series(kind, kappa, r, theta, delta, ctl):
    kappa, r, theta, delta = (np.asarray(v, float).ravel() for v in
                              np.broadcast_arrays(kappa, r, theta, delta))
    if np.any(~(kappa >= 0)) or np.any(~((r >= 0) & (r < 1))):
        raise DomainError("need kappa >= 0 and 0 <= rho_abs < 1")
    out = np.empty(kappa.size, dtype=complex if kind == "gr" else float)
    los = np.isinf(kappa)
    out[los] = 1.0 if kind == "fr" else np.exp(1j * delta[los])
    idx = np.flatnonzero(~los)
    if idx.size:
        vals, trusted = _series_pass(kind, kappa[idx], r[idx], theta[idx], delta[idx], ctl)
        out[idx] = vals
        bad = idx[~trusted]
        if bad.size and not ctl.fallback:
            raise SeriesConvergenceError(
                f"{kind.upper()} series lost precision for {bad.size} pair(s) and fallback is off")
        if bad.size:
            out[bad] = _quad_pass(kind, kappa[bad], r[bad], theta[bad], delta[bad], ctl.rel_tol)
    return out


def fr_batch(kappa_ur, rho_abs, rho_phase, delta_angle, ctl=None):
    """Vectorized :func:`eval_fr` over broadcast parameter arrays."""
    ctl = ctl or SeriesControl()
    shape = np.broadcast(kappa_ur, rho_abs, rho_phase, delta_angle).shape
    return _run_series("fr", kappa_ur, rho_abs, rho_phase, delta_angle, ctl).reshape(shape)


def gr_batch(kappa_ur, rho_abs, rho_phase, delta_angle, ctl=None):
    """Vectorized :func:`eval_gr`; ``delta_angle = angle_i - angle_j``."""
    ctl = ctl or SeriesControl()
    shape = np.broadcast(kappa_ur, rho_abs, rho_phase, delta_angle).shape
    return _run_series("gr", kappa_ur, rho_abs, rho_phase, delta_angle, ctl).reshape(shape)


def eval_fr(p, ctl=None):
    """Normalized envelope cross-moment ``E[|h_i||h_j|] / beta``.

    Parameters
    ----------
    p : FRParams
    ctl : SeriesControl, optional

    Returns
    -------
    float
        Positive real value; 1 in the pure LoS limit.
    """
    return float(fr_batch(p.kappa_ur, p.rho_abs, p.rho_phase, p.delta_angle, ctl))


def eval_gr(p, ctl=None):
    """Phasor cross-moment ``E[exp(j arg h_i) exp(-j arg h_j)]``.

    Parameters
    ----------
    p : GRParams
    ctl : SeriesControl, optional

    Returns
    -------
    complex
        Value inside the closed unit disc.
    """
    return complex(gr_batch(p.kappa_ur, p.rho_abs, p.rho_phase, p.angle_i - p.angle_j, ctl))
