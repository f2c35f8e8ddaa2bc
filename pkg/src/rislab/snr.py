"""Instantaneous SNR terms and closed-form mean SNR under LoS subsurface design.

For user ``k`` the received SNR splits as

    SNR_k = (Es/sigma^2) [h_d'h_d + 2Re(h_d'f) + 2Re(h_d'g) + 2Re(f'g) + f'f + g'g]

with ``f`` the contribution of the user's own subsurface and ``g`` that of all
other subsurfaces. :class:`SnrBreakdown` stores the six bracketed quantities
unscaled (the 2Re terms as real parts) and ``total`` with the ``Es/sigma^2``
factor applied.

The analytic expectations assume every subsurface is set by
:func:`rislab.phase.sd_los` for its own user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import specfun
from .errors import DomainError, MisuseError

TERMS = ("t_hdhd", "t_hdf", "t_hdg", "t_fg", "t_ff", "t_gg")
WEIGHTS = np.array([1.0, 2.0, 2.0, 2.0, 1.0, 1.0])
RHO_CLAMP = 1.0 - 1e-9


@dataclass(frozen=True)
class SnrBreakdown:
    """The six SNR terms of one user (unscaled) and the scaled total."""

    t_hdhd: float
    t_hdf: float
    t_hdg: float
    t_fg: float
    t_ff: float
    t_gg: float
    es_over_sigma2: float = 1.0

    @property
    def total(self):
        return self.es_over_sigma2 * float(WEIGHTS @ self.as_array())

    def as_array(self):
        return np.array([getattr(self, t) for t in TERMS])

    def scaled(self):
        """Each term times ``Es/sigma^2`` (2Re terms not doubled)."""
        return self.es_over_sigma2 * self.as_array()

    @classmethod
    def from_array(cls, v, es_over_sigma2=1.0):
        return cls(*(float(x) for x in v), es_over_sigma2=es_over_sigma2)


@dataclass(frozen=True)
class MeanSnrReport:
    """Expected SNR terms for a set of users, tagged with the model case."""

    users: tuple
    terms: tuple
    case: str

    def __post_init__(self):
        if self.case not in ("general", "case1", "case2"):
            raise DomainError(f"unknown case {self.case!r}")
        if len(self.users) != len(self.terms):
            raise DomainError("one breakdown per user required")

    @property
    def totals(self):
        return np.array([t.total for t in self.terms])

    def __getitem__(self, k):
        return self.terms[self.users.index(k)]


# ---------------------------------------------------------------------------
# Instantaneous terms
# ---------------------------------------------------------------------------

def batch_terms(s, ch, phi):
    """Raw terms for every replicate and user.

    Parameters
    ----------
    s : Scenario
    ch : ChannelRealization
        Batched (leading replicate axis) or single.
    phi : ndarray, shape (B, N) or (N,)

    Returns
    -------
    ndarray, shape (B, K, 6)
        Columns follow :data:`TERMS`.
    """
    h_d, H, h = ch.h_d, ch.H_rb, ch.h_ur
    phi = np.asarray(phi)
    if h_d.ndim == 2:
        h_d, H, h, phi = h_d[None], H[None], h[None], phi[None]
    if phi.shape[-1] != s.N or H.shape[-2:] != (s.M, s.N) or h.shape[-1] != s.N:
        raise DomainError("channel and phase dimensions are inconsistent")
    ids = s.block_ids()
    own = ids[None, :] == np.arange(s.K)[:, None]
    x = phi[:, None, :] * h
    f = np.einsum("bkmn,bkn->bkm", H, np.where(own, x, 0.0), optimize=True)
    g = np.einsum("bkmn,bkn->bkm", H, np.where(own, 0.0, x), optimize=True)

    def inner(a, b):
        return np.sum(a.conj() * b, axis=-1).real

    return np.stack([inner(h_d, h_d), inner(h_d, f), inner(h_d, g),
                     inner(f, g), inner(f, f), inner(g, g)], axis=-1)


def totals_from_terms(terms, es_over_sigma2):
    """Scaled SNR per user from raw terms of shape (..., 6)."""
    return es_over_sigma2 * (np.asarray(terms) @ WEIGHTS)


def snr_terms(s, ch, phi, k):
    """Six-term SNR breakdown of user ``k`` for one realization.

    Parameters
    ----------
    s : Scenario
    ch : ChannelRealization
        A single (unbatched) realization.
    phi : RisPhases or ndarray
    k : int
    """
    coeff = getattr(phi, "coefficients", phi)
    if ch.h_d.ndim != 2:
        raise DomainError("snr_terms expects a single realization; use batch_terms")
    if not 0 <= k < s.K:
        raise DomainError(f"user index {k} out of range")
    t = batch_terms(s, ch, coeff)[0, k]
    return SnrBreakdown.from_array(t, s.es_over_sigma2)


# ---------------------------------------------------------------------------
# Single-variable moments used below
# ---------------------------------------------------------------------------

def _abs_mean(mu_abs, sigma):
    """``E|x|`` for ``x ~ CN(mu, sigma^2)``."""
    if sigma == 0.0:
        return mu_abs
    return sigma * 0.5 * math.sqrt(math.pi) * specfun.laguerre_half(-(mu_abs / sigma) ** 2)


def _nu_stats(s, x):
    """Mean of ``|a_b' h_d|`` and of the phasor ``nu`` for user ``x``."""
    beta = s.beta_d[x]
    eta, zeta = _eta_zeta(s.kappa_d[x])
    proj = np.vdot(s.a_b[x], s.a_d[x])
    mu = math.sqrt(beta) * eta * proj
    var = beta * zeta**2 * float(np.vdot(s.a_b[x], s.R_d[x] @ s.a_b[x]).real)
    sigma = math.sqrt(max(var, 0.0))
    e_abs = _abs_mean(abs(mu), sigma)
    if sigma == 0.0:
        e_nu = np.exp(1j * np.angle(mu)) if abs(mu) > 0 else 0.0
    else:
        e_nu = np.exp(1j * np.angle(mu)) * specfun.phasor_mean(abs(mu) ** 2 / var)
    return e_abs, complex(e_nu)


def _eta_zeta(kappa):
    kappa = float(kappa)
    if math.isinf(kappa):
        return 1.0, 0.0
    return math.sqrt(kappa / (1.0 + kappa)), math.sqrt(1.0 / (1.0 + kappa))


def _wrap(a):
    return np.angle(np.exp(1j * a))


def _pair_moments(kind, kappa, R, ang, ctl):
    """``F_R`` or ``G_R`` for every ordered pair of one block.

    Pairs sharing the same parameters (common on a regular grid) are
    evaluated once.
    """
    n = R.shape[0]
    ii, jj = np.triu_indices(n, 1) if kind == "fr" else np.nonzero(~np.eye(n, dtype=bool))
    rho = R[ii, jj]
    r = np.minimum(np.abs(rho), RHO_CLAMP)
    th = np.where(r > 0, np.angle(rho), 0.0)
    dl = _wrap(ang[ii] - ang[jj])
    keys = np.stack([np.round(r, 13), np.round(_wrap(th), 11), np.round(dl, 11)], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    first = np.zeros(len(uniq), dtype=int)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    fn = specfun.fr_batch if kind == "fr" else specfun.gr_batch
    vals = fn(kappa, r[first], th[first], dl[first], ctl)[inv]
    out = np.zeros((n, n), dtype=float if kind == "fr" else complex)
    out[ii, jj] = vals
    if kind == "fr":
        out[jj, ii] = vals
    np.fill_diagonal(out, 1.0)
    return out


class _MeanEngine:
    """Per-scenario cache of the quantities shared between users."""

    def __init__(self, s, ctl):
        self.s = s
        self.ctl = ctl
        K = s.K
        self.e_abs = np.empty(K)
        self.e_nu = np.empty(K, dtype=complex)
        for x in range(K):
            self.e_abs[x], self.e_nu[x] = _nu_stats(s, x)
        self.c_all = np.concatenate([self.c_diag(x) for x in range(K)])
        self._F = {}
        self._P = None

    def c_diag(self, x):
        s = self.s
        blk = s.block(x)
        pm = specfun.phasor_mean(s.kappa_ur[x])
        rot = np.exp(1j * (np.angle(s.a_r[x][blk]) - np.angle(s.a_ur[x][blk])))
        return _nu_stats(s, x)[1] * pm * rot

    def F(self, k):
        if k not in self._F:
            s = self.s
            blk = s.block(k)
            self._F[k] = _pair_moments("fr", s.kappa_ur[k], s.R_ur[k][blk][:, blk],
                                       np.angle(s.a_ur[k][blk]), self.ctl)
        return self._F[k]

    def P(self):
        """``E[conj(Phi_i) Phi_j]`` over all element pairs."""
        if self._P is None:
            s = self.s
            P = np.outer(self.c_all.conj(), self.c_all)
            for x in range(s.K):
                blk = s.block(x)
                G = _pair_moments("gr", s.kappa_ur[x], s.R_ur[x][blk][:, blk],
                                  np.angle(s.a_ur[x][blk]), self.ctl)
                ar = np.angle(s.a_r[x][blk])
                P[blk, blk] = np.exp(-1j * (ar[:, None] - ar[None, :])) * G
            self._P = P
        return self._P

    def ehh(self, k):
        """``E[H_i' H_j]`` for user k's RIS-BS channel."""
        s = self.s
        eta, zeta = _eta_zeta(s.kappa_rb[k])
        a = s.a_r[k]
        return s.M * s.beta_rb[k] * (eta**2 * np.outer(a, a.conj()) + zeta**2 * s.R_r[k])

    def terms(self, k):
        s = self.s
        blk = s.block(k)
        other = ~(s.block_ids() == k)
        n_k = len(range(*blk.indices(s.N))) if isinstance(blk, slice) else len(blk)
        b_d, b_rb, b_ur = s.beta_d[k], s.beta_rb[k], s.beta_ur[k]
        eta_d, _ = _eta_zeta(s.kappa_d[k])
        eta_rb, zeta_rb = _eta_zeta(s.kappa_rb[k])
        eta_ur, zeta_ur = _eta_zeta(s.kappa_ur[k])
        a_r, a_ur, R_ur = s.a_r[k], s.a_ur[k], s.R_ur[k]
        rm = specfun.rice_mean(s.kappa_ur[k])

        t_hdhd = s.M * b_d
        t_hdf = n_k * self.e_abs[k] * math.sqrt(b_rb) * eta_rb * math.sqrt(b_ur) * rm

        lhs = math.sqrt(b_d * b_rb * b_ur) * eta_d * eta_rb * eta_ur * np.vdot(s.a_d[k], s.a_b[k])
        t_hdg = (lhs * np.sum((a_r.conj() * self.c_all * a_ur)[other])).real

        E = self.ehh(k)
        if other.any():
            mu = math.sqrt(b_ur) * eta_ur * a_ur
            e_abs = math.sqrt(b_ur) * rm
            e_absh = np.exp(1j * np.angle(a_ur)) * b_ur * specfun.rice_abs_times_value(s.kappa_ur[k])
            C = R_ur.T[blk][:, other]
            Mh = (mu[other][None, :] - C * mu[blk][:, None]) * e_abs + C * e_absh[blk][:, None]
            rot = np.exp(-1j * np.angle(a_r[blk]))[:, None]
            t_fg = (np.conj(self.e_nu[k]) * np.sum(rot * Mh * E[blk][:, other]
                                                   * self.c_all[other][None, :])).real
            Eh = b_ur * (eta_ur**2 * np.outer(a_ur.conj(), a_ur) + zeta_ur**2 * R_ur.T)
            sel = np.ix_(other, other)
            t_gg = np.sum(E[sel] * Eh[sel] * self.P()[sel]).real
        else:
            t_fg = 0.0
            t_gg = 0.0

        A = np.outer(a_r[blk].conj(), a_r[blk]) * s.R_r[k][blk][:, blk]
        F = self.F(k)
        off = ~np.eye(n_k, dtype=bool)
        pair = np.sum(((eta_rb**2 + zeta_rb**2 * A) * F)[off]).real
        t_ff = s.M * b_rb * b_ur * (n_k * (eta_rb**2 + zeta_rb**2) + pair)
        return np.array([t_hdhd, t_hdf, t_hdg, t_fg, t_ff, t_gg])


@lru_cache(maxsize=8)
def _engine(s, ctl):
    return _MeanEngine(s, ctl)


def _ctl(ctl):
    return ctl if ctl is not None else specfun.SeriesControl()


def _user(s, k):
    if not 0 <= k < s.K:
        raise DomainError(f"user index {k} out of range")


# ---------------------------------------------------------------------------
# Analytic mean terms (general correlated Ricean case)
# ---------------------------------------------------------------------------

def mean_term_hdhd(s, k):
    """``E[h_d' h_d] = M beta_d``."""
    _user(s, k)
    return float(s.M * s.beta_d[k])


def mean_term_hdf(s, k, ctl=None):
    """``E[Re h_d' f_k]``: direct path times the user's own subsurface path."""
    _user(s, k)
    return float(_engine(s, _ctl(ctl)).terms(k)[1])


def c_matrix(s, x):
    """Expected reflection matrix ``E[Phi_x]`` of user ``x``'s subsurface (diagonal)."""
    _user(s, x)
    return np.diag(_engine(s, _ctl(None)).c_diag(x))


def mean_term_hdg(s, k, ctl=None):
    """``E[h_d' g_k]``; only the LoS parts of every link survive the average."""
    _user(s, k)
    return float(_engine(s, _ctl(ctl)).terms(k)[2])


def mean_term_fg(s, k, ctl=None):
    """Real part of ``E[f_k' g_k]``."""
    _user(s, k)
    return float(_engine(s, _ctl(ctl)).terms(k)[3])


def mean_term_ff(s, k, ctl=None):
    """``E[f_k' f_k]``, built from the envelope cross-moment ``F_R``."""
    _user(s, k)
    return float(_engine(s, _ctl(ctl)).terms(k)[4])


def mean_term_gg(s, k, ctl=None):
    """``E[g_k' g_k]``; same-subsurface pairs use ``G_R``, others the ``C`` matrices."""
    _user(s, k)
    return float(_engine(s, _ctl(ctl)).terms(k)[5])


def mean_terms_all(s, ctl=None):
    """Raw expected terms for every user, shape (K, 6)."""
    eng = _engine(s, _ctl(ctl))
    return np.stack([eng.terms(k) for k in range(s.K)])


def _report(s, rows, users, case):
    return MeanSnrReport(tuple(users),
                         tuple(SnrBreakdown.from_array(r, s.es_over_sigma2) for r in rows), case)


def _users(s, k):
    if k is None:
        return list(range(s.K))
    _user(s, k)
    return [k]


def mean_snr_general(s, k=None, ctl=None):
    """Expected SNR terms for user ``k`` (all users if ``None``), general case."""
    users = _users(s, k)
    eng = _engine(s, _ctl(ctl))
    return _report(s, [eng.terms(u) for u in users], users, "general")


# ---------------------------------------------------------------------------
# Rayleigh UE links (special cases)
# ---------------------------------------------------------------------------

def _pair_2f1(a, b, c, R):
    z = np.minimum(np.abs(R) ** 2, 1.0)
    uz, inv = np.unique(np.round(z, 15), return_inverse=True)
    vals = np.array([specfun.hyp2f1(a, b, c, float(v)) for v in uz])
    return vals[inv.ravel()].reshape(R.shape)


def _rayleigh_terms(s, k, los_rb):
    blk = s.block(k)
    other = ~(s.block_ids() == k)
    n_k = int(np.sum(~other))
    b_d, b_rb, b_ur = s.beta_d[k], s.beta_rb[k], s.beta_ur[k]
    eta, zeta = (1.0, 0.0) if los_rb else _eta_zeta(s.kappa_rb[k])
    a_r = s.a_r[k]
    norm_ab = math.sqrt(float(np.vdot(s.a_b[k], s.R_d[k] @ s.a_b[k]).real))

    t_hdhd = s.M * b_d
    t_hdf = n_k * math.pi / 4 * norm_ab * eta * math.sqrt(b_d * b_rb * b_ur)

    Rkk = s.R_ur[k][blk][:, blk]
    off = ~np.eye(n_k, dtype=bool)
    A = np.outer(a_r[blk].conj(), a_r[blk]) * s.R_r[k][blk][:, blk]
    pair = math.pi / 4 * np.sum(((eta**2 + zeta**2 * A) * _pair_2f1(-0.5, -0.5, 1.0, Rkk))[off]).real
    t_ff = s.M * b_rb * b_ur * (n_k * (eta**2 + zeta**2) + pair)

    t_gg = 0.0
    for x in range(s.K):
        if x == k:
            continue
        bx = s.block(x)
        ehh = eta**2 * np.outer(a_r[bx], a_r[bx].conj()) + zeta**2 * s.R_r[k][bx][:, bx]
        Rs = s.R_ur[x][bx][:, bx]
        ax = s.a_r[x][bx]
        t_gg += np.sum(ehh * s.R_ur[k][bx][:, bx] * Rs * np.outer(ax.conj(), ax)
                       * _pair_2f1(0.5, 0.5, 2.0, Rs)).real
    t_gg *= s.M * b_rb * b_ur * math.pi / 4
    return np.array([t_hdhd, t_hdf, 0.0, 0.0, t_ff, t_gg])


def _check_rayleigh(s, need_los_rb):
    bad = [n for n, v in (("kappa_d", s.kappa_d), ("kappa_ur", s.kappa_ur)) if np.any(v != 0)]
    if need_los_rb and not np.all(np.isinf(s.kappa_rb)):
        bad.append("kappa_rb (must be inf)")
    if bad:
        raise MisuseError("scenario violates the special case: " + ", ".join(bad))


def mean_snr_case1(s, k=None):
    """Expected SNR with correlated Rayleigh UE links and Ricean RIS-BS link.

    Requires ``kappa_d = kappa_ur = 0`` for every user.
    """
    _check_rayleigh(s, False)
    users = _users(s, k)
    return _report(s, [_rayleigh_terms(s, u, False) for u in users], users, "case1")


def mean_snr_case2(s, k=None):
    """Expected SNR with correlated Rayleigh UE links and a pure LoS RIS-BS link.

    Requires ``kappa_d = kappa_ur = 0`` and ``kappa_rb = inf`` for every user.
    """
    _check_rayleigh(s, True)
    users = _users(s, k)
    return _report(s, [_rayleigh_terms(s, u, True) for u in users], users, "case2")


def sum_rate_bound(reports, band_fraction=None):
    """``sum_k w_k log2(1 + E[SNR_k])`` in bits/s/Hz.

    Parameters
    ----------
    reports : MeanSnrReport, sequence of MeanSnrReport, or array of mean SNRs
    band_fraction : sequence of float, optional
        Per-user bandwidth share; defaults to ``1/K`` each.
    """
    if isinstance(reports, MeanSnrReport):
        snr = reports.totals
    elif len(reports) and isinstance(reports[0], MeanSnrReport):
        snr = np.concatenate([r.totals for r in reports])
    else:
        snr = np.asarray(reports, dtype=float)
    if np.any(snr < 0):
        raise DomainError("mean SNR must be non-negative")
    w = np.full(snr.size, 1.0 / snr.size) if band_fraction is None else np.asarray(band_fraction, float)
    if w.shape != snr.shape:
        raise DomainError("one band fraction per user required")
    return float(np.sum(w * np.log2(1.0 + snr)))
