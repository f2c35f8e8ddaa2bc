"""RIS phase selection: subsurface designs, iterative alignment and random phases.

Every routine accepts an unbatched :class:`~rislab.channel.ChannelRealization`
or a batched one (leading replicate axis). The batched helpers prefixed with
``batch_`` are what the Monte-Carlo engine uses; the public single-realization
functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDirectError, DomainError

DEGENERATE_FLOOR = 1e-300
METHODS = ("sd_los", "sd_svd", "isd", "cisd", "random")


@dataclass(frozen=True, eq=False)
class RisPhases:
    """Unit-modulus RIS reflection coefficients and their subsurface partition."""

    coefficients: np.ndarray
    partition: tuple

    def __post_init__(self):
        c = np.asarray(self.coefficients)
        if sum(self.partition) != c.shape[-1]:
            raise DomainError("partition does not cover all coefficients")
        if not np.allclose(np.abs(c), 1.0, rtol=0.0, atol=1e-12):
            raise DomainError("RIS coefficients must have unit modulus")

    @property
    def N(self):
        return int(np.asarray(self.coefficients).shape[-1])

    def block(self, k):
        o = np.concatenate([[0], np.cumsum(self.partition)])
        return np.asarray(self.coefficients)[..., o[k]:o[k + 1]]


@dataclass(frozen=True)
class IterationReport:
    """Outcome of an alignment run on one realization."""

    iterations_used: int
    snr_trace: tuple
    converged: bool

    def __post_init__(self):
        if self.iterations_used < 1 or len(self.snr_trace) != self.iterations_used:
            raise DomainError("inconsistent iteration report")


@dataclass(frozen=True, eq=False)
class BatchSelection:
    """Phases chosen for a batch of replicates plus per-replicate diagnostics."""

    phi: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    degenerate: np.ndarray
    traces: np.ndarray | None = None


def _as_batch(ch):
    if ch.h_d.ndim == 2:
        return ch.h_d[None], ch.H_rb[None], ch.h_ur[None], True
    return ch.h_d, ch.H_rb, ch.h_ur, False


def _nu(a_b, direct):
    """Unit phasor of ``a_b^H direct``; degenerate projections give 1 and a flag."""
    proj = np.sum(a_b.conj() * direct, axis=-1)
    mag = np.abs(proj)
    deg = mag < DEGENERATE_FLOOR
    nu = np.where(deg, 1.0 + 0j, proj / np.where(deg, 1.0, mag))
    return nu, deg


def _los_block(nu, a_r, h):
    return nu[..., None] * np.exp(1j * (np.angle(a_r) - np.angle(h)))


def _raise_if(deg, where):
    if np.any(deg):
        raise DegenerateDirectError(f"|a_b^H direct| below {DEGENERATE_FLOOR} in {where}")


def batch_sd_los(s, ch):
    """LoS subsurface design for every user; returns ``(phi (B, N), degenerate (B,))``."""
    h_d, H, h, _ = _as_batch(ch)
    phi = np.empty(h.shape[:1] + (s.N,), dtype=complex)
    deg = np.zeros(h.shape[0], dtype=bool)
    for k in range(s.K):
        blk = s.block(k)
        nu, dk = _nu(s.a_b[k], h_d[:, k])
        phi[:, blk] = _los_block(nu, s.a_r[k][blk], h[:, k, blk])
        deg |= dk
    return phi, deg


def sd_los(s, ch, k, on_degenerate="raise"):
    """LoS subsurface design for user ``k``.

    ``Phi_k = nu_k diag(exp(j(arg a_r,k - arg h_ur,k)))`` with
    ``nu_k = a_b^H h_d / |a_b^H h_d|``. With ``on_degenerate='flag'`` a
    vanishing projection sets ``nu_k = 1`` instead of raising.

    Returns
    -------
    ndarray
        The ``n_k`` diagonal entries of ``Phi_k`` (batched if ``ch`` is).
    """
    h_d, H, h, single = _as_batch(ch)
    blk = s.block(k)
    nu, deg = _nu(s.a_b[k], h_d[:, k])
    if on_degenerate == "raise":
        _raise_if(deg, f"sd_los user {k}")
    out = _los_block(nu, s.a_r[k][blk], h[:, k, blk])
    return out[0] if single else out


def _leading_right_vector(Hk):
    _, _, Vh = np.linalg.svd(Hk, full_matrices=False)
    v = Vh[..., 0, :].conj()
    idx = np.argmax(np.abs(v) > 0, axis=-1)
    ref = np.take_along_axis(v, idx[..., None], axis=-1)
    return v * np.exp(-1j * np.angle(ref))


def _svd_block(Hk, hd, hk):
    v = _leading_right_vector(Hk)
    x = np.einsum("...mn,...n->...m", Hk, np.exp(1j * np.angle(v)) * np.abs(hk))
    omega, deg = _nu(x, hd)
    return omega[..., None] * np.exp(1j * (np.angle(v) - np.angle(hk))), deg


def batch_sd_svd(s, ch):
    """SVD-based subsurface design for every user."""
    h_d, H, h, _ = _as_batch(ch)
    phi = np.empty(h.shape[:1] + (s.N,), dtype=complex)
    deg = np.zeros(h.shape[0], dtype=bool)
    for k in range(s.K):
        blk = s.block(k)
        phi[:, blk], dk = _svd_block(H[:, k][..., blk], h_d[:, k], h[:, k, blk])
        deg |= dk
    return phi, deg


def sd_svd(s, ch, k, on_degenerate="raise"):
    """SVD-based subsurface design for user ``k``.

    Uses the leading right singular vector ``v_k`` of ``H_rb,k`` (normalized
    so its first nonzero entry is real positive) and sets
    ``Phi_k = omega_k diag(exp(j(arg v_k - arg h_ur,k)))``, where ``omega_k``
    rotates the resulting RIS path onto ``h_d``.
    """
    h_d, H, h, single = _as_batch(ch)
    blk = s.block(k)
    out, deg = _svd_block(H[:, k][..., blk], h_d[:, k], h[:, k, blk])
    if on_degenerate == "raise":
        _raise_if(deg, f"sd_svd user {k}")
    return out[0] if single else out


def total_snr(s, h_d, H, h, phi):
    """Sum over users of ``(Es/sigma^2) ||h_d + H_rb Phi h_ur||^2`` for each replicate."""
    y = h_d + np.einsum("bkmn,bkn->bkm", H, phi[:, None, :] * h, optimize=True)
    return s.es_over_sigma2 * np.sum(np.abs(y) ** 2, axis=(1, 2))


def user_order(h):
    """Users sorted by ascending ``||h_ur||^2``, ties by index (stable sort)."""
    return np.argsort(np.sum(np.abs(h) ** 2, axis=-1), axis=-1, kind="stable")


def _alignment_pass(s, h_d, H, h, phi, order, include_all, active, trace_hook=None):
    """One sweep over users in ``order`` re-aligning each subsurface.

    With ``include_all`` false only blocks already set in this sweep count as
    fixed (a plain ISD pass); otherwise every other block contributes at its
    current value.
    """
    B = h.shape[0]
    ids = s.block_ids()
    rows = np.arange(B)
    set_mask = np.zeros((B, s.N), dtype=bool)
    deg = np.zeros(B, dtype=bool)
    for p in range(s.K):
        k = order[:, p]
        own = ids[None, :] == k[:, None]
        fixed_mask = ~own if include_all else set_mask.copy()
        Hk = H[rows, k]
        hk = h[rows, k]
        coeff = np.where(fixed_mask, phi * hk, 0.0)
        direct = h_d[rows, k] + np.einsum("bmn,bn->bm", Hk, coeff)
        nu, dk = _nu(s.a_b[k], direct)
        new = _los_block(nu, s.a_r[k], hk)
        upd = own & active[:, None]
        phi = np.where(upd, new, phi)
        set_mask |= own
        deg |= dk & active
        if trace_hook is not None:
            trace_hook(p, k, direct, fixed_mask)
    return phi, deg


def batch_isd(s, ch, trace_hook=None):
    """One ISD sweep for a batch; returns ``(phi, degenerate)``."""
    h_d, H, h, _ = _as_batch(ch)
    B = h.shape[0]
    phi = np.ones((B, s.N), dtype=complex)
    return _alignment_pass(s, h_d, H, h, phi, user_order(h), False,
                           np.ones(B, dtype=bool), trace_hook)


def batch_cisd(s, ch, tol=1e-4, max_iters=50):
    """Repeated alignment sweeps until the total SNR settles.

    The first sweep is a plain ISD pass. Later sweeps re-align each block
    against the direct channel plus all other blocks at their current values,
    keeping the initial user order. A replicate stops after the first sweep
    whose relative total-SNR change is below ``tol`` in magnitude. Each block
    is aligned for its own user, so a sweep can lower the total; such a drop
    is treated as not yet converged rather than as convergence, and the
    phases returned are those of the best sweep seen, so the result never
    falls below the ISD pass.

    Returns
    -------
    phi, degenerate, iterations, converged, traces
        ``traces[b, i]`` is the total SNR after sweep ``i`` (NaN once stopped).
    """
    if not tol > 0 or max_iters < 1:
        raise DomainError("need tol > 0 and max_iters >= 1")
    h_d, H, h, _ = _as_batch(ch)
    B = h.shape[0]
    order = user_order(h)
    active = np.ones(B, dtype=bool)
    phi = np.ones((B, s.N), dtype=complex)
    phi, deg = _alignment_pass(s, h_d, H, h, phi, order, False, active)
    traces = np.full((B, max_iters), np.nan)
    traces[:, 0] = total_snr(s, h_d, H, h, phi)
    best, best_snr = phi.copy(), traces[:, 0].copy()
    iters = np.ones(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    for it in range(1, max_iters):
        if not active.any():
            break
        phi, dk = _alignment_pass(s, h_d, H, h, phi, order, True, active)
        deg |= dk
        snr = total_snr(s, h_d, H, h, phi)
        prev = traces[:, it - 1]
        traces[:, it] = np.where(active, snr, np.nan)
        iters = np.where(active, it + 1, iters)
        up = active & (snr > best_snr)
        best[up] = phi[up]
        best_snr = np.where(up, snr, best_snr)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = (snr - prev) / prev
        stop = active & ~(np.abs(gain) >= tol)
        converged |= stop
        active &= ~stop
    return best, deg, iters, converged, traces


def isd(s, ch, on_degenerate="raise"):
    """Iterative subsurface design, one sweep from the weakest UE-RIS channel up.

    Returns
    -------
    (RisPhases, IterationReport)
    """
    h_d, H, h, single = _as_batch(ch)
    if not single:
        raise DomainError("isd expects a single realization; use batch_isd")
    phi, deg = batch_isd(s, ch)
    if on_degenerate == "raise":
        _raise_if(deg, "isd")
    snr = float(total_snr(s, h_d, H, h, phi)[0])
    return RisPhases(phi[0], s.partition), IterationReport(1, (snr,), False)


def cisd(s, ch, tol=1e-4, max_iters=50, on_degenerate="raise"):
    """Converged iterative subsurface design.

    Returns
    -------
    (RisPhases, IterationReport)
    """
    _, _, _, single = _as_batch(ch)
    if not single:
        raise DomainError("cisd expects a single realization; use batch_cisd")
    phi, deg, iters, conv, traces = batch_cisd(s, ch, tol, max_iters)
    if on_degenerate == "raise":
        _raise_if(deg, "cisd")
    n = int(iters[0])
    rep = IterationReport(n, tuple(float(v) for v in traces[0, :n]), bool(conv[0]))
    return RisPhases(phi[0], s.partition), rep


def random_phases(N, partition, rng, size=None):
    """I.i.d. uniform phases on ``[0, 2 pi)``."""
    if N < 1:
        raise DomainError("N must be >= 1")
    shape = (N,) if size is None else (size, N)
    coeff = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, shape))
    if size is None:
        return RisPhases(coeff, tuple(partition))
    return coeff


def select_batch(method, s, ch, rngs=None, tol=1e-4, max_iters=50):
    """Apply ``method`` to a batch of realizations.

    ``rngs`` (one generator per replicate) is only consumed by ``random``.
    """
    h_d, H, h, _ = _as_batch(ch)
    B = h.shape[0]
    ones = np.ones(B, dtype=int)
    if method == "sd_los":
        phi, deg = batch_sd_los(s, ch)
        return BatchSelection(phi, ones, np.zeros(B, bool), deg)
    if method == "sd_svd":
        phi, deg = batch_sd_svd(s, ch)
        return BatchSelection(phi, ones, np.zeros(B, bool), deg)
    if method == "isd":
        phi, deg = batch_isd(s, ch)
        return BatchSelection(phi, ones, np.zeros(B, bool), deg)
    if method == "cisd":
        phi, deg, iters, conv, traces = batch_cisd(s, ch, tol, max_iters)
        return BatchSelection(phi, iters, conv, deg, traces)
    if method == "random":
        if rngs is None:
            raise DomainError("random phases need per-replicate generators")
        phi = np.stack([np.exp(1j * g.uniform(0.0, 2.0 * np.pi, s.N)) for g in rngs])
        return BatchSelection(phi, ones, np.zeros(B, bool), np.zeros(B, bool))
    raise DomainError(f"unknown method {method!r}")
