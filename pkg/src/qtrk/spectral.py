"""Spectral constants of block-circulant operators and the convergence rates
of the quantile Kaczmarz methods.

``bcirc(A)`` is block-diagonalized by the tube DFT, so every quantity here is
computed slice by slice on the Fourier frontal slices of ``A``.
"""
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, SingularRowError
from .tensor_core import fft_tubes, frobenius

SINGULAR_TOL = 1e-12


@dataclass
class RateReport:
    sigma_max_bcirc: float
    eta: float
    sigma_min_expected_projector: float
    beta: float
    beta_row: float
    q: float
    rate_qtrk: Optional[float]
    rate_mqtrk: Optional[float] = None
    vacuous: Optional[bool] = None
    violations: Optional[str] = None

    def to_dict(self):
        return asdict(self)


def _slices(A, Ahat):
    if Ahat is None:
        Ahat = fft_tubes(A)
    return Ahat.transpose(2, 0, 1)


def bcirc_singular_extremes(A, Ahat=None):
    """Return ``(sigma_min, sigma_max)`` of ``bcirc(A)``."""
    sv = np.linalg.svd(_slices(A, Ahat), compute_uv=False)
    return float(sv.min()), float(sv.max())


def bcirc_singular_values(A, Ahat=None):
    """All singular values of ``bcirc(A)``, sorted descending."""
    sv = np.linalg.svd(_slices(A, Ahat), compute_uv=False)
    return np.sort(sv.ravel())[::-1]


def row_fourier_norms(A, Ahat=None):
    """``||a_hat_{i,h}||_2`` for every row ``i`` and Fourier index ``h``; shape (m, n)."""
    if Ahat is None:
        Ahat = fft_tubes(A)
    return np.sqrt(np.sum(np.abs(Ahat) ** 2, axis=1))


def check_rows(norms, rows=None):
    """Raise :class:`SingularRowError` for the first (row, freq) below tolerance."""
    sub = norms if rows is None else norms[list(rows)]
    bad = np.argwhere(sub < SINGULAR_TOL)
    if bad.size:
        r, h = bad[0]
        row = int(r) if rows is None else int(list(rows)[r])
        raise SingularRowError(row, int(h), float(sub[r, h]))


def eta(A, Ahat=None):
    """Largest singular value of ``bcirc`` of any row slice pseudoinverse.

    For a 1 x l x n row slice this is ``max_h 1 / ||a_hat_{i,h}||``.
    """
    norms = row_fourier_norms(A, Ahat)
    check_rows(norms)
    return float(np.max(1.0 / norms))


def averaged_projectors(A, rows, Ahat=None):
    """Per-Fourier-slice average of the rank-one projectors ``a^* a / ||a||^2``.

    Returns an array of shape (n, l, l); slice h is Hermitian PSD.
    """
    rows = sorted(set(int(i) for i in rows))
    if not rows:
        raise DomainError("expected projector needs a nonempty row set")
    if Ahat is None:
        Ahat = fft_tubes(A)
    norms = row_fourier_norms(A, Ahat)
    check_rows(norms, rows)
    a = Ahat[rows].transpose(2, 0, 1) / norms[rows].T[:, :, None]  # (n, r, l)
    # sum_i conj(a_i)^T a_i, as a Gram matrix
    M = np.matmul(a.conj().transpose(0, 2, 1), a) / len(rows)
    return 0.5 * (M + M.conj().transpose(0, 2, 1))


def expected_projector_sigma_min(A, rows, Ahat=None):
    """Smallest singular value of the uniform average of ``bcirc(P_i)`` over ``rows``."""
    M = averaged_projectors(A, rows, Ahat)
    return float(np.min(np.linalg.eigvalsh(M)))


def quantile_bound(A, Xk, Xstar, q, beta, sigma_max=None):
    """Upper bound on the residual q-quantile at iterate ``Xk``."""
    if not 0.0 < q <= 1.0 - beta:
        raise DomainError(f"quantile bound needs 0 < q <= 1 - beta, got q={q}, beta={beta}")
    m, _, n = A.shape
    p = Xstar.shape[1]
    if sigma_max is None:
        sigma_max = bcirc_singular_extremes(A)[1]
    dist = frobenius(Xk - Xstar)
    if dist == 0.0:
        return 0.0
    radicand = m * p * n * (1.0 - beta - q)
    if radicand <= 0.0:
        return math.inf
    return sigma_max * dist / math.sqrt(radicand)


def _corrupted_row_factor(sigma_max, eta_value, m, beta, q):
    """``1 + sigma_max * eta / sqrt(m (1 - beta - q))``; None when the radicand is zero."""
    radicand = m * (1.0 - beta - q)
    if radicand < 0.0:
        raise DomainError(f"negative radicand m(1 - beta - q) = {radicand}")
    if radicand == 0.0:
        return None
    return 1.0 + sigma_max * eta_value / math.sqrt(radicand)


def rate_qtrk(sigma_max, eta_value, sigma_min_proj, m, beta, beta_row, q):
    """Contraction factor R of the QTRK expected-error guarantee.

    Evaluated as written, without clamping.  At ``q = 1 - beta`` the
    corrupted-row factor is infinite; that is only admissible when its
    coefficient ``1 - (1 - beta_row) / q`` is exactly zero.
    """
    if q <= 0.0:
        raise DomainError(f"q must be positive, got {q}")
    if q > 1.0 - beta:
        raise DomainError(f"q = {q} exceeds 1 - beta = {1.0 - beta}")
    c_corr = 1.0 - (1.0 - beta_row) / q
    c_clean = 1.0 - beta_row / q
    factor = _corrupted_row_factor(sigma_max, eta_value, m, beta, q)
    if factor is None:
        if c_corr != 0.0:
            raise DomainError("division by zero: q = 1 - beta with a nonzero corrupted-row coefficient")
        corr_term = 0.0
    else:
        corr_term = c_corr * factor
    return corr_term + c_clean * (1.0 - sigma_min_proj)


def rate_mqtrk(sigma_max, eta_value, sigma_min_proj, m, p, n, beta, beta_row, q):
    """Contraction factor of the mQTRK guarantee; requires 1 - 1/(pn) < q < 1 - beta."""
    pn = p * n
    lower = 1.0 - 1.0 / pn
    if not q > lower:
        raise DomainError(f"hypothesis violated: q = {q} <= 1 - 1/(pn) = {lower}")
    if not q < 1.0 - beta:
        raise DomainError(f"hypothesis violated: q = {q} >= 1 - beta = {1.0 - beta}")
    R = rate_qtrk(sigma_max, eta_value, sigma_min_proj, m, beta, beta_row, q)
    factor = _corrupted_row_factor(sigma_max, eta_value, m, beta, q)
    return q * (1.0 - R) + (min(1.0 - beta, (1.0 - q) * pn) + beta * pn) * factor


def rate_report(A, uncorrupted_rows, beta, beta_row, q, p):
    """Evaluate every constant on ``A``; violated preconditions are reported, not raised."""
    m, _, n = A.shape
    Ahat = fft_tubes(A)
    violations = []
    _, smax = bcirc_singular_extremes(A, Ahat)
    try:
        eta_value = eta(A, Ahat)
    except SingularRowError as exc:
        eta_value = math.nan
        violations.append(str(exc))
    try:
        smin_proj = expected_projector_sigma_min(A, uncorrupted_rows, Ahat)
    except (DomainError, SingularRowError) as exc:
        smin_proj = math.nan
        violations.append(f"expected projector: {exc}")

    R = Rm = None
    if not violations:
        try:
            R = rate_qtrk(smax, eta_value, smin_proj, m, beta, beta_row, q)
        except DomainError as exc:
            violations.append(f"rate_qtrk: {exc}")
        try:
            Rm = rate_mqtrk(smax, eta_value, smin_proj, m, p, n, beta, beta_row, q)
        except DomainError as exc:
            violations.append(f"rate_mqtrk: {exc}")
    return RateReport(
        sigma_max_bcirc=smax,
        eta=eta_value,
        sigma_min_expected_projector=smin_proj,
        beta=beta,
        beta_row=beta_row,
        q=q,
        rate_qtrk=R,
        rate_mqtrk=Rm,
        vacuous=None if R is None else bool(R >= 1.0),
        violations="; ".join(violations) or None,
    )
