"""Row-slice Kaczmarz iterations for ``A * X = B``: TRK, QTRK and masked QTRK.

All three share one projection kernel.  Projecting onto row slice ``i``
works per Fourier slice ``h`` on the 1 x l row ``a = A_hat[i, :, h]``::

    x_h <- x_h - a^* (a x_h - b_h) / ||a||^2

which is the Fourier-domain form of
``X - A_i^* (A_i A_i^*)^{-1} (A_i X - B_i)``.
"""
import enum
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError, ShapeError, SingularRowError
from .spectral import SINGULAR_TOL, row_fourier_norms
from .tensor_core import fft_tubes, frobenius, ifft_tubes, tensor3, to_slices, tprod

CSV_HEADER = "trial,iter,rel_error,rel_residual,stalls_so_far"


class Variant(str, enum.Enum):
    TRK = "TRK"
    QTRK = "QTRK"
    MQTRK = "MQTRK"


@dataclass
class SolverConfig:
    variant: Variant = Variant.QTRK
    q: float = 1.0
    max_iters: int = 2000
    seed: int = 0
    record_every: int = 1
    stall_policy: str = "noop-and-count"

    def __post_init__(self):
        self.variant = Variant(str(self.variant).upper().replace("VARIANT.", ""))
        if not 0.0 < self.q <= 1.0:
            raise DomainError(f"q must lie in (0, 1], got {self.q}")
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.record_every < 1:
            raise DomainError(f"record_every must be >= 1, got {self.record_every}")
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stall_policy != "noop-and-count":
            raise DomainError(f"unsupported stall policy {self.stall_policy!r}")


def make_rng(seed):
    """Counter-based (Philox) generator; the only RNG the solvers use."""
    return np.random.Generator(np.random.Philox(int(seed)))


class StepEvent(NamedTuple):
    row: Optional[int]
    stalled: bool
    masked_cols: tuple = ()


@dataclass
class RunRecord:
    m: int
    p: int
    iterations: list = field(default_factory=list)
    rel_error: list = field(default_factory=list)
    rel_residual: list = field(default_factory=list)
    stalls_so_far: list = field(default_factory=list)
    rows_sampled: np.ndarray = None
    stall_iterations: int = 0
    masked_column_counts: np.ndarray = None
    flagged_row_counts: np.ndarray = None

    def __post_init__(self):
        if self.rows_sampled is None:
            self.rows_sampled = np.zeros(self.m, dtype=np.int64)
        if self.masked_column_counts is None:
            self.masked_column_counts = np.zeros(self.p, dtype=np.int64)
        if self.flagged_row_counts is None:
            self.flagged_row_counts = np.zeros(self.m, dtype=np.int64)

    def add_event(self, ev):
        if ev.stalled:
            self.stall_iterations += 1
        else:
            self.rows_sampled[ev.row] += 1
        for j in ev.masked_cols:
            self.masked_column_counts[j] += 1

    @property
    def final_rel_error(self):
        return self.rel_error[-1] if self.rel_error else None

    def csv_rows(self, trial=0):
        for k, e, r, s in zip(self.iterations, self.rel_error, self.rel_residual, self.stalls_so_far):
            yield f"{trial},{k},{_fmt(e)},{_fmt(r)},{s}"

    def to_csv(self, trial=0):
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in self.csv_rows(trial):
            buf.write(row + "\n")
        return buf.getvalue()


def _fmt(x):
    return "" if x is None else repr(float(x))


# ---------------------------------------------------------------------------
# State and kernels
# ---------------------------------------------------------------------------

@dataclass
class SolverState:
    """Iterate plus the spectral caches of A and B, built once per solve."""
    X: np.ndarray
    rng: np.random.Generator
    Ahat: np.ndarray
    Bhat: np.ndarray
    row_norms: np.ndarray
    A_slices: np.ndarray
    iteration: int = 0

    @classmethod
    def start(cls, A, B, X0, seed):
        m, l, n = A.shape
        if B.shape[0] != m or B.shape[2] != n:
            raise ShapeError(f"B shape {B.shape} does not match A shape {A.shape}")
        if X0.shape != (l, B.shape[1], n):
            raise ShapeError(f"X0 shape {X0.shape} should be {(l, B.shape[1], n)}")
        Ahat = fft_tubes(A)
        return cls(
            X=np.array(X0, dtype=np.float64),
            rng=make_rng(seed),
            Ahat=Ahat,
            Bhat=fft_tubes(B),
            row_norms=row_fourier_norms(A, Ahat),
            A_slices=to_slices(Ahat),
        )


def residual(A, X, B, Ahat=None):
    """``E = A * X - B``."""
    if B.shape != (A.shape[0], X.shape[1], A.shape[2]):
        raise ShapeError(f"B shape {B.shape} does not match A {A.shape} * X {X.shape}")
    return tprod(A, X, Ahat) - B


def q_quantile(E, q):
    """The floor(q N)-th smallest of the N absolute entries of ``E`` (1-indexed)."""
    vals = np.abs(np.ravel(E))
    # absorb representation error in q*N, e.g. 0.975 * 1000
    k = math.floor(q * vals.size + 1e-9)
    if k < 1:
        raise DomainError("quantile index zero: floor(q * mpn) = 0")
    k = min(k, vals.size)
    return float(np.partition(vals, k - 1)[k - 1])


def _row_update(a, nrm2, Xhat, bhat):
    # a: (l, n), Xhat: (l, c, n), bhat: (c, n)
    r = np.sum(a[:, None, :] * Xhat, axis=0) - bhat
    return ifft_tubes(np.conj(a)[:, None, :] * r[None, :, :] / nrm2)


def _row_data(A_spectral, B, i, Bhat, norms):
    if not 0 <= i < A_spectral.shape[0]:
        raise IndexError(f"row {i} out of range")
    if norms is None:
        nrm = np.sqrt(np.sum(np.abs(A_spectral[i]) ** 2, axis=0))
    else:
        nrm = norms[i]
    bad = np.flatnonzero(nrm < SINGULAR_TOL)
    if bad.size:
        raise SingularRowError(i, int(bad[0]), float(nrm[bad[0]]))
    bhat = Bhat[i] if Bhat is not None else np.fft.fft(B[i], axis=1)
    return A_spectral[i], nrm * nrm, bhat


def project_row(X, A_spectral, B, i, Bhat=None, norms=None):
    """Project ``X`` onto the solution set of row slice ``i``."""
    a, nrm2, bhat = _row_data(A_spectral, B, i, Bhat, norms)
    return X - _row_update(a, nrm2, fft_tubes(X), bhat)


def project_row_masked(X, A_spectral, B, i, keep_cols, Bhat=None, norms=None):
    """Projection restricted to the column slices in ``keep_cols``.

    Columns outside ``keep_cols`` are copied bitwise.
    """
    p = X.shape[1]
    keep = np.unique(np.asarray(list(keep_cols), dtype=np.int64))
    if keep.size and (keep[0] < 0 or keep[-1] >= p):
        raise IndexError(f"keep_cols {keep_cols} out of range for p = {p}")
    if keep.size == p:
        return project_row(X, A_spectral, B, i, Bhat, norms)
    out = np.array(X, copy=True)
    if keep.size == 0:
        return out
    a, nrm2, bhat = _row_data(A_spectral, B, i, Bhat, norms)
    sub = X[:, keep, :]
    out[:, keep, :] = sub - _row_update(a, nrm2, fft_tubes(sub), bhat[keep])
    return out


def _residual_of(state, A, B):
    return tprod(A, state.X, state.Ahat, state.A_slices) - B


def trk_step(state, A, B, config, E=None, record=None):
    i = int(state.rng.integers(A.shape[0]))
    state.X = project_row(state.X, state.Ahat, B, i, state.Bhat, state.row_norms)
    state.iteration += 1
    return StepEvent(i, False)


def qtrk_step(state, A, B, config, E=None, record=None):
    if E is None:
        E = _residual_of(state, A, B)
    Q = q_quantile(E, config.q)
    flagged = np.any(np.abs(E) > Q, axis=(1, 2))
    if record is not None:
        record.flagged_row_counts += flagged
    U = np.flatnonzero(~flagged)
    state.iteration += 1
    if U.size == 0:
        return StepEvent(None, True)
    i = int(U[state.rng.integers(U.size)])
    state.X = project_row(state.X, state.Ahat, B, i, state.Bhat, state.row_norms)
    return StepEvent(i, False)


def mqtrk_step(state, A, B, config, E=None, record=None):
    if E is None:
        E = _residual_of(state, A, B)
    Q = q_quantile(E, config.q)
    i = int(state.rng.integers(A.shape[0]))
    masked = np.any(np.abs(E[i]) > Q, axis=1)
    if record is not None:
        record.flagged_row_counts[i] += bool(masked.any())
    keep = np.flatnonzero(~masked)
    state.X = project_row_masked(state.X, state.Ahat, B, i, keep, state.Bhat, state.row_norms)
    state.iteration += 1
    return StepEvent(i, False, tuple(int(j) for j in np.flatnonzero(masked)))


_STEPS = {Variant.TRK: trk_step, Variant.QTRK: qtrk_step, Variant.MQTRK: mqtrk_step}


def solve(A, B, config, Xstar=None, X0=None, residual_ref=None):
    """Run ``config.max_iters`` iterations of the configured variant.

    Returns ``(X, RunRecord)``.  Iteration 0 (the start point), every
    ``record_every``-th iteration and the final iterate are recorded.  The
    relative residual is taken against ``B`` unless ``residual_ref`` gives
    another right-hand side (e.g. the uncorrupted one).
    """
    A = tensor3(A, copy=False)
    B = tensor3(B, copy=False)
    m, l, n = A.shape
    p = B.shape[1]
    if X0 is None:
        X0 = np.zeros((l, p, n))
    state = SolverState.start(A, B, tensor3(X0), config.seed)
    record = RunRecord(m, p)
    ref_shift = None if residual_ref is None else B - residual_ref
    bnorm = frobenius(B if residual_ref is None else residual_ref)
    step = _STEPS[config.variant]
    needs_residual = config.variant is not Variant.TRK

    def log(E):
        if ref_shift is not None:
            E = E + ref_shift
        record.iterations.append(state.iteration)
        record.rel_error.append(None if Xstar is None else frobenius(Xstar - state.X) / frobenius(Xstar))
        record.rel_residual.append(frobenius(E) / bnorm if bnorm > 0 else frobenius(E))
        record.stalls_so_far.append(record.stall_iterations)

    for k in range(config.max_iters):
        do_log = k % config.record_every == 0
        E = _residual_of(state, A, B) if (needs_residual or do_log) else None
        if do_log:
            log(E)
        record.add_event(step(state, A, B, config, E, record))
    log(_residual_of(state, A, B))
    return state.X, record


def least_norm_solve(A, B, rcond=1e-10):
    """Minimum-norm least-squares solution, one pseudoinverse per Fourier slice."""
    Ahat = fft_tubes(A).transpose(2, 0, 1)
    Bhat = fft_tubes(B).transpose(2, 0, 1)
    Xhat = np.matmul(np.linalg.pinv(Ahat, rcond=rcond), Bhat)
    return ifft_tubes(Xhat.transpose(1, 2, 0))


def write_records_csv(path, records, comments=()):
    """Write ``[(trial, RunRecord), ...]`` to one CSV file."""
    with open(path, "w", newline="\n") as f:
        for c in comments:
            f.write(f"# {c}\n")
        f.write(CSV_HEADER + "\n")
        for trial, rec in records:
            for row in rec.csv_rows(trial):
                f.write(row + "\n")
