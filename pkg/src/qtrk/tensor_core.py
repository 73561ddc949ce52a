"""Third-order tensors under the t-product.

Tensors are plain float64 numpy arrays of shape ``(m, l, n)`` in C order, so
element ``(i, j, h)`` sits at flat offset ``((i * l) + j) * n + h`` and every
tube fiber ``A[i, j, :]`` is contiguous.  Spectral tensors are complex arrays
of the same shape holding the DFT of every tube fiber along the last axis.

The fast t-product multiplies frontal slices in the Fourier domain; the
block-circulant form is kept as a reference oracle.
"""
import struct

import numpy as np

from .errors import NumericalError, ShapeError, DomainError

IMAG_TOL = 1e-10
T3B_MAGIC = b"T3BINv01"


def tensor3(data, copy=True):
    """Validate ``data`` as a real third-order tensor and return it as float64."""
    if copy:
        arr = np.array(data, dtype=np.float64, order="C")
    else:
        arr = np.ascontiguousarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"expected a third-order tensor, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericalError("tensor contains non-finite entries")
    return arr


def identity(m, n):
    """Tensor identity: first frontal slice is I_m, all others zero."""
    eye = np.zeros((m, m, n))
    eye[:, :, 0] = np.eye(m)
    return eye


def _readonly(view):
    view = view.view()
    view.flags.writeable = False
    return view


def row_slice(A, i):
    """Read-only view of the ``i``-th horizontal (row) slice, shape 1 x l x n."""
    if not 0 <= i < A.shape[0]:
        raise IndexError(f"row index {i} out of range for {A.shape}")
    return _readonly(A[i : i + 1])


def col_slice(A, j):
    """Read-only view of the ``j``-th lateral (column) slice, shape m x 1 x n."""
    if not 0 <= j < A.shape[1]:
        raise IndexError(f"column index {j} out of range for {A.shape}")
    return _readonly(A[:, j : j + 1])


def frontal_slice(A, h):
    """Read-only view of the ``h``-th frontal slice as an m x l matrix."""
    if not 0 <= h < A.shape[2]:
        raise IndexError(f"frontal index {h} out of range for {A.shape}")
    return _readonly(A[:, :, h])


# ---------------------------------------------------------------------------
# Block-circulant (reference) form
# ---------------------------------------------------------------------------

def bcirc(A):
    """Block-circulant matrix of shape (m n, l n).

    Block ``(r, c)`` equals frontal slice ``(r - c) mod n``.
    """
    m, l, n = A.shape
    out = np.empty((m * n, l * n), dtype=A.dtype)
    for r in range(n):
        for c in range(n):
            out[r * m : (r + 1) * m, c * l : (c + 1) * l] = A[:, :, (r - c) % n]
    return out


def unfold(B):
    """Stack the frontal slices vertically: (l, p, n) -> (l n, p)."""
    return np.concatenate([B[:, :, h] for h in range(B.shape[2])], axis=0)


def fold(M, n):
    """Inverse of :func:`unfold` for depth ``n``."""
    M = np.asarray(M)
    rows = M.shape[0]
    if n < 1 or rows % n:
        raise ShapeError(f"cannot fold {M.shape} into depth {n}: row count not divisible")
    l = rows // n
    return np.stack([M[h * l : (h + 1) * l] for h in range(n)], axis=2)


def tprod_bcirc(A, B):
    """t-product through the explicit block-circulant matrix (slow oracle)."""
    _check_conform(A, B)
    return fold(bcirc(A) @ unfold(B), A.shape[2])


def ttranspose(A):
    """Tensor transpose: transpose every frontal slice, reverse slices 2..n."""
    n = A.shape[2]
    order = [0] + list(range(n - 1, 0, -1))
    return np.ascontiguousarray(A.transpose(1, 0, 2)[:, :, order])


# ---------------------------------------------------------------------------
# Fourier form
# ---------------------------------------------------------------------------

def fft_tubes(A):
    """Unnormalized DFT of every tube fiber."""
    return np.fft.fft(A, axis=2)


def ifft_tubes(Ahat, tol=IMAG_TOL):
    """Inverse tube DFT with 1/n scaling, returning a real tensor.

    The imaginary residue must be at most ``tol`` relative to
    ``max(1, max |real part|)``; anything larger means the input was not
    conjugate symmetric and is reported rather than discarded.
    """
    full = np.fft.ifft(Ahat, axis=2)
    real = np.ascontiguousarray(full.real)
    if real.size:
        resid = np.max(np.abs(full.imag))
        scale = max(1.0, float(np.max(np.abs(real))))
        if resid > tol * scale:
            raise NumericalError(
                f"inverse tube DFT has imaginary residue {resid:.3e} (> {tol:.1e} x {scale:.3g})"
            )
    return real


def to_slices(Ahat):
    """Contiguous (n, m, l) stack of the Fourier slices of ``Ahat``.

    Batched matmul on strided views is several times slower than on
    contiguous slices, so solvers cache this form of ``A``.
    """
    return np.ascontiguousarray(Ahat.transpose(2, 0, 1))


def spectral_tprod(Ahat, Bhat, A_slices=None):
    """Per-frontal-slice complex product of two spectral tensors."""
    if A_slices is None:
        A_slices = to_slices(Ahat)
    # (n, m, l) @ (n, l, p) -> (n, m, p)
    return np.matmul(A_slices, to_slices(Bhat)).transpose(1, 2, 0)


def tprod(A, B, Ahat=None, A_slices=None):
    """t-product ``A * B`` of an (m, l, n) and an (l, p, n) tensor.

    ``Ahat`` may carry a precomputed :func:`fft_tubes` of ``A`` and
    ``A_slices`` its :func:`to_slices` form.
    """
    _check_conform(A, B)
    if Ahat is None and A_slices is None:
        Ahat = fft_tubes(A)
    return ifft_tubes(spectral_tprod(Ahat, fft_tubes(B), A_slices))


def _check_conform(A, B):
    if A.ndim != 3 or B.ndim != 3 or A.shape[1] != B.shape[0] or A.shape[2] != B.shape[2]:
        raise ShapeError(f"t-product shapes do not conform: {A.shape} * {B.shape}")


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def frobenius(A):
    return float(np.sqrt(np.sum(np.square(A))))


def relative_error(X, Xstar):
    """``||Xstar - X||_F / ||Xstar||_F``."""
    ref = frobenius(Xstar)
    if ref == 0.0:
        raise DomainError("relative error undefined for a zero reference tensor")
    return frobenius(Xstar - X) / ref


# ---------------------------------------------------------------------------
# T3B binary format
# ---------------------------------------------------------------------------

def write_t3b(path, A):
    A = tensor3(A, copy=False)
    with open(path, "wb") as f:
        f.write(T3B_MAGIC)
        f.write(struct.pack("<QQQ", *A.shape))
        f.write(A.astype("<f8", copy=False).tobytes(order="C"))


def read_t3b(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != T3B_MAGIC:
        raise ShapeError(f"{path}: bad magic {blob[:8]!r}")
    if len(blob) < 32:
        raise ShapeError(f"{path}: truncated header")
    m, l, n = struct.unpack("<QQQ", blob[8:32])
    expected = 32 + 8 * m * l * n
    if len(blob) != expected:
        raise ShapeError(f"{path}: length {len(blob)} does not match dims {(m, l, n)} ({expected})")
    data = np.frombuffer(blob, dtype="<f8", offset=32).reshape(m, l, n)
    return tensor3(data)
