"""Complex matrix substrate: Casorati reshaping, factor init, small dense solves.

Layout convention used everywhere in this package: a frame stack has shape
(nz, nx, nt) and vectorizes column-major with the axial (first) index fastest,
so Casorati column t is frame t flattened in Fortran order. All internal
arithmetic is 64-bit complex; file I/O narrows to 32-bit at the boundary.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

_EPS = np.finfo(np.float64).eps


class SolverError(RuntimeError):
    """A dense factorization or solve could not meet its accuracy contract."""


@dataclass
class FrameSequence:
    """IQ frame stack (nz, nx, nt) with its acquisition timing in Hz."""

    voxels: np.ndarray
    frame_rate: float
    center_freq: float
    prf: float

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"expected (nz, nx, nt) voxels, got shape {self.voxels.shape}")

    @property
    def nz(self):
        return self.voxels.shape[0]

    @property
    def nx(self):
        return self.voxels.shape[1]

    @property
    def nt(self):
        return self.voxels.shape[2]


def to_casorati(seq):
    """Reshape an (nz, nx, nt) frame stack into an (nz*nx, nt) matrix."""
    if isinstance(seq, FrameSequence):
        seq = seq.voxels
    seq = np.asarray(seq)
    if seq.ndim != 3:
        raise ValueError(f"expected (nz, nx, nt) array, got shape {seq.shape}")
    nz, nx, nt = seq.shape
    return seq.reshape(nz * nx, nt, order="F")


def from_casorati(m, nz, nx):
    """Inverse of to_casorati: unpack columns into (nz, nx, nt) frames."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != nz * nx:
        raise ValueError(f"matrix with {m.shape} rows does not factor as nz*nx = {nz}*{nx}")
    return m.reshape(nz, nx, m.shape[1], order="F")


def orthonormal_columns(m, d):
    """Orthonormal basis for the span of the first d columns of m (QR based)."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    if not 1 <= d <= min(m.shape):
        raise ValueError(f"d={d} outside [1, min{m.shape}]")
    lead = m[:, :d]
    s = np.linalg.svd(lead, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= max(lead.shape) * _EPS * s[0]:
        raise SolverError(
            f"leading {d} columns are rank deficient "
            f"(singular values {s[0]:.3e} .. {s[-1]:.3e}); reduce d"
        )
    q, _ = np.linalg.qr(lead)
    return q


def hermitian_solve(a, rhs):
    """Solve a @ x = rhs for Hermitian positive definite a via Cholesky.

    One step of iterative refinement keeps the residual below 1e-10 * ||rhs||_F
    even for moderately ill-conditioned Gram systems.
    """
    a = np.asarray(a)
    rhs = np.asarray(rhs)
    try:
        cf = scipy.linalg.cho_factor(a, check_finite=False)
    except np.linalg.LinAlgError as err:
        w = np.linalg.eigvalsh(a)
        wmin, wmax = w.min(), w.max()
        cond = np.inf if wmin <= 0 else wmax / wmin
        raise SolverError(
            "matrix is not positive definite "
            f"(eigenvalues in [{wmin:.3e}, {wmax:.3e}], condition {cond:.3e})"
        ) from err
    x = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    x = x + scipy.linalg.cho_solve(cf, rhs - a @ x, check_finite=False)
    return x


def svd(m):
    """Economy SVD. Returns (u, s, v) with m = u @ diag(s) @ v.conj().T, s descending.

    Both factors carry min(m, n) columns; the full left basis is never needed
    for band filtering and would cost O(rows**2) memory on tall matrices.
    """
    u, s, vh = np.linalg.svd(np.asarray(m), full_matrices=False)
    return u, s, vh.conj().T
