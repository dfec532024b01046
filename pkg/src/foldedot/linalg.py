"""Dense complex linear algebra used throughout the solvers.

Hermitian eigendecomposition is done with cyclic complex Jacobi rotations,
which are accurate and cheap at the sizes handled here (d <= 8 or so).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import BadShape, NoConvergence, NotHermitian, ZeroTrace

HERMITIAN_TOL = 1e-10
JACOBI_TOL = 1e-12
EIG_DROP = 1e-12


class HermitianEig(NamedTuple):
    eigenvalues: np.ndarray  # ascending, real
    eigenvectors: np.ndarray  # columns orthonormal


def as_complex_matrix(a, square: bool = False) -> np.ndarray:
    m = np.array(a, dtype=np.complex128)
    if m.ndim != 2:
        raise BadShape(f"expected a 2-d matrix, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise BadShape(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise BadShape("matrix has non-finite entries")
    return m


def hermitian_defect(a: np.ndarray) -> float:
    """Max-abs entry of ``a - a^dagger``."""
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def _fix_phases(v: np.ndarray) -> np.ndarray:
    # first nonzero component of every column made real-positive
    for k in range(v.shape[1]):
        col = v[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size:
            z = col[idx[0]]
            v[:, k] = col * (abs(z) / z)
    return v


def eigh(h, tol: float = JACOBI_TOL) -> HermitianEig:
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi sweeps.

    Raises NotHermitian if ``max|H - H^dagger| > 1e-10`` and NoConvergence
    after ``100 d^2`` sweeps without reaching the off-diagonal tolerance.
    """
    a = as_complex_matrix(h, square=True)
    if hermitian_defect(a) > HERMITIAN_TOL:
        raise NotHermitian(f"matrix is not Hermitian within {HERMITIAN_TOL:g}")
    d = a.shape[0]
    a = 0.5 * (a + a.conj().T)
    v = np.eye(d, dtype=np.complex128)
    scale = np.linalg.norm(a)
    thresh = tol * scale
    max_sweeps = 100 * d * d
    off_mask = ~np.eye(d, dtype=bool)

    sweeps = 0
    polish = 1  # one extra sweep once the tolerance is met
    while d > 1:
        off = np.sqrt(np.sum(np.abs(a[off_mask]) ** 2))
        if off <= thresh:
            if polish == 0 or off == 0.0:
                break
            polish -= 1
        if sweeps >= max_sweeps:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                b = a[p, q]
                mag = abs(b)
                if mag <= 1e-300 or mag <= 1e-18 * scale:
                    continue
                app, aqq = a[p, p].real, a[q, q].real
                tau = (aqq - app) / (2.0 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ph = np.conj(b) / mag  # e^{-i phi}
                g = np.array([[c, s], [-s * ph, c * ph]], dtype=np.complex128)
                idx = [p, q]
                a[:, idx] = a[:, idx] @ g
                a[idx, :] = g.conj().T @ a[idx, :]
                a[p, q] = a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                v[:, idx] = v[:, idx] @ g

    w = np.real(np.diag(a)).copy()
    order = np.argsort(w, kind="stable")
    return HermitianEig(w[order], _fix_phases(v[:, order].copy()))


def project_to_density(a) -> np.ndarray:
    """Nearest-style cleanup of ``a`` onto the density matrices.

    Hermitian part, negative eigenvalues clipped to zero, trace renormalised.
    """
    m = as_complex_matrix(a, square=True)
    b = 0.5 * (m + m.conj().T)
    w, v = eigh(b)
    w = np.clip(w, 0.0, None)
    tr = float(w.sum())
    if tr < 1e-12:
        raise ZeroTrace("clipped matrix has (near) zero trace")
    out = (v * (w / tr)) @ v.conj().T
    return 0.5 * (out + out.conj().T)


def random_isometry(m: int, r: int, seed) -> np.ndarray:
    """Haar-distributed ``m x r`` isometry from a seeded complex Gaussian."""
    if r < 1 or m < r:
        raise BadShape(f"need m >= r >= 1, got m={m}, r={r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.standard_normal((m, r)) + 1j * rng.standard_normal((m, r))) / np.sqrt(2.0)
    q, rr = np.linalg.qr(z)
    diag = np.diag(rr)
    return q * (diag / np.abs(diag))


def isometry_retract(u, tangent, step: float) -> np.ndarray:
    """Polar retraction of ``u + step * tangent`` back onto the isometries."""
    u = np.asarray(u, dtype=np.complex128)
    tangent = np.asarray(tangent, dtype=np.complex128)
    if u.shape != tangent.shape or u.ndim != 2:
        raise BadShape(f"shape mismatch: {u.shape} vs {tangent.shape}")
    if u.shape[0] < u.shape[1]:
        raise BadShape("isometry needs at least as many rows as columns")
    y = u + step * tangent
    w, _, vh = np.linalg.svd(y, full_matrices=False)
    return w @ vh


def stiefel_project(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project ``g`` onto the tangent space of the isometries at ``u``."""
    ug = u.conj().T @ g
    return g - u @ (0.5 * (ug + ug.conj().T))


def orthonormality_defect(u: np.ndarray) -> float:
    r = u.shape[1]
    return float(np.linalg.norm(u.conj().T @ u - np.eye(r)))


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    return random_isometry(d, d, rng)
