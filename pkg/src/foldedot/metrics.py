"""Distances between pure states, given as unit vectors up to global phase.

Both built-in metrics depend on the states only through the overlap modulus
``|<psi|phi>|``, which is what the solvers exploit to get gradients.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import AntipodalAmbiguity, DimMismatch, ValidationError

SQRT2 = np.sqrt(2.0)


@lru_cache(maxsize=None)
def _triu(d: int):
    return np.triu_indices(d, 1)


def as_state(psi) -> np.ndarray:
    v = np.asarray(psi, dtype=np.complex128).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValidationError("state vector has zero or non-finite norm")
    return v / n


def projector(psi) -> np.ndarray:
    v = as_state(psi)
    return np.outer(v, v.conj())


def cos_sin(psi, phi) -> tuple[float, float]:
    """``(|<psi|phi>|, sqrt(1 - |<psi|phi>|^2))`` with the sine from the wedge product.

    The Lagrange identity keeps the sine accurate for nearly equal states,
    where ``sqrt(1 - cos^2)`` would turn roundoff into a 1e-8 error.
    """
    a, b = as_state(psi), as_state(phi)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    c, s = pairwise_cos_sin(a[None], b[None])
    return float(c[0, 0]), float(s[0, 0])


def pairwise_cos_sin(left: np.ndarray, right: np.ndarray):
    """Overlap moduli and wedge norms between the rows of ``left`` and ``right``."""
    left = np.asarray(left, dtype=np.complex128)
    right = np.asarray(right, dtype=np.complex128)
    cos = np.minimum(np.abs(left.conj() @ right.T), 1.0)
    d = left.shape[1]
    iu = _triu(d)
    if iu[0].size == 0:
        return cos, np.zeros_like(cos)
    # |a ^ b|^2 = sum_{i<l} |a_i b_l - a_l b_i|^2
    w = (left[:, None, iu[0]] * right[None, :, iu[1]]
         - left[:, None, iu[1]] * right[None, :, iu[0]])
    sin = np.minimum(np.sqrt(np.sum(np.abs(w) ** 2, axis=-1)), 1.0)
    return cos, sin


def rowwise_cos_sin(left: np.ndarray, right: np.ndarray):
    """Like ``pairwise_cos_sin`` but pairing row k of ``left`` with row k of ``right``."""
    left = np.asarray(left, dtype=np.complex128)
    right = np.asarray(right, dtype=np.complex128)
    cos = np.minimum(np.abs(np.sum(left.conj() * right, axis=1)), 1.0)
    iu = _triu(left.shape[1])
    w = left[:, iu[0]] * right[:, iu[1]] - left[:, iu[1]] * right[:, iu[0]]
    sin = np.minimum(np.sqrt(np.sum(np.abs(w) ** 2, axis=-1)), 1.0)
    return cos, sin


def overlap(psi, phi) -> float:
    """``|<psi|phi>|`` clamped into [0, 1]."""
    return cos_sin(psi, phi)[0]


def same_state(psi, phi, tol: float = 1e-12) -> bool:
    return overlap(psi, phi) >= 1.0 - tol


def frobenius_pure(psi, phi) -> float:
    """``sqrt(2) sqrt(1 - |<psi|phi>|^2)``, the Frobenius norm of the projector difference."""
    return float(SQRT2 * cos_sin(psi, phi)[1])


def fubini_study(psi, phi) -> float:
    c, s = cos_sin(psi, phi)
    return float(np.arctan2(s, c))


class Metric:
    """A distance on pure states.

    Subclasses that depend only on the overlap implement ``from_cos_sin`` and
    ``d_sq_overlap`` (derivative in the squared overlap) and set ``overlap_form``.
    """

    name = "metric"
    diameter = float("nan")
    overlap_form = False

    def __call__(self, psi, phi) -> float:
        raise NotImplementedError

    def pairwise(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Distance matrix between the rows of ``left`` and ``right``."""
        return np.array([[self(a, b) for b in right] for a in left], dtype=float).reshape(
            len(left), len(right)
        )

    def cost(self, left, right, p: float) -> np.ndarray:
        return self.pairwise(left, right) ** p

    def paired_cost(self, left, right, p: float) -> np.ndarray:
        return np.array([self(a, b) for a, b in zip(left, right)], dtype=float) ** p

    def __repr__(self):
        return f"<Metric {self.name}>"


class _OverlapMetric(Metric):
    overlap_form = True

    def from_cos_sin(self, cos, sin):
        raise NotImplementedError

    def d_sq_overlap(self, s):
        raise NotImplementedError

    def __call__(self, psi, phi) -> float:
        c, s = cos_sin(psi, phi)
        return float(self.from_cos_sin(c, s))

    def pairwise(self, left, right):
        return self.from_cos_sin(*pairwise_cos_sin(left, right))

    def paired_cost(self, left, right, p: float):
        return self.from_cos_sin(*rowwise_cos_sin(left, right)) ** p

    def from_sq_overlap(self, s):
        s = np.clip(s, 0.0, 1.0)
        return self.from_cos_sin(np.sqrt(s), np.sqrt(1.0 - s))

    def cost_derivative(self, s, p: float):
        """d(dist^p)/ds, with the value at coincident states set to 0 when p == 1."""
        s = np.asarray(s, dtype=float)
        sc = np.clip(s, 1e-14, 1.0 - 1e-14)
        m = self.from_sq_overlap(sc)
        out = p * m ** (p - 1.0) * self.d_sq_overlap(sc)
        if p == 1.0:
            out = np.where(s >= 1.0 - 1e-14, 0.0, out)
        return out


class Frobenius(_OverlapMetric):
    name = "frobenius"
    diameter = float(SQRT2)

    def from_cos_sin(self, cos, sin):
        return SQRT2 * sin

    def d_sq_overlap(self, s):
        return -1.0 / (SQRT2 * np.sqrt(1.0 - s))


class FubiniStudy(_OverlapMetric):
    name = "fubini-study"
    diameter = float(np.pi / 2)

    def from_cos_sin(self, cos, sin):
        return np.arctan2(sin, cos)

    def d_sq_overlap(self, s):
        return -0.5 / np.sqrt(s * (1.0 - s))


class CallbackMetric(Metric):
    """User-supplied metric; sanity-sampled for symmetry and zero diagonal on creation."""

    def __init__(self, fn: Callable, dim: int, name: str = "callback",
                 diameter: float | None = None, samples: int = 32, seed: int = 0,
                 tol: float = 1e-10):
        self.fn = fn
        self.name = name
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(samples):
            a = as_state(rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
            b = as_state(rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
            dab, dba, daa = float(fn(a, b)), float(fn(b, a)), float(fn(a, a))
            if dab < -tol or abs(dab - dba) > tol or abs(daa) > tol:
                raise ValidationError(
                    f"callback metric {name!r} fails symmetry/zero-diagonal/nonnegativity sampling"
                )
            worst = max(worst, dab)
        # sampled estimate unless the caller knows better
        self.diameter = float(diameter) if diameter is not None else worst

    def __call__(self, psi, phi) -> float:
        return float(self.fn(as_state(psi), as_state(phi)))


FROBENIUS = Frobenius()
FUBINI_STUDY = FubiniStudy()

_REGISTRY = {
    "frobenius": FROBENIUS,
    "fr": FROBENIUS,
    "fubini-study": FUBINI_STUDY,
    "fubini_study": FUBINI_STUDY,
    "fs": FUBINI_STUDY,
}


def get_metric(metric) -> Metric:
    if isinstance(metric, Metric):
        return metric
    try:
        return _REGISTRY[str(metric).lower()]
    except KeyError:
        raise ValidationError(f"unknown metric {metric!r}") from None


def register_metric(name: str, fn: Callable, dim: int, **kwargs) -> CallbackMetric:
    m = CallbackMetric(fn, dim, name=name, **kwargs)
    _REGISTRY[name.lower()] = m
    return m


def fs_geodesic(psi, phi, t: float, branch: float | None = None) -> np.ndarray:
    """Point at fraction ``t`` along the Fubini-Study geodesic from psi to phi.

    Orthogonal endpoints have a circle of geodesics; pass ``branch`` (a phase
    angle) to pick one, otherwise AntipodalAmbiguity is raised.
    """
    a, b = as_state(psi), as_state(phi)
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    ip = np.vdot(a, b)
    mag = abs(ip)
    if mag <= 1e-12:
        if 0.0 < t < 1.0 and branch is None:
            raise AntipodalAmbiguity("orthogonal states: geodesic not unique, pass branch=")
        b = b * np.exp(1j * (branch or 0.0))
    else:
        b = b * (np.conj(ip) / mag)
    theta = float(np.arccos(min(1.0, mag)))
    if theta < 1e-15:
        return a
    out = (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / np.sin(theta)
    return out / np.linalg.norm(out)


def norm_comparison_check(psi, phi) -> tuple[float, float, float]:
    """``(||P-Q||_F / sqrt 2, d_FS, pi/(2 sqrt 2) ||P-Q||_F)``; left <= middle <= right."""
    fr = frobenius_pure(psi, phi)
    return fr / SQRT2, fubini_study(psi, phi), np.pi / (2 * SQRT2) * fr
