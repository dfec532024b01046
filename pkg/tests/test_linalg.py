import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foldedot.errors import BadShape, NotHermitian, ZeroTrace
from foldedot.linalg import (
    eigh,
    isometry_retract,
    orthonormality_defect,
    project_to_density,
    random_isometry,
    stiefel_project,
)


def _herm(seed, d):
    r = np.random.default_rng(seed)
    z = r.standard_normal((d, d)) + 1j * r.standard_normal((d, d))
    return 0.5 * (z + z.conj().T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_eigh_reconstructs_and_matches_lapack(seed, d):
    h = _herm(seed, d)
    w, v = eigh(h)
    assert np.all(np.diff(w) >= -1e-12)
    assert np.allclose(v.conj().T @ v, np.eye(d), atol=1e-10)
    assert np.allclose((v * w) @ v.conj().T, h, atol=1e-10)
    assert np.allclose(w, np.linalg.eigvalsh(h), atol=1e-10)


def test_eigh_phase_convention():
    _, v = eigh(_herm(3, 4))
    for k in range(4):
        first = v[np.flatnonzero(np.abs(v[:, k]) > 1e-12)[0], k]
        assert abs(first.imag) < 1e-12 and first.real > 0


def test_eigh_rejects_non_hermitian():
    with pytest.raises(NotHermitian):
        eigh(np.array([[0, 1], [0, 0]], dtype=complex))


def test_eigh_rejects_bad_shapes():
    with pytest.raises(BadShape):
        eigh(np.zeros((2, 3)))
    with pytest.raises(BadShape):
        eigh(np.array([[np.nan, 0], [0, 1]]))


def test_eigh_degenerate():
    w, v = eigh(np.eye(3))
    assert np.allclose(w, 1.0)
    assert np.allclose(v.conj().T @ v, np.eye(3))


def test_project_to_density():
    m = project_to_density(np.diag([2.0, -1.0, 1.0]))
    assert np.allclose(m, np.diag([2 / 3, 0, 1 / 3]))
    with pytest.raises(ZeroTrace):
        project_to_density(-np.eye(2))


def test_retraction_stays_on_isometries():
    u = random_isometry(5, 2, 0)
    assert orthonormality_defect(u) < 1e-12
    g = np.random.default_rng(1).standard_normal((5, 2)) + 0j
    t = stiefel_project(u, g)
    # tangent condition: u^H t is skew-Hermitian
    s = u.conj().T @ t
    assert np.allclose(s + s.conj().T, 0, atol=1e-12)
    for step in (1e-3, 0.1, 1.0, 10.0):
        assert orthonormality_defect(isometry_retract(u, t, step)) < 1e-12


def test_random_isometry_seeded():
    assert np.array_equal(random_isometry(4, 2, 7), random_isometry(4, 2, 7))
    with pytest.raises(BadShape):
        random_isometry(2, 3, 0)
