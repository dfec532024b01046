from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from foldedot.classical_ot import kantorovich_lp, wasserstein_p
from foldedot.errors import BadExponent, ShapeMismatch, ValidationError


def _vertex_enumeration(c, mu, nu):
    """Brute-force reference: best basic feasible solution of the transport LP."""
    m, n = c.shape
    a = np.vstack([np.kron(np.eye(m), np.ones((1, n))), np.kron(np.ones((1, m)), np.eye(n))])
    b = np.concatenate([mu, nu])
    best = np.inf
    for cols in combinations(range(m * n), m + n - 1):
        sub = a[:, cols]
        x, *_ = np.linalg.lstsq(sub, b, rcond=None)
        if np.linalg.norm(sub @ x - b) < 1e-10 and np.all(x >= -1e-12):
            best = min(best, float(c.ravel()[list(cols)] @ x))
    return best


def test_frozen_small_instances():
    # exact values worked out by hand
    assert kantorovich_lp(np.array([[0.0, 1.0], [1.0, 0.0]]), [0.5, 0.5], [1.0, 0.0]).value == pytest.approx(0.5)
    c = np.abs(np.subtract.outer(np.arange(3.0), np.arange(3.0)))
    assert kantorovich_lp(c, [1, 0, 0], [0, 0, 1]).value == pytest.approx(2.0)
    assert kantorovich_lp(c, [0.5, 0.5, 0], [0, 0.5, 0.5]).value == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(30))
def test_matches_vertex_enumeration_3x3(seed):
    r = np.random.default_rng(seed)
    c = r.random((3, 3))
    mu, nu = r.dirichlet(np.ones(3)), r.dirichlet(np.ones(3))
    res = kantorovich_lp(c, mu, nu)
    assert res.value == pytest.approx(_vertex_enumeration(c, mu, nu), abs=1e-9)
    assert np.allclose(res.plan.sum(1), mu, atol=1e-12)
    assert np.allclose(res.plan.sum(0), nu, atol=1e-12)
    assert res.support <= 5


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 7), st.integers(1, 7))
def test_plan_is_feasible_vertex(seed, m, n):
    r = np.random.default_rng(seed)
    c = r.random((m, n))
    mu, nu = r.dirichlet(np.ones(m)), r.dirichlet(np.ones(n))
    res = kantorovich_lp(c, mu, nu)
    assert np.all(res.plan >= 0)
    assert np.allclose(res.plan.sum(1), mu, atol=1e-9)
    assert np.allclose(res.plan.sum(0), nu, atol=1e-9)
    assert res.support <= m + n - 1


def test_zero_weight_atoms():
    c = np.array([[0.0, 2.0, 1.0], [2.0, 0.0, 1.0]])
    res = kantorovich_lp(c, [1.0, 0.0], [0.0, 0.5, 0.5])
    assert res.value == pytest.approx(1.5)
    assert np.all(res.plan[1] == 0) and np.all(res.plan[:, 0] == 0)


def test_validation():
    with pytest.raises(ValidationError):
        kantorovich_lp(np.zeros((2, 2)), [0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValidationError):
        kantorovich_lp(-np.ones((2, 2)), [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ShapeMismatch):
        kantorovich_lp(np.zeros((2, 3)), [0.5, 0.5], [0.5, 0.5])


def test_wasserstein_on_line():
    pts = [0.0, 1.0, 3.0]
    metric = lambda a, b: abs(a - b)  # noqa: E731
    assert wasserstein_p(pts, metric, [1, 0, 0], [0, 0, 1], p=2) == pytest.approx(3.0)
    assert wasserstein_p(pts, metric, [0.5, 0.5, 0], [0, 0.5, 0.5], p=1) == pytest.approx(1.5)
    with pytest.raises(BadExponent):
        wasserstein_p(pts, metric, [1, 0, 0], [1, 0, 0], p=0.5)
