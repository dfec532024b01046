import numpy as np
import pytest

from foldedot.classical_ot import kantorovich_lp
from foldedot.convex_generic import (
    HermiteTruncation,
    PhasePoint,
    as_phase_measure,
    commutator_defect,
    folded_kantorovich_cost,
    gp_cost_eval,
    gp_folded_cost,
    simplex_instance,
)
from foldedot.errors import BadShape, TailMass, ValidationError


def test_simplex_matches_classical(rng):
    inst = simplex_instance(4)
    pts = rng.standard_normal((4, 2))
    c = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    mu, nu = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
    rep = folded_kantorovich_cost(inst, inst, lambda i, j: c[i, j], mu, nu)
    assert rep.value == pytest.approx(kantorovich_lp(c, mu, nu).value, abs=1e-10)
    assert inst.represents(np.bincount(rep.plan.left, rep.plan.weights, 4), np.arange(4), mu)


def test_simplex_validation():
    inst = simplex_instance(3)
    with pytest.raises(ValidationError):
        inst.point_features([0.5, 0.6, 0.0])
    with pytest.raises(BadShape):
        inst.point_features([0.5, 0.5])
    with pytest.raises(ValidationError):
        simplex_instance(1)


def test_ladder_operators():
    tr = HermiteTruncation(6, hbar=0.5)
    assert np.allclose(tr.Y, tr.Y.conj().T)
    assert np.allclose(tr.Pmom, tr.Pmom.conj().T)
    assert commutator_defect(tr) <= 1e-12
    with pytest.raises(ValidationError):
        HermiteTruncation(1)


def test_cost_eval_frozen_values():
    tr = HermiteTruncation(12)
    g = tr.ground_state()
    # <0|(x - Y)^2 + (xi - P)^2|0> = x^2 + xi^2 + hbar
    assert gp_cost_eval(g, PhasePoint(0.0, 0.0), tr) == pytest.approx(1.0, abs=1e-14)
    assert gp_cost_eval(g, PhasePoint(1.5, -2.0), tr) == pytest.approx(1 + 2.25 + 4.0, abs=1e-12)
    # first excited state: <1|Y^2|1> = <1|P^2|1> = 3 hbar / 2
    e1 = np.zeros(12, dtype=complex)
    e1[1] = 1
    assert gp_cost_eval(e1, PhasePoint(0.0, 0.0), tr) == pytest.approx(3.0, abs=1e-12)


def test_cost_eval_guards():
    tr = HermiteTruncation(4)
    last = np.zeros(4, dtype=complex)
    last[-1] = 1
    with pytest.raises(TailMass) as err:
        gp_cost_eval(last, PhasePoint(0, 0), tr, index=3)
    assert err.value.index == 3 and err.value.tail == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        gp_cost_eval(2 * tr.ground_state(), PhasePoint(0, 0), tr)
    with pytest.raises(BadShape):
        gp_cost_eval(np.ones(3) / np.sqrt(3), PhasePoint(0, 0), tr)


def test_gp_two_point_measure():
    tr = HermiteTruncation(16)
    g = tr.ground_state()
    rho = np.outer(g, g.conj())
    rep = gp_folded_cost(rho, [0.5, 0.5], [(1.0, 0.0), (-1.0, 0.0)], tr)
    # a pure state cannot be split, so the cost is the average of the two costs
    assert rep.objective == pytest.approx(2.0, abs=1e-9)
    assert rep.converged and rep.lower_bound <= rep.objective + 1e-12
    assert rep.value == pytest.approx(np.sqrt(rep.objective))


def test_gp_mixed_state_bounds():
    tr = HermiteTruncation(10)
    w = np.array([0.7, 0.3] + [0.0] * 8)
    rho = np.diag(w).astype(complex)
    rep = gp_folded_cost(rho, [0.6, 0.4], [(0.5, 0.0), (-0.5, 0.5)], tr, max_rounds=40)
    assert rep.lower_bound <= rep.objective + 1e-9
    # a feasible plan on the eigenbasis: e0 -> p1 (0.6), e0 -> p2 (0.1), e1 -> p2 (0.3)
    e0, e1 = np.eye(10)[0], np.eye(10)[1]
    p1, p2 = PhasePoint(0.5, 0.0), PhasePoint(-0.5, 0.5)
    spectral = (0.6 * gp_cost_eval(e0, p1, tr) + 0.1 * gp_cost_eval(e0, p2, tr)
                + 0.3 * gp_cost_eval(e1, p2, tr))
    assert rep.objective <= spectral + 1e-12
    assert all(t <= 1e-6 for t in rep.tail_masses)


def test_phase_measure_validation():
    with pytest.raises(ValidationError):
        as_phase_measure([0.5, 0.6], [(0, 0), (1, 1)])
    with pytest.raises(BadShape):
        as_phase_measure([1.0], [(0, 0), (1, 1)])
