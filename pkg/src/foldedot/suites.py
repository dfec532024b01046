"""Invariant suites run by ``foldedot suite NAME``.

Each suite returns a list of ``Check`` records: the worst residual seen over
a seeded batch and the tolerance it is held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .classical_ot import kantorovich_lp
from .convex_generic import (
    HermiteTruncation,
    PhasePoint,
    commutator_defect,
    folded_kantorovich_cost,
    gp_cost_eval,
    gp_folded_cost,
    simplex_instance,
)
from .errors import UnknownSuite
from .folded_core import SolveConfig, check_representing, folded_kantorovich_upper
from .metrics import FROBENIUS, FUBINI_STUDY, norm_comparison_check, projector
from .oracle import OracleConfig, oracle_qubit_dhat


@dataclass
class Check:
    name: str
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tol)


def random_state(d, rng):
    z = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return z / np.linalg.norm(z)


def random_density(d, rng, rank=None):
    r = d if rank is None else rank
    z = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
    m = z @ z.conj().T
    return m / np.trace(m).real


def metrics_suite(seed=0, n=200):
    rng = np.random.default_rng(seed)
    sym = diag = tri = cmp_ = fro = 0.0
    for _ in range(n):
        d = int(rng.integers(2, 5))
        a, b, c = (random_state(d, rng) for _ in range(3))
        for m in (FROBENIUS, FUBINI_STUDY):
            sym = max(sym, abs(m(a, b) - m(b, a)))
            diag = max(diag, abs(m(a, a)))
            tri = max(tri, m(a, c) - m(a, b) - m(b, c))
        lo, mid, hi = norm_comparison_check(a, b)
        cmp_ = max(cmp_, lo - mid, mid - hi)
        fro = max(fro, abs(FROBENIUS(a, b) - np.linalg.norm(projector(a) - projector(b))))
    return [Check("symmetry", sym, 1e-12), Check("zero diagonal", diag, 1e-12),
            Check("triangle inequality", tri, 1e-12), Check("norm comparison", cmp_, 1e-12),
            Check("frobenius = projector norm", fro, 1e-12)]


def classical_suite(seed=0, n=50):
    rng = np.random.default_rng(seed)
    gap = supp = 0.0
    for _ in range(n):
        m, k = (int(x) for x in rng.integers(2, 7, size=2))
        c = rng.random((m, k))
        mu, nu = rng.dirichlet(np.ones(m)), rng.dirichlet(np.ones(k))
        plan = kantorovich_lp(c, mu, nu)
        a = np.vstack([np.kron(np.eye(m), np.ones((1, k))), np.kron(np.ones((1, m)), np.eye(k))])
        ref = linprog(c.ravel(), A_eq=a, b_eq=np.concatenate([mu, nu]), bounds=(0, None),
                      method="highs").fun
        gap = max(gap, abs(plan.value - ref))
        supp = max(supp, plan.support - (m + k - 1))
    return [Check("network simplex = reference LP", gap, 1e-9),
            Check("vertex support <= m + n - 1", supp, 0.0)]


def simplex_suite(seed=0, n=20):
    rng = np.random.default_rng(seed)
    inst = simplex_instance(5)
    gap = 0.0
    for _ in range(n):
        pts = rng.standard_normal((5, 3))
        c = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        mu, nu = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        rep = folded_kantorovich_cost(inst, inst, lambda i, j: c[i, j], mu, nu)
        gap = max(gap, abs(rep.value - kantorovich_lp(c, mu, nu).value))
    return [Check("folded = classical on the simplex", gap, 1e-8)]


def folded_qubit_suite(seed=0, n=4):
    rng = np.random.default_rng(seed)
    cfg = SolveConfig(restarts=2, seed=seed)
    rho = np.eye(2) / 2
    sigma = np.diag([1.0, 0.0])
    sandwich = abs(folded_kantorovich_upper(rho, sigma, cfg).value - 1 / np.sqrt(2))
    pure = norm = rep_ = gap = 0.0
    for _ in range(n):
        a, b = random_state(2, rng), random_state(2, rng)
        for m in ("frobenius", "fubini-study"):
            v = folded_kantorovich_upper(projector(a), projector(b), SolveConfig(metric=m)).value
            ref = FROBENIUS(a, b) if m == "frobenius" else FUBINI_STUDY(a, b)
            pure = max(pure, abs(v - ref))
        r, s = random_density(2, rng), random_density(2, rng)
        res = folded_kantorovich_upper(r, s, cfg)
        norm = max(norm, np.linalg.norm(r - s) - res.value)
        rep_ = max(rep_, 0.0 if check_representing(res.plan, r, s, 1e-7) else 1.0)
        orc = oracle_qubit_dhat(r, s, ocfg=OracleConfig(seed=seed))
        gap = max(gap, abs(res.value - orc.value))
    return [Check("sandwich instance = 1/sqrt 2", sandwich, 1e-6),
            Check("pure pairs exact", pure, 1e-9),
            Check("value >= norm lower bound", norm, 1e-9),
            Check("plans represent inputs", rep_, 0.0),
            Check("oracle gap", gap, 1e-3)]


def gp_suite(seed=0):
    comm = max(commutator_defect(HermiteTruncation(n)) for n in (8, 16, 32))
    tr = HermiteTruncation(16)
    psi = tr.ground_state()
    r = np.outer(psi, psi.conj())
    ground = abs(gp_folded_cost(r, [1.0], [(0.0, 0.0)], tr).objective - 1.0)
    shifted = max(abs(gp_folded_cost(r, [1.0], [(a, 0.0)], tr).objective - (1 + a * a))
                  for a in (0.5, 1.0, 2.0))
    direct = max(abs(gp_cost_eval(psi, PhasePoint(x, xi), tr) - (1 + x * x + xi * xi))
                 for x, xi in ((0.3, -0.2), (1.0, 1.0), (-2.0, 0.5)))
    return [Check("commutator on interior block", comm, 1e-12),
            Check("ground state vs origin", ground, 1e-10),
            Check("ground state vs shifted point", shifted, 1e-8),
            Check("cost expansion at the ground state", direct, 1e-10)]


SUITES = {
    "metrics": metrics_suite,
    "classical": classical_suite,
    "simplex": simplex_suite,
    "folded-qubit": folded_qubit_suite,
    "gp": gp_suite,
}


def run_suite(name: str, seed: int = 0) -> list[Check]:
    try:
        fn = SUITES[name]
    except KeyError:
        raise UnknownSuite(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None
    return fn(seed=seed)
