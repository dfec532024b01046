"""Brute-force reference values for qubit instances.

Candidate atoms come from a uniform Bloch-sphere grid, seeded random points
and the spectral atoms of both inputs.  The best coupling supported on the
candidate pool is found exactly by column generation: the restricted LP is
re-solved and the full pool x pool table of reduced costs is scanned for
entering pairs until none is negative.  The result is the minimum over every
atom subset of the pool, so refining the grid can only lower it.

With ``refine=True`` the scan is followed by continuous pricing: the most
negative pairs are polished by local minimisation of the reduced cost over
the Bloch angles, which lets the value drop below grid resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .errors import DimNotTwo, FoldedError, Infeasible, ValidationError
from .folded_core import (
    REPRESENT_TOL,
    RepresentingCoupling,
    SolveConfig,
    _LPSolution,
    _polish,
    as_density,
    folded_kantorovich_upper,
    herm_coords,
    herm_from_coords,
    projectors,
    spectral_ensemble,
)
from .metrics import get_metric


@dataclass
class OracleConfig:
    grid_resolution: int = 64
    random_samples: int = 256
    support_cap: int = 3
    seed: int = 0
    refine: bool = False
    refine_rounds: int = 20  # continuous pricing rounds after the grid is exhausted
    max_rounds: int = 200

    def validate(self):
        if self.grid_resolution < 8:
            raise ValidationError("grid_resolution must be >= 8")
        if self.support_cap < 2:
            raise ValidationError("support_cap must be >= 2")


@dataclass
class OracleResult:
    value: float
    objective: float
    support: int
    pool_size: int
    rounds: int
    grid_tolerance: float
    log: list = field(default_factory=list)
    plan: object = None


@dataclass
class GapReport:
    solver: float
    oracle: float
    gap: float
    grid_tolerance: float


def bloch_state(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(theta / 2) + 0j, np.exp(1j * phi) * np.sin(theta / 2)], axis=-1)


def bloch_angles(states: np.ndarray):
    a, b = states[:, 0], states[:, 1]
    theta = 2 * np.arctan2(np.abs(b), np.abs(a))
    phi = np.angle(b) - np.angle(a)
    return theta, phi


def bloch_grid(resolution: int) -> np.ndarray:
    """Uniform (theta, phi) grid; grids at resolution n are contained in those at 2n."""
    n = resolution
    pts = [bloch_state(0.0, 0.0), bloch_state(np.pi, 0.0)]
    th = np.pi * np.arange(1, n) / n
    ph = 2 * np.pi * np.arange(n) / n
    t, f = np.meshgrid(th, ph, indexing="ij")
    pts.append(bloch_state(t.ravel(), f.ravel()))
    return np.vstack([np.atleast_2d(x) for x in pts])


def candidate_pool(rho, sigma, ocfg: OracleConfig) -> np.ndarray:
    rng = np.random.default_rng(ocfg.seed)
    z = rng.standard_normal((ocfg.random_samples, 2)) + 1j * rng.standard_normal((ocfg.random_samples, 2))
    rand = z / np.linalg.norm(z, axis=1, keepdims=True)
    parts = [spectral_ensemble(rho).states, spectral_ensemble(sigma).states,
             bloch_grid(ocfg.grid_resolution), rand]
    return np.vstack(parts)


def _reduced_costs(pool_l, pool_r, yl, yr, p, metric, chunk=512):
    """Yield (i0, block) of reduced costs c(P_i, Q_k) - tr(Yl P_i) - tr(Yr Q_k)."""
    al = np.real(np.einsum("ia,ab,ib->i", pool_l.conj(), yl, pool_l))
    ar = np.real(np.einsum("ia,ab,ib->i", pool_r.conj(), yr, pool_r))
    for i0 in range(0, len(pool_l), chunk):
        blk = pool_l[i0:i0 + chunk]
        if metric.overlap_form:
            # scan only; the LP re-evaluates entering pairs with the stable form
            c = metric.from_sq_overlap(np.abs(blk.conj() @ pool_r.T) ** 2) ** p
        else:
            c = metric.cost(blk, pool_r, p)
        yield i0, c - al[i0:i0 + chunk, None] - ar[None, :]


def _price_continuous(pairs, yl, yr, p, metric):
    """Locally minimise the reduced cost over Bloch angles from each starting pair."""
    out = []

    def rc(x):
        a = bloch_state(x[0], x[1])
        b = bloch_state(x[2], x[3])
        c = metric(a, b) ** p
        return c - np.real(a.conj() @ yl @ a) - np.real(b.conj() @ yr @ b)

    for a, b in pairs:
        ta, fa = bloch_angles(a[None])
        tb, fb = bloch_angles(b[None])
        x0 = np.array([ta[0], fa[0], tb[0], fb[0]])
        res = minimize(rc, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
        out.append((bloch_state(res.x[0], res.x[1]), bloch_state(res.x[2], res.x[3]), res.fun))
    return out


def oracle_qubit_dhat(rho, sigma, p: float = 1.0, metric="frobenius",
                      ocfg: OracleConfig | None = None) -> OracleResult:
    """Reference value for a qubit pair by exact column generation on a Bloch pool."""
    ocfg = ocfg or OracleConfig()
    ocfg.validate()
    rho, sigma = as_density(rho), as_density(sigma)
    if rho.shape != (2, 2) or sigma.shape != (2, 2):
        raise DimNotTwo("oracle is defined for qubits only")
    m = get_metric(metric)
    pool = candidate_pool(rho, sigma, ocfg)

    # restricted master problem: columns are explicit (left, right) pairs
    left = list(spectral_ensemble(rho).states)
    right = list(spectral_ensemble(sigma).states)
    cols_l = [a for a in left for _ in right]
    cols_r = [b for _ in left for b in right]
    log = []
    rounds = 0
    sol = None
    extra = []
    refined = 0
    while rounds < ocfg.max_rounds:
        rounds += 1
        sol, L, R = _pair_lp(np.array(cols_l), np.array(cols_r), rho, sigma, p, m)
        best = np.inf
        entering = []
        for i0, blk in _reduced_costs(pool, pool, sol.y_left, sol.y_right, p, m):
            flat = blk.ravel()
            k = min(8, flat.size)
            idx = np.argpartition(flat, k - 1)[:k]
            for t in idx:
                if flat[t] < -1e-12:
                    i, j = divmod(int(t), blk.shape[1])
                    entering.append((flat[t], i0 + i, j))
            best = min(best, float(flat.min()))
        if ocfg.refine and best > -1e-12 and refined < ocfg.refine_rounds:
            refined += 1
            starts = [(pool[i], pool[j]) for _, i, j in sorted(entering)[:4]] or []
            if not starts:
                # polish around the current support
                starts = [(L[k], R[k]) for k in range(len(L))]
            found = [(a, b) for a, b, v in _price_continuous(starts, sol.y_left, sol.y_right, p, m)
                     if v < -1e-13]
            extra = found
        else:
            extra = []
        log.append({"round": rounds, "objective": sol.objective, "min_reduced_cost": best})
        if not entering and not extra:
            break
        entering.sort()
        for _, i, j in entering[:64]:
            cols_l.append(pool[i])
            cols_r.append(pool[j])
        for a, b in extra:
            cols_l.append(a)
            cols_r.append(b)

    value = float(max(sol.objective, 0.0) ** (1.0 / p))
    tol = np.pi / ocfg.grid_resolution
    w = sol.pi[0][sol.pi[0] > 0]
    plan = RepresentingCoupling(w, L, R, sol.objective)
    return OracleResult(value=value, objective=sol.objective, support=len(w),
                        pool_size=len(pool), rounds=rounds, grid_tolerance=tol, log=log, plan=plan)


def _pair_lp(cols_l, cols_r, rho, sigma, p, metric):
    """LP over explicit pair columns (not a full J x K product)."""
    d = rho.shape[0]
    c = metric.paired_cost(cols_l, cols_r, p)
    a = np.vstack([herm_coords(projectors(cols_l)).T, herm_coords(projectors(cols_r)).T[1:]])
    b = np.concatenate([herm_coords(rho), herm_coords(sigma)[1:]])
    res = linprog(c, A_eq=a, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        res = linprog(c, A_eq=a, b_eq=b, bounds=(0, None), method="highs")
        if res.status != 0:
            raise FoldedError(f"oracle LP failed: {res.message}")
    x = _polish(a, b, res.x)
    resid = float(np.linalg.norm(a @ x - b))
    if resid > REPRESENT_TOL:
        raise Infeasible("oracle LP solution violates the marginals", resid)
    y = np.asarray(res.eqlin.marginals)
    yl = herm_from_coords(y[: d * d], d)
    yr = herm_from_coords(np.concatenate([[0.0], y[d * d:]]), d)
    supp = x > 0
    sol = _LPSolution(x[None, :], float(np.sum(x * c)), yl, yr, c[None, :], None)
    return sol, cols_l[supp], cols_r[supp]


def oracle_vs_solver(rho, sigma, p: float = 1.0, metric="frobenius",
                     cfg: SolveConfig | None = None, ocfg: OracleConfig | None = None) -> GapReport:
    rho, sigma = as_density(rho), as_density(sigma)
    if rho.shape != (2, 2):
        raise DimNotTwo("oracle is defined for qubits only")
    cfg = cfg or SolveConfig(p=p, metric=metric)
    solver = folded_kantorovich_upper(rho, sigma, cfg).value
    orc = oracle_qubit_dhat(rho, sigma, p, metric, ocfg)
    return GapReport(solver=solver, oracle=orc.value, gap=solver - orc.value,
                     grid_tolerance=orc.grid_tolerance)
