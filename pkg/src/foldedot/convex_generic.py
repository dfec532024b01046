"""Folded Kantorovich cost on abstract convex sets.

A convex set is described only through its extreme points and a linear
feature map: a weighted atom list represents a point when the weighted sum of
atom features equals the point's features.  With that, the best finitely
supported coupling on fixed atoms is again a linear program.

Two instances are provided: the probability simplex, where the folded cost is
ordinary optimal transport, and the semiclassical phase-space cost between a
density matrix on a truncated Hermite basis and a discrete measure on phase
space points (one degree of freedom).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .errors import (
    BadShape,
    FoldedError,
    Infeasible,
    TailMass,
    ValidationError,
)
from .folded_core import (
    REPRESENT_TOL,
    SolveConfig,
    SolveReport,
    _polish,
    as_density,
    herm_coords,
    herm_from_coords,
    projectors,
    spectral_ensemble,
)
from .linalg import eigh

TAIL_TOL = 1e-6
COMMUTATOR_TOL = 1e-12


# ---------------------------------------------------------------------------
# abstract instances
# ---------------------------------------------------------------------------

@dataclass
class ConvexInstance:
    """A compact convex set seen through its extreme points.

    ``features(atoms)`` maps an (n, ...) array of extreme points to an
    (n, m) real array, ``point_features(x)`` maps a point to length m, and
    ``sampler(rng, k)`` draws k extreme points.  ``initial_atoms(x)`` should
    return atoms that already represent x; ``perturb(atoms, rng, scale)`` moves
    atoms locally along the extreme boundary (None for finite boundaries).
    """

    name: str
    point_dim: int
    features: Callable
    point_features: Callable
    sampler: Callable
    initial_atoms: Callable
    is_extreme: Callable
    perturb: Callable | None = None

    def residual(self, weights, atoms, x) -> np.ndarray:
        """``sum_j w_j e_j - x`` in feature coordinates."""
        w = np.asarray(weights, dtype=float)
        return self.features(atoms).T @ w - self.point_features(x)

    def represents(self, weights, atoms, x, tol: float = REPRESENT_TOL) -> bool:
        r = self.residual(weights, atoms, x)
        return bool(np.max(np.abs(r)) <= tol) and abs(np.sum(weights) - 1.0) <= tol


@dataclass
class GenericCoupling:
    weights: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: float

    def __len__(self):
        return len(self.weights)


def simplex_instance(n: int) -> ConvexInstance:
    """Probability vectors in R^n; extreme points are the basis vectors, stored as indices."""
    if n < 2:
        raise ValidationError(f"simplex needs n >= 2, got {n}")
    eye = np.eye(n)

    def features(atoms):
        return eye[np.asarray(atoms, dtype=int).reshape(-1)]

    def point_features(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != n:
            raise BadShape(f"expected a length-{n} vector, got {x.size}")
        if np.any(x < -1e-12) or abs(x.sum() - 1.0) > 1e-10:
            raise ValidationError("point is not in the probability simplex")
        return x

    def sampler(rng, k):
        return rng.integers(n, size=k)

    def initial_atoms(x):
        return np.arange(n)

    def is_extreme(atom):
        a = np.asarray(atom)
        return a.ndim == 0 and 0 <= int(a) < n

    return ConvexInstance(name=f"simplex({n})", point_dim=n, features=features,
                          point_features=point_features, sampler=sampler,
                          initial_atoms=initial_atoms, is_extreme=is_extreme)


def cost_matrix(cost: Callable, left, right) -> np.ndarray:
    out = np.array([[float(cost(a, b)) for b in right] for a in left], dtype=float)
    out = out.reshape(len(left), len(right))
    if not np.all(np.isfinite(out)) or np.any(out < 0):
        raise ValidationError("cost must be finite and nonnegative on the sampled atoms")
    return out


def _generic_lp(c: np.ndarray, fa: np.ndarray, fb: np.ndarray, xa: np.ndarray, yb: np.ndarray):
    """min <c, pi> over pi >= 0 with sum_k pi_jk fa_j = xa, sum_j pi_jk fb_k = yb, sum pi = 1."""
    J, K = c.shape
    rows = [np.kron(fa.T, np.ones((1, K))), np.kron(np.ones((1, J)), fb.T), np.ones((1, J * K))]
    a = np.vstack(rows)
    b = np.concatenate([xa, yb, [1.0]])
    res = linprog(c.ravel(), A_eq=a, b_eq=b, bounds=(0, None), method="highs")
    if res.status == 2:
        raise Infeasible("atoms cannot represent the inputs", float("nan"))
    if res.status != 0:
        raise FoldedError(f"LP solver failed: {res.message}")
    x = _polish(a, b, res.x)
    resid = float(np.max(np.abs(a @ x - b)))
    if resid > REPRESENT_TOL:
        raise Infeasible("LP solution misses the representation constraints", resid)
    return x.reshape(J, K), float(np.sum(x * c.ravel()))


def _generic_plan(pi, c, left, right) -> GenericCoupling:
    jj, kk = np.nonzero(pi > 0)
    w = pi[jj, kk]
    return GenericCoupling(w, np.asarray(left)[jj], np.asarray(right)[kk], float(np.sum(w * c[jj, kk])))


def folded_kantorovich_cost(inst_a: ConvexInstance, inst_b: ConvexInstance, cost: Callable,
                            x, y, cfg: SolveConfig | None = None) -> SolveReport:
    """Certified upper bound on the folded cost between ``x`` and ``y``.

    Starts from the instances' initial atoms and alternates the fixed-atom LP
    with local atom moves and sampled atom insertions, keeping only moves the
    LP confirms.  The reported value is the LP objective itself (no root).
    """
    cfg = cfg or SolveConfig()
    xa, yb = inst_a.point_features(x), inst_b.point_features(y)
    left = np.asarray(inst_a.initial_atoms(x))
    right = np.asarray(inst_b.initial_atoms(y))

    def solve(la, ra):
        c = cost_matrix(cost, la, ra)
        pi, obj = _generic_lp(c, inst_a.features(la), inst_b.features(ra), xa, yb)
        return pi, obj, c

    pi, obj, c = solve(left, right)
    best = (pi, obj, c, left, right)
    restart_values = []
    iterations = 0
    movable = inst_a.perturb is not None or inst_b.perturb is not None
    for r in range(cfg.restarts if movable else 0):
        rng = np.random.default_rng([cfg.seed, r])
        pi, obj, c, la, ra = best
        scale = cfg.step_init
        stall = 0
        for _ in range(cfg.max_outer_iters):
            iterations += 1
            tl = la if inst_a.perturb is None else np.concatenate(
                [la, inst_a.perturb(la, rng, scale)])
            tr = ra if inst_b.perturb is None else np.concatenate(
                [ra, inst_b.perturb(ra, rng, scale)])
            try:
                tpi, tobj, tc = solve(tl, tr)
            except Infeasible:
                tobj = np.inf
            gain = obj - tobj
            if gain > 0:
                # keep only atoms the new plan uses, plus the initial ones
                ju = np.flatnonzero(tpi.sum(1) > 0)
                ku = np.flatnonzero(tpi.sum(0) > 0)
                la = np.concatenate([left, tl[ju]])
                ra = np.concatenate([right, tr[ku]])
                pi, obj, c = solve(la, ra)
            else:
                scale *= 0.5
            stall = stall + 1 if gain < cfg.tol_value else 0
            if stall >= 5 or scale < 1e-6:
                break
        restart_values.append(obj)
        if obj < best[1] - 1e-15:
            best = (pi, obj, c, la, ra)
    pi, obj, c, la, ra = best
    plan = _generic_plan(pi, c, la, ra)
    return SolveReport(value=float(obj), plan=plan, iterations=iterations,
                       restart_values=restart_values or [float(obj)], converged=True)


# ---------------------------------------------------------------------------
# semiclassical phase-space cost on a truncated Hermite basis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhasePoint:
    x: float
    xi: float


@dataclass
class HermiteTruncation:
    """Position and momentum matrices on the first ``n_max`` Hermite functions."""

    n_max: int
    hbar: float = 1.0
    lam: float = 1.0
    Y: np.ndarray = field(init=False, repr=False)
    Pmom: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_max < 2:
            raise ValidationError("n_max must be >= 2")
        if not (self.hbar > 0 and self.lam > 0):
            raise ValidationError("hbar and lambda must be > 0")
        a = np.diag(np.sqrt(np.arange(1, self.n_max, dtype=float)), k=1)  # annihilation
        s = np.sqrt(self.hbar / 2.0)
        self.Y = s * (a + a.T)
        self.Pmom = 1j * s * (a.T - a)

    def cost_operator(self, pt: PhasePoint) -> np.ndarray:
        eye = np.eye(self.n_max)
        dx = pt.x * eye - self.Y
        dp = pt.xi * eye - self.Pmom
        return self.lam * (dx @ dx) + dp.conj().T @ dp

    def ground_state(self) -> np.ndarray:
        v = np.zeros(self.n_max, dtype=np.complex128)
        v[0] = 1.0
        return v


def commutator_defect(trunc: HermiteTruncation) -> float:
    """max |[Y, P] - i hbar I| over the interior block (the last row/column is cut off)."""
    c = trunc.Y @ trunc.Pmom - trunc.Pmom @ trunc.Y
    m = trunc.n_max - 1
    return float(np.max(np.abs(c[:m, :m] - 1j * trunc.hbar * np.eye(m))))


def _tail(psi) -> float:
    return float(abs(psi[-1]) ** 2)


def gp_cost_eval(psi, pt: PhasePoint, trunc: HermiteTruncation, index: int | None = None) -> float:
    """``<psi| lam (x - Y)^2 + (xi - P)^2 |psi>`` on the truncation.

    Raises TailMass if the last basis coefficient carries more than 1e-6 of
    the mass, where the truncated operators stop being trustworthy.
    """
    v = np.asarray(psi, dtype=np.complex128).reshape(-1)
    if v.size != trunc.n_max:
        raise BadShape(f"state has {v.size} coefficients, truncation has {trunc.n_max}")
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > 1e-8:
        raise ValidationError(f"state must be unit norm, got {nrm:.3g}")
    tail = _tail(v)
    if tail > TAIL_TOL:
        raise TailMass(f"tail mass {tail:.3g} exceeds {TAIL_TOL:g}", tail=tail, index=index)
    dx = pt.x * v - trunc.Y @ v
    dp = pt.xi * v - trunc.Pmom @ v
    return float(trunc.lam * np.vdot(dx, dx).real + np.vdot(dp, dp).real)


def as_phase_measure(weights, points) -> tuple[np.ndarray, list]:
    w = np.asarray(weights, dtype=float).reshape(-1)
    pts = [p if isinstance(p, PhasePoint) else PhasePoint(float(p[0]), float(p[1])) for p in points]
    if w.size != len(pts) or w.size == 0:
        raise BadShape("weights and phase points must have the same nonzero length")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError("phase-space weights must be nonnegative and sum to 1")
    return w, pts


@dataclass
class GPReport:
    value: float  # square root of the objective
    objective: float
    plan: GenericCoupling
    lower_bound: float  # Lagrangian bound on the objective from exact pricing
    iterations: int
    converged: bool
    tail_masses: list


def gp_folded_cost(rho, weights, points, trunc: HermiteTruncation,
                   cfg: SolveConfig | None = None, max_rounds: int = 100) -> GPReport:
    """Folded phase-space cost between a density matrix and a discrete phase-space measure.

    Only the quantum atoms move; the classical atoms and weights are data.
    The quantum atoms start as the spectral ensemble of rho.  New atoms come
    from exact pricing: for a fixed phase point the best entering state is a
    lowest eigenvector of the cost operator minus the quantum dual, restricted
    to the support of rho.  This also gives a lower bound on the objective.
    """
    cfg = cfg or SolveConfig()
    rho = as_density(rho)
    n = trunc.n_max
    if rho.shape != (n, n):
        raise BadShape(f"rho is {rho.shape}, truncation is {n} x {n}")
    w, pts = as_phase_measure(weights, points)
    ops = [trunc.cost_operator(pt) for pt in pts]
    ens = spectral_ensemble(rho)
    basis = ens.states.T  # support of rho
    atoms = ens.states.copy()
    for j, a in enumerate(atoms):
        t = _tail(a)
        if t > TAIL_TOL:
            raise TailMass(f"spectral atom {j} has tail mass {t:.3g}", tail=t, index=j)

    K = len(pts)
    b = np.concatenate([herm_coords(rho), w])
    lower = -np.inf
    obj = np.inf
    pi = None
    rounds = 0
    converged = False
    while rounds < max_rounds:
        rounds += 1
        J = len(atoms)
        c = np.array([[np.real(np.vdot(a, op @ a)) for op in ops] for a in atoms])
        a_q = np.kron(herm_coords(projectors(atoms)).T, np.ones((1, K)))
        a_c = np.kron(np.ones((1, J)), np.eye(K))[:-1]  # last row implied by the trace
        a_eq = np.vstack([a_q, a_c])
        res = linprog(c.ravel(), A_eq=a_eq, b_eq=b[:-1], bounds=(0, None), method="highs")
        if res.status != 0:
            raise FoldedError(f"LP solver failed: {res.message}")
        x = _polish(a_eq, b[:-1], res.x)
        if np.linalg.norm(a_eq @ x - b[:-1]) > REPRESENT_TOL:
            raise Infeasible("plan misses the marginals", float(np.linalg.norm(a_eq @ x - b[:-1])))
        pi = x.reshape(J, K)
        obj = float(np.sum(pi * c))
        y = np.asarray(res.eqlin.marginals)
        yq = herm_from_coords(y[: n * n], n)
        zc = np.append(y[n * n:], 0.0)
        # exact pricing per phase point
        best_rc = 0.0
        new = []
        for k, op in enumerate(ops):
            h = basis.conj().T @ (op - yq) @ basis
            ev, vec = eigh(0.5 * (h + h.conj().T))
            rc = ev[0] - zc[k]
            best_rc = min(best_rc, rc)
            if rc < -1e-12:
                v = basis @ vec[:, 0]
                v /= np.linalg.norm(v)
                if _tail(v) <= TAIL_TOL:
                    new.append(v)
        lower = max(lower, obj + best_rc)
        if not new or obj - lower <= cfg.tol_value:
            converged = obj - lower <= cfg.tol_value
            break
        atoms = np.vstack([atoms, new])

    jj, kk = np.nonzero(pi > 0)
    plan = GenericCoupling(pi[jj, kk], atoms[jj], np.array([[pts[k].x, pts[k].xi] for k in kk]),
                           obj)
    # every atom in the plan goes through the guarded evaluator once
    for j, k in zip(jj, kk):
        gp_cost_eval(atoms[j], pts[k], trunc, index=int(j))
    tails = [_tail(atoms[j]) for j in jj]
    return GPReport(value=float(np.sqrt(max(obj, 0.0))), objective=obj, plan=plan,
                    lower_bound=float(lower), iterations=rounds, converged=converged,
                    tail_masses=tails)
