"""Folded Kantorovich semi-distance between density matrices.

Couplings are finitely supported: weighted pairs of pure states whose two
weighted sums of projectors reproduce rho and sigma.  For fixed candidate
atoms the best coupling is a linear program with one real constraint per
independent real coordinate of each Hermitian marginal.  The outer problem,
where the atoms sit, is nonconvex and is attacked with multi-start local
search on ensemble isometries.  Every returned value comes with the feasible
plan that attains it, so it is a certified upper bound.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.optimize import linprog, minimize, nnls

from .errors import (
    BadChainLength,
    BadExponent,
    FoldedError,
    Infeasible,
    InvalidDensity,
    RankMismatch,
    ValidationError,
)
from .linalg import (
    EIG_DROP,
    as_complex_matrix,
    eigh,
    hermitian_defect,
    isometry_retract,
    project_to_density,
    random_isometry,
    stiefel_project,
)
from .metrics import Frobenius, Metric, _triu, get_metric, pairwise_cos_sin

log = logging.getLogger(__name__)

DENSITY_TOL = 1e-10
REPRESENT_TOL = 1e-8
SQRT2 = np.sqrt(2.0)
PRICE_ITERS = 25
PRICE_ROUNDS = 3
POLISH_GAP = 1e-3
POLISH_MAX = 4
POLISH_ITERS = 30
SPARSE_STOP = 1e-6
SPARSE_FTOL = 1e-13
LINE_SEARCH_HALVINGS = 10
STALL_LIMIT = 3


# ---------------------------------------------------------------------------
# density matrices and Hermitian coordinates
# ---------------------------------------------------------------------------

def as_density(a, tol: float = DENSITY_TOL) -> np.ndarray:
    """Validate ``a`` as a density matrix; raise InvalidDensity naming the failed invariant."""
    try:
        m = as_complex_matrix(a, square=True)
    except ValidationError as exc:
        raise InvalidDensity("square finite matrix", str(exc)) from None
    defect = hermitian_defect(m)
    if defect > tol:
        raise InvalidDensity("Hermitian within 1e-10", f"max|A - A^H| = {defect:.3e}")
    m = 0.5 * (m + m.conj().T)
    tr = float(np.trace(m).real)
    if abs(tr - 1.0) > tol:
        raise InvalidDensity("trace 1 within 1e-10", f"trace = {tr:.15g}")
    # validation needs only the smallest eigenvalue; LAPACK is enough here
    lo = float(np.linalg.eigvalsh(m)[0])
    if lo < -tol:
        raise InvalidDensity("eigenvalues >= -1e-10", f"min eigenvalue = {lo:.3e}")
    return m


def herm_coords(x: np.ndarray) -> np.ndarray:
    """Real coordinates of a Hermitian matrix, isometric for the Frobenius norm."""
    iu = _triu(x.shape[-1])
    diag = np.real(np.diagonal(x, axis1=-2, axis2=-1))
    off = x[..., iu[0], iu[1]]
    return np.concatenate([diag, SQRT2 * off.real, SQRT2 * off.imag], axis=-1)


def herm_from_coords(y: np.ndarray, d: int) -> np.ndarray:
    """Inverse of ``herm_coords``: ``y @ herm_coords(X) == tr(Y X)`` for the returned Y."""
    out = np.zeros((d, d), dtype=np.complex128)
    out[np.diag_indices(d)] = y[:d]
    iu = _triu(d)
    n = iu[0].size
    vals = (y[d:d + n] + 1j * y[d + n:d + 2 * n]) / SQRT2
    out[iu] = vals
    out[iu[1], iu[0]] = vals.conj()
    return out


def projectors(states: np.ndarray) -> np.ndarray:
    return states[:, :, None] * states[:, None, :].conj()


# ---------------------------------------------------------------------------
# ensembles and couplings
# ---------------------------------------------------------------------------

@dataclass
class Ensemble:
    weights: np.ndarray
    states: np.ndarray  # one unit vector per row

    def matrix(self) -> np.ndarray:
        return np.einsum("j,ja,jb->ab", self.weights, self.states, self.states.conj())

    def __len__(self):
        return len(self.weights)


@dataclass
class RepresentingCoupling:
    weights: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: float  # sum_k w_k d(P_k, Q_k)^p

    def __len__(self):
        return len(self.weights)

    def marginals(self):
        lm = np.einsum("k,ka,kb->ab", self.weights, self.left, self.left.conj())
        rm = np.einsum("k,ka,kb->ab", self.weights, self.right, self.right.conj())
        return lm, rm

    def residuals(self, rho, sigma):
        lm, rm = self.marginals()
        return float(np.linalg.norm(lm - rho)), float(np.linalg.norm(rm - sigma))

    def mirrored(self) -> "RepresentingCoupling":
        return RepresentingCoupling(self.weights, self.right, self.left, self.value)

    def conjugated(self, u: np.ndarray) -> "RepresentingCoupling":
        return RepresentingCoupling(self.weights, self.left @ u.T, self.right @ u.T, self.value)


@dataclass
class SolveConfig:
    p: float = 1.0
    metric: object = "frobenius"
    restarts: int = 4
    max_outer_iters: int = 200
    atom_budget: int | None = None  # default 2 (2d - 1)
    step_init: float = 0.5
    tol_value: float = 1e-10
    seed: int = 0
    threads: int = 1
    mirror: bool = False  # swap the per-side random streams (for symmetric comparisons)
    sparse_search: bool = True
    price_iters: int = PRICE_ITERS  # descent steps per pricing round
    polish_iters: int = POLISH_ITERS  # SLSQP iterations per support polish

    def validate(self, d: int | None = None):
        if not self.p >= 1:
            raise BadExponent(f"p must be >= 1, got {self.p}")
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.price_iters < 1 or self.polish_iters < 1:
            raise ValidationError("price_iters and polish_iters must be >= 1")
        if not self.tol_value > 0:
            raise ValidationError("tol_value must be > 0")
        if d is not None and self.atom_budget is not None and self.atom_budget < 2 * d - 1:
            raise ValidationError(f"atom_budget must be >= 2d - 1 = {2 * d - 1}")

    def budget(self, d: int) -> int:
        return self.atom_budget if self.atom_budget is not None else 2 * (2 * d - 1)


@dataclass
class SolveReport:
    value: float
    plan: RepresentingCoupling
    iterations: int = 0
    restart_values: list = field(default_factory=list)
    converged: bool = True
    p: float = 1.0
    sparse_plan: RepresentingCoupling | None = None
    diag_only_value: float | None = None
    pricing_gap: float | None = None  # most negative reduced cost found at the end

    @property
    def objective(self) -> float:
        return self.plan.value

    @property
    def sparse_value(self) -> float | None:
        if self.sparse_plan is None:
            return None
        return float(max(self.sparse_plan.value, 0.0) ** (1.0 / self.p))


@dataclass
class ChainWitness:
    nodes: list
    link_values: list
    total: float
    link_reports: list = field(default_factory=list)


@dataclass
class ProbeReport:
    direct: float
    via: float
    slack: float
    norm_lower: float | None
    certified_violation: bool


@lru_cache(maxsize=256)
def _spectral_cached(key: bytes, d: int):
    # the same matrices recur across restarts, links and sparse checks
    rho = np.frombuffer(key, dtype=np.complex128).reshape(d, d)
    w, v = eigh(rho)
    keep = w > EIG_DROP
    w = w[keep][::-1]
    return w / w.sum(), v[:, keep][:, ::-1].T.copy()


def spectral_ensemble(rho) -> Ensemble:
    """Eigenprojectors of rho weighted by eigenvalues; eigenvalues below 1e-12 dropped."""
    rho = np.ascontiguousarray(as_density(rho), dtype=np.complex128)
    w, states = _spectral_cached(rho.tobytes(), rho.shape[0])
    return Ensemble(w.copy(), states.copy())


def _sqrt_factor(rho: np.ndarray) -> np.ndarray:
    """``F`` with ``F F^H = rho``: eigenvectors scaled by sqrt eigenvalues, rank columns."""
    ens = spectral_ensemble(rho)
    return ens.states.T * np.sqrt(ens.weights)


def ensemble_from_isometry(rho, u, factor: np.ndarray | None = None) -> Ensemble:
    """All J-atom decompositions of rho, parametrised by a J x rank isometry ``u``.

    Atom j is proportional to ``F u[j]`` with ``F F^H = rho`` built from the
    spectral decomposition; its weight is the squared norm.
    """
    f = _sqrt_factor(as_density(rho)) if factor is None else factor
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[1] != f.shape[1]:
        raise RankMismatch(f"isometry has {u.shape[-1]} columns but rank(rho) = {f.shape[1]}")
    if u.shape[0] < u.shape[1]:
        raise RankMismatch("isometry needs at least rank(rho) rows")
    w = u @ f.T  # row j = F u[j]
    weights = np.sum(np.abs(w) ** 2, axis=1)
    keep = weights > 1e-14
    states = w[keep] / np.sqrt(weights[keep])[:, None]
    weights = weights[keep]
    return Ensemble(weights / weights.sum(), states)


def check_representing(plan: RepresentingCoupling, rho, sigma, tol: float = 1e-8) -> bool:
    w = np.asarray(plan.weights)
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        return False
    rl, rr = plan.residuals(np.asarray(rho), np.asarray(sigma))
    return rl <= tol and rr <= tol


def norm_lower_bound(rho, sigma, metric) -> float | None:
    """Lower bound on the folded value from the norm lemma, when the metric allows one."""
    m = get_metric(metric)
    fr = float(np.linalg.norm(np.asarray(rho) - np.asarray(sigma)))
    if isinstance(m, Frobenius):
        return fr
    if m.name == "fubini-study":
        return fr / SQRT2
    return None


# ---------------------------------------------------------------------------
# fixed-atom linear program
# ---------------------------------------------------------------------------

@dataclass
class _LPSolution:
    pi: np.ndarray  # J x K
    objective: float
    y_left: np.ndarray  # Hermitian dual matrices
    y_right: np.ndarray
    cost: np.ndarray
    sq_overlap: np.ndarray | None


def _constraint_system(left, right, rho, sigma, diag_only=False):
    d = rho.shape[0]
    J, K = len(left), len(right)
    if diag_only:
        # coordinates in the eigenbases of rho and sigma, diagonal entries 1..d-1 only
        _, vr = eigh(rho)
        _, vs = eigh(sigma)
        cl = (np.abs(left.conj() @ vr) ** 2)[:, : d - 1].T
        cr = (np.abs(right.conj() @ vs) ** 2)[:, : d - 1].T
        bl = np.real(np.diag(vr.conj().T @ rho @ vr))[: d - 1]
        br = np.real(np.diag(vs.conj().T @ sigma @ vs))[: d - 1]
        ones = np.ones((1, J * K))
        a = np.vstack([ones, np.repeat(cl, K, axis=1), np.tile(cr, (1, J))])
        return a, np.concatenate([[1.0], bl, br])
    cl = herm_coords(projectors(left)).T  # d^2 x J
    cr = herm_coords(projectors(right)).T[1:]  # right trace row is implied by the left one
    a = np.vstack([np.repeat(cl, K, axis=1), np.tile(cr, (1, J))])
    b = np.concatenate([herm_coords(rho), herm_coords(sigma)[1:]])
    return a, b


def _polish(a, b, x):
    """Re-solve the equalities on the support of ``x`` to push residuals to roundoff."""
    supp = np.flatnonzero(x > 1e-13)
    if supp.size == 0:
        return x
    xs, *_ = np.linalg.lstsq(a[:, supp], b, rcond=None)
    if np.min(xs) < -1e-12:
        return x
    out = np.zeros_like(x)
    out[supp] = np.clip(xs, 0.0, None)
    if np.linalg.norm(a @ out - b) <= np.linalg.norm(a @ x - b) + 1e-15:
        return out
    return x


def _infeasibility_certificate(a, b) -> float:
    _, res = nnls(a, b, maxiter=50 * a.shape[1])
    return float(res)


def _solve_atoms(left, right, rho, sigma, p, metric: Metric, diag_only=False) -> _LPSolution:
    J, K = len(left), len(right)
    s = None
    if metric.overlap_form:
        cos, sin = pairwise_cos_sin(left, right)
        s = cos ** 2
        cost = metric.from_cos_sin(cos, sin) ** p
    else:
        cost = metric.cost(left, right, p)
    d = rho.shape[0]

    if J == 1 and K == 1 and not diag_only:
        pl = np.outer(left[0], left[0].conj())
        pr = np.outer(right[0], right[0].conj())
        gap = np.hypot(np.linalg.norm(pl - rho), np.linalg.norm(pr - sigma))
        if gap > REPRESENT_TOL:
            raise Infeasible("single atoms cannot represent the marginals", gap)
        z = np.zeros((d, d), dtype=np.complex128)
        return _LPSolution(np.ones((1, 1)), float(cost[0, 0]), z, z.copy(), cost, s)

    a, b = _constraint_system(left, right, rho, sigma, diag_only)
    res = linprog(cost.ravel(), A_eq=a, b_eq=b, bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        raise Infeasible("atom sets cannot represent (rho, sigma)", _infeasibility_certificate(a, b))
    if res.status != 0:
        # HiGHS occasionally reports numerical trouble on near-degenerate sets
        res = linprog(cost.ravel(), A_eq=a, b_eq=b, bounds=(0, None), method="highs")
        if res.status == 2:
            raise Infeasible("atom sets cannot represent (rho, sigma)",
                             _infeasibility_certificate(a, b))
        if res.status != 0:
            raise FoldedError(f"LP solver failed: {res.message}")
    x = _polish(a, b, res.x)
    resid = float(np.linalg.norm(a @ x - b))
    if resid > REPRESENT_TOL:
        raise Infeasible("LP solution violates the marginals", resid)
    pi = x.reshape(J, K)
    y = np.asarray(res.eqlin.marginals)
    if diag_only:
        z = np.zeros((d, d), dtype=np.complex128)
        return _LPSolution(pi, float(np.sum(pi * cost)), z, z.copy(), cost, s)
    n_left = d * d
    y_left = herm_from_coords(y[:n_left], d)
    y_right = herm_from_coords(np.concatenate([[0.0], y[n_left:]]), d)
    return _LPSolution(pi, float(np.sum(pi * cost)), y_left, y_right, cost, s)


def _coupling_from(sol: _LPSolution, left, right) -> RepresentingCoupling:
    jj, kk = np.nonzero(sol.pi > 0)
    w = sol.pi[jj, kk]
    return RepresentingCoupling(w, left[jj].copy(), right[kk].copy(),
                                float(np.sum(w * sol.cost[jj, kk])))


def _report(plan: RepresentingCoupling, p: float, **kw) -> SolveReport:
    return SolveReport(value=float(max(plan.value, 0.0) ** (1.0 / p)), plan=plan, p=p, **kw)


def _as_states(atoms) -> np.ndarray:
    a = np.atleast_2d(np.asarray(atoms, dtype=np.complex128))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def fixed_atoms_lp(left_atoms, right_atoms, rho, sigma, p: float = 1.0,
                   metric="frobenius") -> SolveReport:
    """Best representing coupling supported on the given candidate atoms.

    Raises Infeasible (with a certificate norm) if the atoms cannot represent
    rho or sigma.
    """
    if not p >= 1:
        raise BadExponent(f"p must be >= 1, got {p}")
    rho, sigma = as_density(rho), as_density(sigma)
    left, right = _as_states(left_atoms), _as_states(right_atoms)
    if left.shape[1] != rho.shape[0] or right.shape[1] != sigma.shape[0]:
        raise ValidationError("atom dimension does not match the density matrices")
    sol = _solve_atoms(left, right, rho, sigma, p, get_metric(metric))
    return _report(_coupling_from(sol, left, right), p)


def diag_only_lp_value(left_atoms, right_atoms, rho, sigma, p, metric) -> float | None:
    """LP value with only the d - 1 eigenbasis-diagonal constraints per side (diagnostic)."""
    rho, sigma = as_density(rho), as_density(sigma)
    try:
        sol = _solve_atoms(_as_states(left_atoms), _as_states(right_atoms), rho, sigma, p,
                           get_metric(metric), diag_only=True)
    except (Infeasible, FoldedError):
        return None
    return float(max(sol.objective, 0.0) ** (1.0 / p))


# ---------------------------------------------------------------------------
# outer search over atom positions
# ---------------------------------------------------------------------------

def _atom_gradients(sol: _LPSolution, left, right, p, metric):
    """dV = sum_j tr(G_j dP_j) + sum_k tr(H_k dQ_k) at the LP optimum (envelope theorem)."""
    dc = metric.cost_derivative(sol.sq_overlap, p) * sol.pi  # J x K
    ql = projectors(right)
    pl = projectors(left)
    g = np.einsum("jk,kab->jab", dc, ql) - sol.pi.sum(1)[:, None, None] * sol.y_left
    h = np.einsum("jk,jab->kab", dc, pl) - sol.pi.sum(0)[:, None, None] * sol.y_right
    return g, h


def _isometry_gradient(gmats, states, weights_sq, factor, u):
    """Euclidean gradient w.r.t. the isometry rows for atoms ``F u_j / |F u_j|``."""
    grad = np.zeros_like(u)
    gv = np.einsum("jab,jb->ja", gmats, states)
    fval = np.real(np.einsum("ja,ja->j", states.conj(), gv))
    gw = (gv - fval[:, None] * states) / np.sqrt(weights_sq)[:, None]
    grad_rows = gw @ factor.conj()  # row j = (F^H gw_j)^T
    grad[:] = grad_rows
    return grad


class _Side:
    """One marginal: fixed spectral atoms plus isometry-parametrised atoms."""

    def __init__(self, rho, budget, rng):
        self.rho = rho
        self.factor = _sqrt_factor(rho)
        self.rank = self.factor.shape[1]
        self.spectral = spectral_ensemble(rho).states
        self.rigid = self.rank == 1
        self.u = None if self.rigid else random_isometry(max(budget, self.rank), self.rank, rng)

    def atoms(self, u=None):
        if self.rigid:
            return self.spectral, None
        u = self.u if u is None else u
        w = u @ self.factor.T
        wsq = np.sum(np.abs(w) ** 2, axis=1)
        wsq = np.maximum(wsq, 1e-300)
        moving = w / np.sqrt(wsq)[:, None]
        return np.vstack([self.spectral, moving]), wsq

    def gradient(self, gmats, wsq):
        n0 = len(self.spectral)
        states = self.atoms()[0][n0:]
        return _isometry_gradient(gmats[n0:], states, wsq, self.factor, self.u)


def _range_basis(rho) -> np.ndarray:
    """Orthonormal basis (columns) of the support of rho."""
    return spectral_ensemble(rho).states.T


def _intersection_basis(el: np.ndarray, er: np.ndarray) -> np.ndarray:
    """Orthonormal basis of range(el) intersected with range(er)."""
    m = np.hstack([el, -er])
    _, sv, vh = np.linalg.svd(m)
    null = vh[np.sum(sv > 1e-10):].conj().T if sv.size < m.shape[1] else vh[sv <= 1e-10].conj().T
    if null.size == 0:
        return np.zeros((el.shape[0], 0), dtype=np.complex128)
    q, _ = np.linalg.qr(el @ null[: el.shape[1]])
    return q


def _reduced_cost(x, y, yl, yr, p, metric):
    c = metric.paired_cost(x, y, p)
    ql = np.real(np.einsum("na,ab,nb->n", x.conj(), yl, x))
    qr = np.real(np.einsum("na,ab,nb->n", y.conj(), yr, y))
    return c - ql - qr


def _price(yl, yr, el, er, starts_l, starts_r, p, metric: Metric, iters: int | None = None):
    """Batched projected descent on the reduced cost over pairs (x, y).

    ``x`` stays in range(el) and ``y`` in range(er).  Returns the final pairs
    and their reduced costs.
    """
    iters = PRICE_ITERS if iters is None else iters
    a = starts_l @ el.conj()
    b = starts_r @ er.conj()
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    yl_c = el.conj().T @ yl @ el
    yr_c = er.conj().T @ yr @ er

    def states(a, b):
        return a @ el.T, b @ er.T

    x, y = states(a, b)
    val = _reduced_cost(x, y, yl, yr, p, metric)
    eta = np.full(len(a), 0.25)
    for _ in range(iters):
        ip = np.sum(x.conj() * y, axis=1)
        dc = metric.cost_derivative(np.abs(ip) ** 2, p)
        gx = (dc * np.conj(ip))[:, None] * y
        gy = (dc * ip)[:, None] * x
        ga = gx @ el.conj() - a @ yl_c.T
        gb = gy @ er.conj() - b @ yr_c.T
        ga -= np.real(np.sum(a.conj() * ga, axis=1))[:, None] * a
        gb -= np.real(np.sum(b.conj() * gb, axis=1))[:, None] * b
        gn = np.sqrt(np.sum(np.abs(ga) ** 2, axis=1) + np.sum(np.abs(gb) ** 2, axis=1))
        live = gn > 1e-13
        if not np.any(live):
            break
        scale = (eta / np.maximum(gn, 1e-300))[:, None]
        ta = a - scale * ga
        tb = b - scale * gb
        ta /= np.linalg.norm(ta, axis=1, keepdims=True)
        tb /= np.linalg.norm(tb, axis=1, keepdims=True)
        tx, ty = states(ta, tb)
        tval = _reduced_cost(tx, ty, yl, yr, p, metric)
        ok = live & (tval < val)
        if not np.any(ok & (val - tval > 1e-15 * (1.0 + np.abs(val)))) and np.all(eta[live] < 1e-6):
            break
        a[ok], b[ok], x[ok], y[ok], val[ok] = ta[ok], tb[ok], tx[ok], ty[ok], tval[ok]
        eta = np.where(ok, np.minimum(eta * 1.5, 1.0), eta * 0.5)
        if np.all(eta < 1e-12):
            break
    return x, y, val


def _price_round(sol, left, right, rho, sigma, p, metric, ctx, rng, iters=None):
    """Candidate pairs with negative reduced cost, best first, and the smallest value seen."""
    el, er, inter = ctx
    jj, kk = np.nonzero(sol.pi > 0)
    n_rand = 8
    d = rho.shape[0]
    z = rng.standard_normal((2 * n_rand, d)) + 1j * rng.standard_normal((2 * n_rand, d))
    starts_l = np.vstack([left[jj], right[kk], z[:n_rand]])
    starts_r = np.vstack([right[kk], left[jj], z[n_rand:]])
    # starts outside a side's range are projected into it; drop the ones that vanish
    pl = starts_l @ el.conj()
    pr = starts_r @ er.conj()
    keep = (np.linalg.norm(pl, axis=1) > 1e-8) & (np.linalg.norm(pr, axis=1) > 1e-8)
    xs, ys, vals = _price(sol.y_left, sol.y_right, el, er, starts_l[keep], starts_r[keep], p, metric,
                          iters)
    if inter.shape[1]:
        # coincident pairs: the cost vanishes, so the best one is a top eigenvector
        h = inter.conj().T @ (sol.y_left + sol.y_right) @ inter
        w, v = eigh(0.5 * (h + h.conj().T))
        top = inter @ v[:, -1]
        top /= np.linalg.norm(top)
        xs = np.vstack([xs, top])
        ys = np.vstack([ys, top])
        vals = np.append(vals, -w[-1])
    order = np.argsort(vals, kind="stable")
    best = float(vals[order[0]])
    picked = []
    for i in order:
        if vals[i] >= -1e-13:
            break
        if any(abs(np.vdot(xs[i], xs[j])) > 1 - 1e-12 and abs(np.vdot(ys[i], ys[j])) > 1 - 1e-12
               for j in picked):
            continue
        picked.append(i)
        if len(picked) >= 8:
            break
    return xs[picked], ys[picked], best


def _dedupe(states: np.ndarray, existing: np.ndarray) -> np.ndarray:
    out = []
    for s in states:
        pool = existing if not out else np.vstack([existing, out])
        if pool.size == 0 or np.max(np.abs(pool.conj() @ s)) < 1 - 1e-12:
            out.append(s)
    return np.array(out).reshape(-1, states.shape[1]) if out else states[:0]


def _run_restart(rho, sigma, cfg: SolveConfig, metric: Metric, index: int):
    d = rho.shape[0]
    # one generator per side so that swapping the inputs swaps the streams
    tags = (1, 0) if cfg.mirror else (0, 1)
    rng_l = np.random.default_rng([cfg.seed, index, tags[0]])
    rng_r = np.random.default_rng([cfg.seed, index, tags[1]])
    rng = np.random.default_rng([cfg.seed, index, 2])
    budget = cfg.budget(d)
    sl, sr = _Side(rho, budget, rng_l), _Side(sigma, budget, rng_r)
    sides = (sl, sr)
    pricing = metric.overlap_form
    if pricing:
        el, er = _range_basis(rho), _range_basis(sigma)
        ctx = (el, er, _intersection_basis(el, er))
    free_l = np.zeros((0, d), dtype=np.complex128)
    free_r = np.zeros((0, d), dtype=np.complex128)

    def evaluate(us=None):
        ul, ur = (None, None) if us is None else us
        a_l, wl = sl.atoms(ul)
        a_r, wr = sr.atoms(ur)
        left = np.vstack([a_l, free_l])
        right = np.vstack([a_r, free_r])
        sol = _solve_atoms(left, right, rho, sigma, cfg.p, metric)
        return sol, left, right, wl, wr

    sol, left, right, wl, wr = evaluate()
    iterations = 0
    converged = False
    step = cfg.step_init
    stall = 0
    gap = None
    polishes = 0
    while iterations < cfg.max_outer_iters:
        iterations += 1
        before = sol.objective

        # (1) one retraction step on the ensemble isometries
        movable = [s for s in sides if not s.rigid]
        if movable:
            if metric.overlap_form:
                g, h = _atom_gradients(sol, left, right, cfg.p, metric)
                dirs = []
                for side, gm, wsq in ((sl, g, wl), (sr, h, wr)):
                    if side.rigid:
                        dirs.append(None)
                    else:
                        n0 = len(side.spectral)
                        eg = side.gradient(gm[: n0 + len(wsq)], wsq)
                        dirs.append(-stiefel_project(side.u, eg))
            else:
                dirs = []
                for side, r in ((sl, rng_l), (sr, rng_r)):
                    if side.rigid:
                        dirs.append(None)
                    else:
                        z = r.standard_normal(side.u.shape) + 1j * r.standard_normal(side.u.shape)
                        dirs.append(stiefel_project(side.u, z))
            norm = np.sqrt(sum(np.linalg.norm(x) ** 2 for x in dirs if x is not None))
            s = step if norm > 1e-14 else 0.0
            dirs = [None if x is None or norm <= 1e-14 else x / norm for x in dirs]
            accepted = False
            floor = max(1e-9, s * 2.0 ** -LINE_SEARCH_HALVINGS)
            while s >= floor:
                trial = [None if dv is None else isometry_retract(side.u, dv, s)
                         for side, dv in zip(sides, dirs)]
                try:
                    tsol, tl, tr, twl, twr = evaluate(trial)
                except Infeasible:
                    s *= 0.5
                    continue
                if tsol.objective < sol.objective - 1e-15:
                    for side, tu in zip(sides, trial):
                        if tu is not None:
                            side.u = tu
                    sol, left, right, wl, wr = tsol, tl, tr, twl, twr
                    accepted = True
                    step = min(2.0 * s, 2.0)
                    break
                s *= 0.5
            if not accepted:
                step = max(step * 0.5, 1e-6)

        # (2) insert atoms priced against the LP duals, drop unused inserted atoms
        for _ in range(PRICE_ROUNDS if pricing else 0):
            nx, ny, gap = _price_round(sol, left, right, rho, sigma, cfg.p, metric, ctx, rng,
                                        cfg.price_iters)
            if gap > -cfg.tol_value:
                break
            n_l, n_r = len(left) - len(free_l), len(right) - len(free_r)
            used_l = sol.pi.sum(1)[n_l:] > 0
            used_r = sol.pi.sum(0)[n_r:] > 0
            cand_l = np.vstack([free_l[used_l], _dedupe(nx, free_l[used_l])])
            cand_r = np.vstack([free_r[used_r], _dedupe(ny, free_r[used_r])])
            old = (free_l, free_r)
            free_l, free_r = cand_l, cand_r
            try:
                tsol, tl, tr, twl, twr = evaluate()
            except (Infeasible, FoldedError):
                free_l, free_r = old
            else:
                if tsol.objective <= sol.objective + 1e-15:
                    sol, left, right, wl, wr = tsol, tl, tr, twl, twr
                else:
                    free_l, free_r = old

        # (3) near convergence, optimise the support pairs jointly (superlinear tail)
        if pricing and polishes < POLISH_MAX and gap is not None and -POLISH_GAP < gap <= -cfg.tol_value:
            polishes += 1
            jj, kk = np.nonzero(sol.pi > 0)
            cand = _sqp_pairs(left[jj], right[kk], sol.pi[jj, kk], rho, sigma, cfg.p, metric,
                              maxiter=cfg.polish_iters)
            if cand is not None and cand.value < sol.objective:
                old = (free_l, free_r)
                free_l = np.vstack([free_l, _dedupe(cand.left, free_l)])
                free_r = np.vstack([free_r, _dedupe(cand.right, free_r)])
                try:
                    tsol, tl, tr, twl, twr = evaluate()
                except (Infeasible, FoldedError):
                    free_l, free_r = old
                else:
                    if tsol.objective <= sol.objective + 1e-15:
                        sol, left, right, wl, wr = tsol, tl, tr, twl, twr
                    else:
                        free_l, free_r = old

        gain = before - sol.objective
        stall = stall + 1 if gain < cfg.tol_value else 0
        if pricing:
            if gain < cfg.tol_value and gap is not None and gap > -cfg.tol_value:
                converged = True
                break
            if stall >= STALL_LIMIT:
                # degenerate LPs can leave a spurious negative reduced cost
                converged = True
                break
        elif not movable or stall >= 5:
            converged = True
            break
    return sol, left, right, iterations, converged, gap


def _pair_system(left, right):
    a_l = herm_coords(projectors(left)).T
    a_r = herm_coords(projectors(right)).T[1:]
    return np.vstack([a_l, a_r])


def _projector_jacobian(u: np.ndarray) -> np.ndarray:
    """d herm_coords(u u^H / |u|^2) / d(Re u, Im u); shape (n, d*d, 2d)."""
    n, d = u.shape
    nrm = np.sum(np.abs(u) ** 2, axis=1)
    proj = np.einsum("na,nb->nab", u, u.conj()) / nrm[:, None, None]
    eye = np.eye(d)
    # dP/dRe(u_m) and dP/dIm(u_m)
    e_u = np.einsum("ma,nb->nmab", eye, u.conj())  # e_m u^H
    dre = (e_u + np.conj(np.swapaxes(e_u, -1, -2))) / nrm[:, None, None, None]
    dim = (1j * e_u - 1j * np.conj(np.swapaxes(e_u, -1, -2))) / nrm[:, None, None, None]
    dre -= proj[:, None] * (2 * u.real / nrm[:, None])[:, :, None, None]
    dim -= proj[:, None] * (2 * u.imag / nrm[:, None])[:, :, None, None]
    jac = np.concatenate([dre, dim], axis=1)  # (n, 2d, d, d)
    return np.moveaxis(herm_coords(jac), 1, 2)


def _sq_overlap_grad(u: np.ndarray, v: np.ndarray):
    """s = |<u|v>|^2 / (|u|^2 |v|^2) and ds/d(Re u, Im u), ds/d(Re v, Im v)."""
    nu = np.sum(np.abs(u) ** 2, axis=1)
    nv = np.sum(np.abs(v) ** 2, axis=1)
    ip = np.sum(u.conj() * v, axis=1)
    s = np.abs(ip) ** 2 / (nu * nv)
    w = (np.conj(ip) / (nu * nv))[:, None]
    du = np.concatenate([2 * np.real(w * v), 2 * np.real(w * -1j * v)], axis=1)
    du -= s[:, None] * 2 * np.concatenate([u.real, u.imag], axis=1) / nu[:, None]
    dv = np.concatenate([2 * np.real(np.conj(w) * u), 2 * np.real(np.conj(w) * -1j * u)], axis=1)
    dv -= s[:, None] * 2 * np.concatenate([v.real, v.imag], axis=1) / nv[:, None]
    return s, du, dv


def _sqp_pairs(l0, r0, t0, rho, sigma, p, metric: Metric, maxiter: int = 300,
               ftol: float = 1e-13):
    """Jointly optimise pair weights and states by SLSQP under the marginal constraints.

    Returns a feasible coupling (weights re-fitted by nonnegative least squares
    on the final states) or None if the fit misses the marginals.
    """
    d = rho.shape[0]
    cap = len(t0)
    b = np.concatenate([herm_coords(rho), herm_coords(sigma)[1:]])
    nv = 2 * d

    def unpack(z):
        t = z[:cap]
        v = z[cap:].reshape(cap, 2, nv)
        u = v[:, 0, :d] + 1j * v[:, 0, d:]
        w = v[:, 1, :d] + 1j * v[:, 1, d:]
        return t, u, w

    def unit(u):
        return u / np.linalg.norm(u, axis=1, keepdims=True)

    memo = {}

    def state(z):
        # objective and constraint are evaluated at the same points; share the work
        key = z.tobytes()
        if memo.get("key") != key:
            t, u, w = unpack(z)
            lu, lw = unit(u), unit(w)
            memo.update(key=key, t=t, u=u, w=w, cost=metric.paired_cost(lu, lw, p),
                        system=_pair_system(lu, lw))
        return memo

    def objective(z):
        m = state(z)
        return float(np.sum(m["t"] * m["cost"]))

    def objective_grad(z):
        m = state(z)
        t = m["t"]
        s, du, dw = _sq_overlap_grad(m["u"], m["w"])
        dc = metric.cost_derivative(s, p)
        g = np.empty_like(z)
        g[:cap] = m["cost"]
        g[cap:] = np.stack([(t * dc)[:, None] * du, (t * dc)[:, None] * dw], axis=1).ravel()
        return g

    def constraint(z):
        m = state(z)
        return m["system"] @ m["t"] - b

    def constraint_jac(z):
        m = state(z)
        t = m["t"]
        jl = _projector_jacobian(m["u"]) * t[:, None, None]
        jr = _projector_jacobian(m["w"])[:, 1:] * t[:, None, None]
        out = np.zeros((b.size, z.size))
        out[:, :cap] = m["system"]
        for k in range(cap):
            base = cap + k * 2 * nv
            out[: d * d, base:base + nv] = jl[k]
            out[d * d:, base + nv:base + 2 * nv] = jr[k]
        return out

    v = np.stack([np.hstack([l0.real, l0.imag]), np.hstack([r0.real, r0.imag])], 1)
    z0 = np.concatenate([t0, v.ravel()])
    res = minimize(objective, z0, jac=objective_grad, method="SLSQP",
                   constraints=[{"type": "eq", "fun": constraint, "jac": constraint_jac}],
                   bounds=[(0.0, 1.0)] * cap + [(None, None)] * (z0.size - cap),
                   options={"ftol": ftol, "maxiter": maxiter})
    _, u, w = unpack(res.x)
    l, r = unit(u), unit(w)
    wts, resid = nnls(_pair_system(l, r), b)
    if not np.isfinite(resid) or resid > REPRESENT_TOL:
        return None
    keep = wts > 0
    return RepresentingCoupling(wts[keep], l[keep], r[keep],
                                float(np.sum(wts[keep] * metric.paired_cost(l[keep], r[keep], p))))


def _root(obj: float, p: float) -> float:
    return float(max(obj, 0.0) ** (1.0 / p))


def _sparse_search(plan: RepresentingCoupling, rho, sigma, p, metric: Metric, cap: int, rng,
                   target: float, attempts: int = 12, extra: int = 36) -> RepresentingCoupling | None:
    """Local search over plans with ``cap`` pairs, seeded from subsets of the pairs of ``plan``.

    Subsets covering the most distinct pair lengths go first, heaviest first
    among ties, then jittered random subsets.  If that misses, up to ``extra``
    further jittered starts are tried.  Stops early once a feasible
    candidate's value is within SPARSE_STOP of ``target``'s.
    """
    d = rho.shape[0]
    k = len(plan)
    if k <= 10:
        # optimal plans often mix a few distinct pair lengths; cover them all first
        lengths = metric.paired_cost(plan.left, plan.right, 1.0)
        cls = np.round(lengths / max(float(lengths.max()), 1e-300), 3)
        subsets = sorted(combinations(range(k), min(cap, k)),
                         key=lambda c: (-len(set(cls[list(c)])), -float(np.sum(plan.weights[list(c)]))))
    else:
        subsets = [tuple(np.argsort(-plan.weights, kind="stable")[:cap])]
    best = None
    for attempt in range(attempts + extra):
        if attempt < len(subsets) and attempt < attempts - 3:
            idx = np.resize(np.array(subsets[attempt]), cap)
            l0, r0 = plan.left[idx], plan.right[idx]
        else:
            idx = rng.choice(k, size=cap, replace=k < cap)
            jitter = 0.05 * (attempt % 4 + 1)
            l0 = plan.left[idx] + jitter * rng.standard_normal((cap, d))
            r0 = plan.right[idx] + jitter * rng.standard_normal((cap, d))
        t0 = plan.weights[idx] / plan.weights[idx].sum()
        cand = _sqp_pairs(l0, r0, t0, rho, sigma, p, metric, ftol=SPARSE_FTOL)
        if cand is None:
            continue
        if best is None or cand.value < best.value:
            best = cand
        if _root(best.value, p) <= _root(target, p) + SPARSE_STOP:
            break
    return best


def _sparse_plan(plan: RepresentingCoupling, rho, sigma, p, metric, seed) -> RepresentingCoupling | None:
    """A plan with at most 2d - 1 pairs, as close in value to ``plan`` as the search gets."""
    cap = 2 * rho.shape[0] - 1
    if len(plan) <= cap:
        return plan
    if not metric.overlap_form:
        return None
    rng = np.random.default_rng([seed, 7])
    return _sparse_search(plan, rho, sigma, p, metric, cap, rng, plan.value)


def folded_kantorovich_upper(rho, sigma, cfg: SolveConfig | None = None) -> SolveReport:
    """Certified upper bound on the folded Kantorovich semi-distance, with its witness plan."""
    cfg = cfg or SolveConfig()
    rho, sigma = as_density(rho), as_density(sigma)
    if rho.shape != sigma.shape:
        raise ValidationError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    d = rho.shape[0]
    cfg.validate(d)
    metric = get_metric(cfg.metric)

    base_left = spectral_ensemble(rho).states
    base_right = spectral_ensemble(sigma).states
    try:
        base = _solve_atoms(base_left, base_right, rho, sigma, cfg.p, metric)
    except Infeasible as exc:  # spectral atoms always represent valid inputs
        raise FoldedError(f"internal error: spectral atoms infeasible: {exc}") from exc
    best_plan = _coupling_from(base, base_left, base_right)
    rigid = len(base_left) == 1 and len(base_right) == 1
    if rigid or base.objective <= 0.0:
        return _report(best_plan, cfg.p, restart_values=[float(best_plan.value ** (1 / cfg.p))],
                       sparse_plan=best_plan)

    def run(i):
        return _run_restart(rho, sigma, cfg, metric, i)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(cfg.restarts)))
    else:
        results = [run(i) for i in range(cfg.restarts)]

    restart_values = []
    best_idx, best_obj = -1, best_plan.value
    total_iters = 0
    gap = None
    for i, (sol, left, right, iters, conv, rgap) in enumerate(results):
        restart_values.append(float(max(sol.objective, 0.0) ** (1.0 / cfg.p)))
        total_iters += iters
        if sol.objective < best_obj - 1e-15:  # ties keep the lowest index
            best_obj = sol.objective
            best_idx = i
    converged = False
    if best_idx >= 0:
        sol, left, right, _, converged, gap = results[best_idx]
        best_plan = _coupling_from(sol, left, right)
    else:
        converged = any(r[4] for r in results)

    report = _report(best_plan, cfg.p, iterations=total_iters, restart_values=restart_values,
                     converged=converged, pricing_gap=gap)
    report.diag_only_value = diag_only_lp_value(best_plan.left, best_plan.right, rho, sigma,
                                                cfg.p, metric)
    if cfg.sparse_search:
        sparse = _sparse_plan(best_plan, rho, sigma, cfg.p, metric, cfg.seed)
        report.sparse_plan = sparse
        if sparse is not None and sparse.value < best_plan.value:
            # a feasible plan is a feasible plan; keep the better one
            report.plan = sparse
            report.value = float(max(sparse.value, 0.0) ** (1.0 / cfg.p))
    return report


# ---------------------------------------------------------------------------
# chains, triangle probes, exponent monotonicity
# ---------------------------------------------------------------------------

def chain_relax(rho, sigma, n: int, cfg: SolveConfig | None = None, trials: int = 20,
                scale: float = 0.1, direct: SolveReport | None = None) -> ChainWitness:
    """Upper bound on the chain-relaxed distance using chains of ``n`` links.

    Interior nodes start on the segment from rho to sigma.  If that chain is
    worse than the direct bound, the chain collapses onto rho so the total
    never exceeds the direct bound.  Nodes are then perturbed one at a time
    inside the state space; a perturbation is kept only if the total drops,
    and the perturbation scale halves on every rejection (floor 1e-6).
    ``direct`` may pass in an existing report for (rho, sigma) to skip that solve.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise BadChainLength(f"chain length must be an integer >= 1, got {n!r}")
    cfg = cfg or SolveConfig()
    rho, sigma = as_density(rho), as_density(sigma)
    if rho.shape != sigma.shape:
        raise ValidationError(f"dimension mismatch: {rho.shape} vs {sigma.shape}")
    if direct is None:
        direct = folded_kantorovich_upper(rho, sigma, cfg)
    if n == 1:
        return ChainWitness([rho, sigma], [direct.value], direct.value, [direct])

    def links(nodes):
        reps = [folded_kantorovich_upper(a, b, cfg) for a, b in zip(nodes[:-1], nodes[1:])]
        return reps, [r.value for r in reps]

    nodes = [rho] + [(1.0 - k / n) * rho + (k / n) * sigma for k in range(1, n)] + [sigma]
    reps, vals = links(nodes)
    if sum(vals) > direct.value:
        nodes = [rho] * n + [sigma]
        zero = folded_kantorovich_upper(rho, rho, cfg)
        reps = [zero] * (n - 1) + [direct]
        vals = [r.value for r in reps]

    rng = np.random.default_rng([cfg.seed, n, 11])
    d = rho.shape[0]
    step = scale
    for _ in range(trials):
        if step < 1e-6:
            break
        k = int(rng.integers(1, n))
        z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        h = 0.5 * (z + z.conj().T)
        h /= np.linalg.norm(h)
        try:
            trial = project_to_density(nodes[k] + step * h)
        except FoldedError:
            step *= 0.5
            continue
        left = folded_kantorovich_upper(nodes[k - 1], trial, cfg)
        right = folded_kantorovich_upper(trial, nodes[k + 1], cfg)
        if left.value + right.value < vals[k - 1] + vals[k] - 1e-15:
            nodes[k] = trial
            reps[k - 1], reps[k] = left, right
            vals[k - 1], vals[k] = left.value, right.value
        else:
            step *= 0.5
    return ChainWitness(nodes, vals, float(sum(vals)), reps)


def subadditivity_probe(rho, sigma, gamma, cfg: SolveConfig | None = None) -> ProbeReport:
    """Compare the direct bound for (rho, sigma) with the detour through gamma.

    A violation is certified only when the norm lower bound for (rho, sigma)
    already exceeds the detour upper bound; otherwise the slack is observational.
    """
    cfg = cfg or SolveConfig()
    direct = folded_kantorovich_upper(rho, sigma, cfg).value
    via = (folded_kantorovich_upper(rho, gamma, cfg).value
           + folded_kantorovich_upper(gamma, sigma, cfg).value)
    lower = norm_lower_bound(as_density(rho), as_density(sigma), cfg.metric)
    certified = lower is not None and lower > via
    report = ProbeReport(direct=direct, via=via, slack=via - direct, norm_lower=lower,
                         certified_violation=certified)
    log.debug("subadditivity probe: %s", report)
    return report


MONOTONICITY_TOL = 1e-4


def monotonicity_values(rho, sigma, p: float, q: float, cfg: SolveConfig | None = None):
    """``(value_p, value_q, cap)`` where cap = diam^(1 - p/q) value_p^(p/q)."""
    if not (1 <= p <= q):
        raise BadExponent(f"need 1 <= p <= q, got p={p}, q={q}")
    cfg = cfg or SolveConfig()
    vp = folded_kantorovich_upper(rho, sigma, replace(cfg, p=p)).value
    vq = vp if q == p else folded_kantorovich_upper(rho, sigma, replace(cfg, p=q)).value
    diam = get_metric(cfg.metric).diameter
    return vp, vq, diam ** (1.0 - p / q) * vp ** (p / q)


def monotonicity_check(rho, sigma, p: float, q: float, cfg: SolveConfig | None = None,
                       tol: float = MONOTONICITY_TOL) -> bool:
    if p == q:
        if not p >= 1:
            raise BadExponent(f"need 1 <= p <= q, got p={p}, q={q}")
        return True
    vp, vq, cap = monotonicity_values(rho, sigma, p, q, cfg)
    return vp <= vq + tol and vq <= cap + tol
