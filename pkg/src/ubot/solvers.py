"""Entropic (unbalanced) Sinkhorn, the unbalanced Sinkhorn divergence, and
exact reference solvers used to check them.

All solvers work on dense float64 arrays. Measures may be passed as
:class:`~ubot.measures.Measure` or plain vectors, costs as
:class:`~ubot.measures.CostMatrix` or plain matrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import ContractViolation, UnsupportedOperation
from .measures import DivergenceKind, as_cost, as_points, build_cost, check_weights, csiszar_div


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of ``OT^{tau, eps}``.

    ``tau = math.inf`` selects the balanced problem (hard marginal
    constraints); it never enters an update formula as a number.
    """

    epsilon: float = 0.1
    tau: float = 1.0
    divergence: DivergenceKind = DivergenceKind.KL
    max_iter: int = 10_000
    tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "divergence", DivergenceKind.parse(self.divergence))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "tau", float(self.tau))
        if not self.epsilon >= 0 or math.isinf(self.epsilon):
            raise ContractViolation(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not self.tau > 0:
            raise ContractViolation(f"tau must be > 0 (use math.inf for balanced), got {self.tau}")
        if not self.tol > 0:
            raise ContractViolation("tol must be > 0")
        if int(self.max_iter) < 1:
            raise ContractViolation("max_iter must be >= 1")

    @property
    def mode(self) -> str:
        return "balanced" if math.isinf(self.tau) else "unbalanced"

    @property
    def balanced(self) -> bool:
        return math.isinf(self.tau)

    @classmethod
    def make_balanced(cls, epsilon: float, **kw) -> "SolverConfig":
        return cls(epsilon=epsilon, tau=math.inf, **kw)

    def replace(self, **changes) -> "SolverConfig":
        params = dict(epsilon=self.epsilon, tau=self.tau, divergence=self.divergence,
                      max_iter=self.max_iter, tol=self.tol)
        params.update(changes)
        return SolverConfig(**params)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "tau": "inf" if self.balanced else self.tau,
            "divergence": self.divergence.value,
            "max_iter": int(self.max_iter),
            "tol": self.tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        tau = d.get("tau", 1.0)
        if isinstance(tau, str):
            if tau.lower() not in ("inf", "infinity", "balanced"):
                raise ContractViolation(f"tau must be a number or 'inf', got {tau!r}")
            tau = math.inf
        d["tau"] = tau
        unknown = set(d) - {"epsilon", "tau", "divergence", "max_iter", "tol"}
        if unknown:
            raise ContractViolation(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DualPotentials:
    f: np.ndarray
    g: np.ndarray


@dataclass(frozen=True)
class TransportPlan:
    entries: np.ndarray

    @property
    def row_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.entries.sum(axis=0)

    @property
    def mass(self) -> float:
        return float(self.entries.sum())

    @property
    def support(self) -> np.ndarray:
        return self.entries > 0

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class SolveResult:
    cost: float
    plan: TransportPlan
    potentials: DualPotentials | None
    iterations: int
    converged: bool
    config: SolverConfig | None = field(default=None, compare=False)

    def to_json_dict(self) -> dict:
        pot = self.potentials
        return {
            "cost": self.cost,
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "plan": self.plan.entries.tolist(),
            "f": None if pot is None else pot.f.tolist(),
            "g": None if pot is None else pot.g.tolist(),
        }


@dataclass(frozen=True)
class DivergenceResult:
    """Value of the Sinkhorn divergence plus the three underlying solves."""

    value: float
    cross: SolveResult
    self_a: SolveResult
    self_b: SolveResult
    mass_term: float

    @property
    def converged(self) -> bool:
        return self.cross.converged and self.self_a.converged and self.self_b.converged

    def __float__(self):
        return self.value


def _log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _check_problem(a, b, C):
    a = check_weights(a)
    b = check_weights(b)
    C = np.ascontiguousarray(as_cost(C))
    if C.shape != (a.size, b.size):
        raise ContractViolation(f"cost shape {C.shape} does not match weights ({a.size}, {b.size})")
    return a, b, C


def uot_energy(P, a, b, C, epsilon: float, tau: float, divergence=DivergenceKind.KL) -> float:
    """Primal objective ``<C,P> + eps KL(P|a b^T) + tau D(P1|a) + tau D(P^T1|b)``.

    With ``tau = inf`` the marginal terms are dropped (the plan is assumed
    feasible).
    """
    P = np.asarray(P, dtype=np.float64)
    val = float(np.sum(C * P))
    if epsilon > 0:
        val += epsilon * csiszar_div(DivergenceKind.KL, P.ravel(), np.outer(a, b).ravel())
    if not math.isinf(tau):
        val += tau * (csiszar_div(divergence, P.sum(axis=1), a) + csiszar_div(divergence, P.sum(axis=0), b))
    return val


def sinkhorn_uot(a, b, C, cfg: SolverConfig, init: DualPotentials | None = None) -> SolveResult:
    """Generalized Sinkhorn in the log domain for ``eps > 0``.

    Non-convergence within ``cfg.max_iter`` is reported through
    ``converged=False``; the cost is always the primal energy of the returned
    plan.
    """
    if not cfg.epsilon > 0:
        raise ContractViolation("sinkhorn_uot needs epsilon > 0; use uot_primal_oracle or exact_balanced_ot")
    if cfg.divergence is not DivergenceKind.KL:
        raise UnsupportedOperation("the iterative solver only handles KL marginal penalties")
    a, b, C = _check_problem(a, b, C)
    eps = cfg.epsilon
    if cfg.balanced:
        if not math.isclose(a.sum(), b.sum(), rel_tol=1e-9):
            raise ContractViolation(f"balanced mode needs equal masses, got {a.sum()} and {b.sum()}")
        rho = 1.0
    else:
        rho = cfg.tau / (cfg.tau + eps)
    log_a, log_b = _log(a), _log(b)
    f0 = np.zeros(a.size) if init is None else np.array(init.f, dtype=np.float64)
    g0 = np.zeros(b.size) if init is None else np.array(init.g, dtype=np.float64)
    f, g, it, err = kernels.sinkhorn(log_a, log_b, C, eps, rho, int(cfg.max_iter), cfg.tol, f0, g0)
    P = np.exp(log_a[:, None] + log_b[None, :] + (f[:, None] + g[None, :] - C) / eps)
    cost = uot_energy(P, a, b, C, eps, cfg.tau)
    return SolveResult(
        cost=cost,
        plan=TransportPlan(P),
        potentials=DualPotentials(f, g),
        iterations=int(it),
        converged=bool(err <= cfg.tol),
        config=cfg,
    )


def sinkhorn_divergence_costs(a, b, C_ab, C_aa, C_bb, cfg: SolverConfig) -> DivergenceResult:
    """Debiased loss from the three precomputed cost matrices."""
    a = check_weights(a)
    b = check_weights(b)
    cross = sinkhorn_uot(a, b, C_ab, cfg)
    self_a = sinkhorn_uot(a, a, C_aa, cfg)
    self_b = sinkhorn_uot(b, b, C_bb, cfg)
    mass_term = 0.5 * cfg.epsilon * (a.sum() - b.sum()) ** 2
    value = cross.cost + mass_term - 0.5 * self_a.cost - 0.5 * self_b.cost
    return DivergenceResult(value, cross, self_a, self_b, mass_term)


def sinkhorn_divergence(a, b, Xa, Xb, cfg: SolverConfig) -> DivergenceResult:
    """``OT(a,b) + eps/2 (m_a - m_b)^2 - OT(a,a)/2 - OT(b,b)/2`` on point clouds."""
    if not cfg.epsilon > 0:
        raise ContractViolation("the Sinkhorn divergence needs epsilon > 0")
    Xa, Xb = as_points(Xa), as_points(Xb)
    return sinkhorn_divergence_costs(
        a, b, build_cost(Xa, Xb).entries, build_cost(Xa, Xa).entries, build_cost(Xb, Xb).entries, cfg
    )


ORACLE_MAX_ENTRIES = 400


def uot_primal_oracle(
    a,
    b,
    C,
    tau: float,
    divergence=DivergenceKind.KL,
    epsilon: float = 0.0,
    max_iter: int = 100_000,
    tol: float = 1e-8,
) -> SolveResult:
    """Minimize the KL-penalized UOT energy by exponentiated gradient descent.

    Works for ``eps = 0`` where Sinkhorn does not apply. The energy is convex,
    so a stationary point is a global minimizer. Rows or columns with zero
    weight carry no mass at the optimum and are removed before descent.
    """
    if DivergenceKind.parse(divergence) is not DivergenceKind.KL:
        raise UnsupportedOperation("the primal oracle only handles KL marginal penalties")
    if not (tau > 0) or math.isinf(tau):
        raise ContractViolation("the primal oracle needs a finite tau > 0")
    if epsilon < 0:
        raise ContractViolation("epsilon must be >= 0")
    a, b, C = _check_problem(a, b, C)
    if a.size * b.size > ORACLE_MAX_ENTRIES:
        raise ContractViolation(f"oracle limited to n*p <= {ORACLE_MAX_ENTRIES}, got {a.size * b.size}")
    ia, ib = a > 0, b > 0
    a_s, b_s = a[ia], b[ib]
    C_s = np.ascontiguousarray(C[np.ix_(ia, ib)])
    L0 = np.log(np.outer(a_s, b_s)) - C_s / (2.0 * tau + epsilon)
    L, _, it, res = kernels.uot_mirror_descent(a_s, b_s, C_s, float(tau), float(epsilon), int(max_iter), tol, L0)
    P = np.zeros_like(C)
    P[np.ix_(ia, ib)] = np.exp(L)
    cost = uot_energy(P, a, b, C, epsilon, tau)
    # first-order conditions of the dual give f = -tau log(r/a), g likewise
    with np.errstate(divide="ignore"):
        f = np.where(ia, -tau * np.log(P.sum(axis=1) / np.where(ia, a, 1.0)), 0.0)
        g = np.where(ib, -tau * np.log(P.sum(axis=0) / np.where(ib, b, 1.0)), 0.0)
    return SolveResult(
        cost=cost,
        plan=TransportPlan(P),
        potentials=DualPotentials(f, g),
        iterations=int(it),
        converged=bool(res <= tol),
        config=SolverConfig(epsilon=epsilon, tau=tau, max_iter=max_iter, tol=tol),
    )


def assignment_cost(C, perm) -> float:
    """Mean cost of the assignment ``i -> perm[i]``."""
    C = np.asarray(C, dtype=np.float64)
    m = C.shape[0]
    return float(np.sum(C[np.arange(m), np.asarray(perm)])) / m


def exact_balanced_ot(C) -> SolveResult:
    """Exact OT between two uniform measures of equal size ``m``.

    Balanced OT between uniform same-size measures has a permutation among its
    optimal plans, so it is an assignment problem (Hungarian algorithm).
    """
    C = np.ascontiguousarray(as_cost(C))
    m, p = C.shape
    if m != p:
        raise ContractViolation(f"exact balanced OT needs a square cost matrix, got {C.shape}")
    perm = kernels.hungarian(C)
    P = np.zeros((m, m))
    P[np.arange(m), perm] = 1.0 / m
    return SolveResult(
        cost=assignment_cost(C, perm),
        plan=TransportPlan(P),
        potentials=None,
        iterations=m,
        converged=True,
        config=SolverConfig(epsilon=0.0, tau=math.inf),
    )


def exact_ot_lp(a, b, C) -> SolveResult:
    """Exact balanced OT for arbitrary equal-mass weights, as a linear program."""
    a, b, C = _check_problem(a, b, C)
    if not math.isclose(a.sum(), b.sum(), rel_tol=1e-9):
        raise ContractViolation("balanced OT needs equal masses")
    n, p = C.shape
    A_eq = np.zeros((n + p, n * p))
    for i in range(n):
        A_eq[i, i * p:(i + 1) * p] = 1.0
    for j in range(p):
        A_eq[n + j, j::p] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise ContractViolation(f"linear program failed: {res.message}")
    P = np.maximum(res.x.reshape(n, p), 0.0)
    f = np.asarray(res.eqlin.marginals[:n]) if res.eqlin is not None else np.zeros(n)
    g = np.asarray(res.eqlin.marginals[n:]) if res.eqlin is not None else np.zeros(p)
    return SolveResult(
        cost=float(np.sum(C * P)),
        plan=TransportPlan(P),
        potentials=DualPotentials(f, g),
        iterations=int(res.nit),
        converged=True,
        config=SolverConfig(epsilon=0.0, tau=math.inf),
    )


def solve(a, b, C, cfg: SolverConfig) -> SolveResult:
    """Dispatch to the right solver: Sinkhorn for eps > 0, else an exact method."""
    if cfg.epsilon > 0:
        return sinkhorn_uot(a, b, C, cfg)
    if cfg.balanced:
        a_w, b_w, C_m = _check_problem(a, b, C)
        if C_m.shape[0] == C_m.shape[1] and np.ptp(a_w) == 0 and np.ptp(b_w) == 0 and a_w.sum() == b_w.sum():
            res = exact_balanced_ot(C_m)
            if a_w.sum() != 1.0:
                P = res.plan.entries * a_w.sum()
                res = SolveResult(float(np.sum(C_m * P)), TransportPlan(P), None, res.iterations, True, res.config)
            return res
        return exact_ot_lp(a_w, b_w, C_m)
    return uot_primal_oracle(a, b, C, cfg.tau, cfg.divergence)


def _phi_mass(kind: DivergenceKind, tau: float, weight: float, t: float) -> float:
    pen = float(kind.phi(t))
    if math.isinf(tau):
        return 0.0 if pen == 0.0 else math.inf
    return tau * weight * pen


def bound_constant(a, b, C, tau: float, divergence=DivergenceKind.KL, *, epsilon: float = 0.0,
                   loss: str = "uot") -> float:
    """Upper bound on ``|h(a, b, C)|`` obtained from the product plan ``a b^T``.

    ``loss="uot"``: ``M m_a m_b + tau m_a phi(m_b) + tau m_b phi(m_a)``;
    ``loss="sinkhorn_div"`` adds half the same bound for each self term and
    the mass-gap term. ``M`` is the largest cost entry and must also bound the
    self costs for the divergence variant.
    """
    kind = DivergenceKind.parse(divergence)
    a, b = check_weights(a), check_weights(b)
    M = float(np.max(as_cost(C)))
    ma, mb = float(a.sum()), float(b.sum())

    def uot(m1, m2):
        return M * m1 * m2 + _phi_mass(kind, tau, m1, m2) + _phi_mass(kind, tau, m2, m1)

    if loss == "uot":
        return uot(ma, mb)
    if loss == "sinkhorn_div":
        return uot(ma, mb) + 0.5 * uot(ma, ma) + 0.5 * uot(mb, mb) + 0.5 * epsilon * (ma - mb) ** 2
    raise ContractViolation(f"unknown loss {loss!r}")
