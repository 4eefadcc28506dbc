"""Minibatch estimators of UOT losses and averaged minibatch transport plans.

Batches carry uniform weights ``mass / m`` where ``mass`` is the total mass of
the full measure (1 for probability inputs). The complete estimator averages
over unordered index subsets with weight ``C(n, m)^-2``; the loss and the
lifted plan are invariant under reordering a tuple, so this equals the
average over ordered tuples.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import rng
from .errors import ContractViolation, UnsupportedOperation
from .measures import as_cost, as_points, build_cost
from .solvers import SolverConfig, TransportPlan, sinkhorn_divergence_costs, solve

LOSSES = ("uot", "sinkhorn_div")

COMPLETE_MAX_N = 12
COMPLETE_MAX_M = 4


@dataclass(frozen=True)
class MinibatchScheme:
    m: int
    k: int = 1
    seed: int = 0
    kind: str = "incomplete"

    def __post_init__(self):
        if self.kind not in ("complete", "incomplete"):
            raise ContractViolation(f"unknown scheme kind {self.kind!r}")
        if self.m < 1:
            raise ContractViolation("batch size m must be >= 1")
        if self.kind == "incomplete" and self.k < 1:
            raise ContractViolation("incomplete scheme needs k >= 1")


@dataclass
class EstimatorRun:
    """Per-draw record of an incomplete estimator."""

    value: float
    losses: np.ndarray
    I: np.ndarray
    J: np.ndarray
    n: int
    m: int
    seed: int
    converged: bool
    plan_masses: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def k(self) -> int:
        return self.losses.size

    @property
    def std(self) -> float:
        return float(np.std(self.losses, ddof=1)) if self.k > 1 else 0.0

    def summary(self) -> dict:
        return {"mean": self.value, "std": self.std, "k": self.k, "m": self.m, "n": self.n, "seed": self.seed}

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["draw_index", "i_indices", "j_indices", "loss"])
            for d in range(self.k):
                w.writerow([d, " ".join(map(str, self.I[d])), " ".join(map(str, self.J[d])), repr(float(self.losses[d]))])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _check_loss(h):
    if h not in LOSSES:
        raise ContractViolation(f"unknown loss {h!r}; expected one of {LOSSES}")


def batch_loss(h, Xb, Yb, cfg: SolverConfig, mass_x=1.0, mass_y=1.0, cost=None):
    """Loss between two batches with uniform weights; returns ``(value, result)``.

    ``result`` is the :class:`SolveResult` for ``uot`` and the
    :class:`DivergenceResult` for ``sinkhorn_div``.
    """
    mx = Xb.shape[0] if cost is None else cost.shape[0]
    my = Yb.shape[0] if cost is None else cost.shape[1]
    a = np.full(mx, mass_x / mx)
    b = np.full(my, mass_y / my)
    if h == "uot":
        C = build_cost(Xb, Yb).entries if cost is None else cost
        res = solve(a, b, C, cfg)
        return res.cost, res
    if cost is not None:
        raise UnsupportedOperation("the Sinkhorn divergence needs point clouds, not a bare cost matrix")
    res = sinkhorn_divergence_costs(
        a, b, build_cost(Xb, Yb).entries, build_cost(Xb, Xb).entries, build_cost(Yb, Yb).entries, cfg
    )
    return res.value, res


def _inputs(X, Y, cost):
    if cost is not None:
        C = as_cost(cost)
        return None, None, C, C.shape[0], C.shape[1]
    Xp, Yp = as_points(X), as_points(Y)
    return Xp, Yp, None, Xp.shape[0], Yp.shape[0]


def _pair(h, Xp, Yp, C, I, J, cfg, mass_x, mass_y):
    if C is not None:
        return batch_loss(h, None, None, cfg, mass_x, mass_y, cost=np.ascontiguousarray(C[np.ix_(I, J)]))
    return batch_loss(h, Xp[I], Yp[J], cfg, mass_x, mass_y)


def _guard(n_x, n_y, m, max_n, max_m):
    if m > min(n_x, n_y):
        raise ContractViolation(f"batch size m={m} exceeds sample size")
    if m == n_x == n_y:
        return  # a single pair, nothing to enumerate
    if max(n_x, n_y) > max_n or m > max_m:
        raise ContractViolation(
            f"complete enumeration limited to n <= {max_n}, m <= {max_m} "
            f"(got n={max(n_x, n_y)}, m={m}); use incomplete_estimator instead"
        )


def complete_estimator(h, X, Y, m: int, cfg: SolverConfig, *, cost=None, mass_x=1.0, mass_y=1.0,
                       max_n: int = COMPLETE_MAX_N, max_m: int = COMPLETE_MAX_M) -> float:
    """Average of ``h(u_m, u_m, C_IJ)`` over all pairs of m-subsets."""
    _check_loss(h)
    Xp, Yp, C, n_x, n_y = _inputs(X, Y, cost)
    _guard(n_x, n_y, m, max_n, max_m)
    total = 0.0
    count = 0
    for I in combinations(range(n_x), m):
        for J in combinations(range(n_y), m):
            val, _ = _pair(h, Xp, Yp, C, list(I), list(J), cfg, mass_x, mass_y)
            total += val
            count += 1
    return total / count


def incomplete_run(h, X, Y, scheme: MinibatchScheme, cfg: SolverConfig, *, cost=None,
                   mass_x=1.0, mass_y=1.0) -> EstimatorRun:
    """Mean of ``h`` over ``scheme.k`` independently drawn pairs of m-subsets."""
    _check_loss(h)
    if scheme.kind != "incomplete":
        raise ContractViolation("incomplete_estimator needs an incomplete scheme")
    Xp, Yp, C, n_x, n_y = _inputs(X, Y, cost)
    if scheme.m > min(n_x, n_y):
        raise ContractViolation(f"batch size m={scheme.m} exceeds sample size")
    I, J = rng.sample_pairs(n_x, n_y, scheme.m, scheme.k, scheme.seed)
    losses = np.empty(scheme.k)
    masses = np.full(scheme.k, np.nan)
    converged = True
    total = 0.0
    for d in range(scheme.k):
        val, res = _pair(h, Xp, Yp, C, I[d], J[d], cfg, mass_x, mass_y)
        losses[d] = val
        if h == "uot":
            masses[d] = res.plan.mass
        converged = converged and res.converged
        total += val
    return EstimatorRun(total / scheme.k, losses, I, J, max(n_x, n_y), scheme.m, scheme.seed, converged, masses)


def incomplete_estimator(h, X, Y, scheme: MinibatchScheme, cfg: SolverConfig, **kw) -> float:
    return incomplete_run(h, X, Y, scheme, cfg, **kw).value


def averaged_plan(X, Y, m: int, cfg: SolverConfig, *, cost=None, mass_x=1.0, mass_y=1.0,
                  max_n: int = COMPLETE_MAX_N, max_m: int = COMPLETE_MAX_M, h="uot") -> TransportPlan:
    """Average of lifted minibatch plans over all pairs of m-subsets."""
    if h != "uot":
        raise UnsupportedOperation("averaged plans exist only for the UOT loss; the Sinkhorn divergence has three plans")
    Xp, Yp, C, n_x, n_y = _inputs(X, Y, cost)
    _guard(n_x, n_y, m, max_n, max_m)
    acc = np.zeros((n_x, n_y))
    count = 0
    for I in combinations(range(n_x), m):
        for J in combinations(range(n_y), m):
            I_l, J_l = list(I), list(J)
            _, res = _pair("uot", Xp, Yp, C, I_l, J_l, cfg, mass_x, mass_y)
            acc[np.ix_(I_l, J_l)] += res.plan.entries
            count += 1
    return TransportPlan(acc / count)


def incomplete_plan(X, Y, scheme: MinibatchScheme, cfg: SolverConfig, *, cost=None, mass_x=1.0,
                    mass_y=1.0, h="uot") -> TransportPlan:
    if h != "uot":
        raise UnsupportedOperation("averaged plans exist only for the UOT loss; the Sinkhorn divergence has three plans")
    Xp, Yp, C, n_x, n_y = _inputs(X, Y, cost)
    I, J = rng.sample_pairs(n_x, n_y, scheme.m, scheme.k, scheme.seed)
    acc = np.zeros((n_x, n_y))
    for d in range(scheme.k):
        _, res = _pair("uot", Xp, Yp, C, I[d], J[d], cfg, mass_x, mass_y)
        acc[np.ix_(I[d], J[d])] += res.plan.entries
    return TransportPlan(acc / scheme.k)


def deviation_bound(n: int, m: int, k: int, delta: float, M: float) -> float:
    """Maximal deviation between the incomplete estimator and its expectation.

    ``M * (sqrt(log(2/delta) / (2 floor(n/m))) + sqrt(2 log(2/delta) / k))``;
    ``k = math.inf`` drops the sampling term.
    """
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    if not 1 <= m <= n:
        raise ContractViolation("need 1 <= m <= n")
    if k < 1:
        raise ContractViolation("need k >= 1")
    log_term = math.log(2.0 / delta)
    first = math.sqrt(log_term / (2 * (n // m)))
    second = 0.0 if math.isinf(k) else math.sqrt(2 * log_term / k)
    return M * (first + second)


def marginal_deviation_bound(k: int, delta: float, max_plan_mass: float) -> float:
    """Per-row gap between incomplete and complete averaged plan marginals."""
    if not 0 < delta < 1:
        raise ContractViolation("delta must lie in (0, 1)")
    return max_plan_mass * math.sqrt(2 * math.log(2.0 / delta) / k)


def cross_label_mass(plan, labels_row, labels_col) -> float:
    """Fraction of transported mass joining points with different labels."""
    P = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)
    lr = np.asarray(labels_row)
    lc = np.asarray(labels_col)
    if P.shape != (lr.size, lc.size):
        raise ContractViolation(f"plan shape {P.shape} does not match labels ({lr.size}, {lc.size})")
    total = P.sum()
    if total <= 0:
        return 0.0
    return float(P[lr[:, None] != lc[None, :]].sum() / total)
