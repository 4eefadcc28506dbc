"""Envelope gradients of UOT losses and an explicit Euler particle flow.

Gradients hold the optimal plan fixed: for ``eps > 0`` the plan is unique, so
the derivative of the optimal value with respect to a cost entry is the plan
entry itself. Position gradients then follow by the chain rule through the
squared euclidean cost.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ContractViolation, NumericalFailure
from .measures import as_points
from .minibatch import LOSSES, MinibatchScheme, batch_loss
from .solvers import SolveResult, SolverConfig


@dataclass(frozen=True)
class PositionGradient:
    grad: np.ndarray
    value: float
    converged: bool

    @property
    def shape(self):
        return self.grad.shape


@dataclass(frozen=True)
class FlowConfig:
    step_size: float
    iterations: int
    scheme: MinibatchScheme
    loss: str = "sinkhorn_div"
    solver: SolverConfig = field(default_factory=SolverConfig)
    snapshot_every: int | None = None

    def __post_init__(self):
        if not self.step_size > 0:
            raise ContractViolation("step_size must be positive")
        if self.iterations < 0:
            raise ContractViolation("iterations must be nonnegative")
        if self.loss not in LOSSES:
            raise ContractViolation(f"unknown loss {self.loss!r}")
        if self.scheme.kind != "incomplete":
            raise ContractViolation("the flow samples minibatches; use an incomplete scheme")

    @property
    def cadence(self) -> int:
        if self.snapshot_every is not None:
            return max(1, int(self.snapshot_every))
        return max(1, self.iterations // 100)


def grad_cost(result: SolveResult) -> np.ndarray:
    """Gradient of the optimal value with respect to every cost entry."""
    cfg = result.config
    if cfg is None or not cfg.epsilon > 0:
        raise ContractViolation("cost gradients need an entropic solve (epsilon > 0); the eps=0 plan is not unique")
    return result.plan.entries.copy()


def _chain_rows(P, X, Y):
    # d/dx_i sum_ij P_ij |x_i - y_j|^2 with P fixed
    return 2.0 * (P.sum(axis=1)[:, None] * X - P @ Y)


def _chain_cols(P, X, Y):
    return 2.0 * (P.sum(axis=0)[:, None] * Y - P.T @ X)


def _self_grad(P, Z):
    # Z enters both arguments of C(Z, Z)
    return _chain_rows(P, Z, Z) + _chain_cols(P, Z, Z)


def batch_gradient(h, X, Y, cfg: SolverConfig, wrt="Y", mass_x=1.0, mass_y=1.0) -> PositionGradient:
    """Loss and position gradient for two clouds with uniform weights."""
    if wrt not in ("X", "Y"):
        raise ContractViolation(f"wrt must be 'X' or 'Y', got {wrt!r}")
    if not cfg.epsilon > 0:
        raise ContractViolation("position gradients need epsilon > 0")
    value, res = batch_loss(h, X, Y, cfg, mass_x, mass_y)
    if h == "uot":
        P = res.plan.entries
        g = _chain_rows(P, X, Y) if wrt == "X" else _chain_cols(P, X, Y)
        return PositionGradient(g, value, res.converged)
    P = res.cross.plan.entries
    if wrt == "X":
        g = _chain_rows(P, X, Y) - 0.5 * _self_grad(res.self_a.plan.entries, X)
    else:
        g = _chain_cols(P, X, Y) - 0.5 * _self_grad(res.self_b.plan.entries, Y)
    # the mass-gap term does not depend on positions
    return PositionGradient(g, value, res.converged)


def grad_positions(h, X, Y, wrt, cfg: SolverConfig, mass_x=1.0, mass_y=1.0) -> PositionGradient:
    if h not in LOSSES:
        raise ContractViolation(f"unknown loss {h!r}")
    Xp, Yp = as_points(X), as_points(Y)
    if Xp.shape[1] != Yp.shape[1]:
        raise ContractViolation(f"dimension mismatch: {Xp.shape[1]} vs {Yp.shape[1]}")
    return batch_gradient(h, Xp, Yp, cfg, wrt, mass_x, mass_y)


def _minibatch(h, Xp, Yp, m, k, seed, cfg, wrt, mass_x, mass_y):
    I, J = rng.sample_pairs(Xp.shape[0], Yp.shape[0], m, k, seed)
    out = np.zeros_like(Xp if wrt == "X" else Yp)
    total = 0.0
    converged = True
    for d in range(k):
        pg = batch_gradient(h, Xp[I[d]], Yp[J[d]], cfg, wrt, mass_x, mass_y)
        idx = I[d] if wrt == "X" else J[d]
        out[idx] += pg.grad
        total += pg.value
        converged = converged and pg.converged
    return PositionGradient(out / k, total / k, converged)


def grad_minibatch(h, X, Y, scheme: MinibatchScheme, cfg: SolverConfig, wrt="X",
                   mass_x=1.0, mass_y=1.0) -> PositionGradient:
    """Gradient of the incomplete estimator, scattered to global indices."""
    if h not in LOSSES:
        raise ContractViolation(f"unknown loss {h!r}")
    if scheme.kind != "incomplete":
        raise ContractViolation("grad_minibatch needs an incomplete scheme")
    Xp, Yp = as_points(X), as_points(Y)
    if scheme.m > min(Xp.shape[0], Yp.shape[0]):
        raise ContractViolation(f"batch size m={scheme.m} exceeds sample size")
    return _minibatch(h, Xp, Yp, scheme.m, scheme.k, scheme.seed, cfg, wrt, mass_x, mass_y)


@dataclass
class FlowTrajectory:
    snapshots: list  # (iteration, points) pairs
    losses: list  # (iteration, minibatch loss) pairs
    converged: bool

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1][1]

    def write_snapshots_csv(self, path) -> None:
        dim = self.final.shape[1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "point_id"] + [f"x{c}" for c in range(dim)])
            for it, pts in self.snapshots:
                for i, p in enumerate(pts):
                    w.writerow([it, i] + [repr(float(v)) for v in p])

    def write_loss_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss"])
            for it, val in self.losses:
                w.writerow([it, repr(float(val))])


def euler_flow(X0, Y, flow: FlowConfig, mass_x=1.0, mass_y=1.0) -> FlowTrajectory:
    """Move ``X`` along ``-m * grad`` of the incomplete minibatch loss.

    Iteration ``t`` draws its minibatches from ``derive_seed(seed, t)``.
    Snapshots are taken at iteration 0, every ``flow.cadence`` steps and at
    the end.
    """
    X = np.array(as_points(X0), dtype=np.float64)
    Yp = as_points(Y)
    m, k = flow.scheme.m, flow.scheme.k
    if m > min(X.shape[0], Yp.shape[0]):
        raise ContractViolation(f"batch size m={m} exceeds sample size")
    snaps = [(0, X.copy())]
    losses = []
    converged = True
    for t in range(flow.iterations):
        seed_t = rng.derive_seed(flow.scheme.seed, t)
        try:
            pg = _minibatch(flow.loss, X, Yp, m, k, seed_t, flow.solver, "X", mass_x, mass_y)
        except ContractViolation as exc:
            # inputs were validated up front, so this is an iterate that left the finite range
            raise NumericalFailure(f"flow diverged at iteration {t}: {exc}; reduce step_size") from exc
        converged = converged and pg.converged
        losses.append((t, pg.value))
        X -= flow.step_size * m * pg.grad
        if not np.all(np.isfinite(X)) or not math.isfinite(pg.value):
            raise NumericalFailure(f"flow diverged at iteration {t} (loss {pg.value!r}); reduce step_size")
        if (t + 1) % flow.cadence == 0 or t + 1 == flow.iterations:
            snaps.append((t + 1, X.copy()))
    return FlowTrajectory(snaps, losses, converged)
