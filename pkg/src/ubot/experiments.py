"""Experiment drivers: pure functions of (parameters, seed) returning records.

File output lives in :mod:`ubot.cli`; everything here is deterministic given
its arguments so reruns are byte-identical.
"""

import math
from itertools import combinations

import numpy as np

from . import rng
from .errors import ContractViolation
from .gradients import FlowConfig, euler_flow
from .jumbot import JumbotConfig, TinyClassifier, make_shifted_blobs, train
from .measures import PointCloud, build_cost, uniform_measure
from .minibatch import (
    MinibatchScheme,
    averaged_plan,
    batch_loss,
    cross_label_mass,
    deviation_bound,
    incomplete_run,
    marginal_deviation_bound,
)
from .solvers import SolverConfig, bound_constant, exact_ot_lp, sinkhorn_divergence, solve, uot_primal_oracle


def parse_tau(value) -> float:
    if isinstance(value, str):
        if value.lower() in ("inf", "infinity", "balanced"):
            return math.inf
        raise ContractViolation(f"tau must be a positive number or 'inf', got {value!r}")
    tau = float(value)
    if not tau > 0:
        raise ContractViolation(f"tau must be positive, got {tau}")
    return tau


def tau_label(tau: float) -> str:
    return "inf" if math.isinf(tau) else repr(float(tau))


def _gen(seed, tag):
    return np.random.default_rng([int(seed) & (2**64 - 1), tag])


# ---------------------------------------------------------------- outlier


def outlier_bound(X, Y, z, tau: float, uot_clean: float | None = None) -> float:
    """Upper bound on UOT(clean + outlier, Y) from UOT(clean, Y) at eps = 0.

    ``zeta * UOT(a, b) + 2 tau (1 - zeta)(1 - exp(-m(z) / (2 tau)))`` with
    ``zeta = n / (n + 1)`` and ``m(z)`` the mean cost from ``z`` to ``Y``.
    """
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    n = X.shape[0]
    zeta = n / (n + 1)
    if uot_clean is None:
        uot_clean = uot_primal_oracle(np.full(n, 1 / n), np.full(Y.shape[0], 1 / Y.shape[0]),
                                      build_cost(X, Y).entries, tau).cost
    m_z = float(np.mean(np.sum((Y - np.asarray(z, float)) ** 2, axis=1)))
    return zeta * uot_clean + 2 * tau * (1 - zeta) * (1 - math.exp(-m_z / (2 * tau)))


def tainted(X, z) -> np.ndarray:
    return np.vstack([np.asarray(X, float), np.asarray(z, float)[None, :]])


OUTLIER_LOSSES = ("ot-balanced", "uot", "sinkhorn-div", "sinkhorn-div-balanced", "mb-ot", "mb-uot")


def outlier_experiment(n=15, dim=2, tau=1.0, epsilon=0.1, distances=None, losses=OUTLIER_LOSSES,
                       m=5, ks=(30, 500), reps=10, seed=0) -> list:
    """Losses between a clean sample and the same law tainted by a moving outlier.

    Returns one record per ``(distance, loss, k)`` with mean and std over
    ``reps`` minibatch seeds (deterministic losses have std 0); the bound
    curve is reported as loss ``uot-bound``.
    """
    bad = [h for h in losses if h not in OUTLIER_LOSSES]
    if bad:
        raise ContractViolation(f"unknown losses {bad}; expected a subset of {OUTLIER_LOSSES}")
    if distances is None:
        distances = np.logspace(0, 2, 7).tolist()
    gen = _gen(seed, 1)
    X = gen.standard_normal((n, dim))
    Y = gen.standard_normal((n, dim))
    a_clean, b = np.full(n, 1 / n), np.full(n, 1 / n)
    a = np.full(n + 1, 1 / (n + 1))
    uot_clean = uot_primal_oracle(a_clean, b, build_cost(X, Y).entries, tau).cost
    unb = SolverConfig(epsilon=epsilon, tau=tau)
    bal = SolverConfig.make_balanced(epsilon)
    records = []
    for d in distances:
        z = np.zeros(dim)
        z[0] = d
        Xt = tainted(X, z)
        C = build_cost(Xt, Y).entries
        det = {}
        if "ot-balanced" in losses:
            det["ot-balanced"] = exact_ot_lp(a, b, C).cost
        if "uot" in losses:
            det["uot"] = uot_primal_oracle(a, b, C, tau).cost
            det["uot-bound"] = outlier_bound(X, Y, z, tau, uot_clean)
        if "sinkhorn-div" in losses:
            det["sinkhorn-div"] = sinkhorn_divergence(a, b, Xt, Y, unb).value
        if "sinkhorn-div-balanced" in losses:
            det["sinkhorn-div-balanced"] = sinkhorn_divergence(a, b, Xt, Y, bal).value
        for name, val in det.items():
            records.append({"distance": float(d), "loss": name, "k": 0, "mean": float(val), "std": 0.0})
        for name, cfg in (("mb-ot", bal), ("mb-uot", unb)):
            if name not in losses:
                continue
            for k in ks:
                vals = [incomplete_run("uot", Xt, Y, MinibatchScheme(m, k, rng.derive_seed(seed, r)), cfg).value
                        for r in range(reps)]
                records.append({"distance": float(d), "loss": name, "k": int(k),
                                "mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=1)) if reps > 1 else 0.0})
    return records


# ---------------------------------------------------------------- plan-viz


def two_cluster_pairs(seed=0, n_src=(5, 5), n_tgt=(3, 7), gap=1.0, height=2.0, spread=0.25):
    """Small two-class scene: source on the left, target on the right.

    Class 0 sits at the bottom and class 1 at the top of each side.
    """
    gen = _gen(seed, 2)

    def side(x, counts):
        labels = np.repeat([0, 1], counts)
        centres = np.stack([np.full(labels.size, x), height * labels], axis=1)
        return PointCloud(centres + spread * gen.standard_normal((labels.size, 2)), labels)

    return side(0.0, n_src), side(gap, n_tgt)


def plan_viz_experiment(seed=0, epsilon=0.05, tau=1.0, taus=(100.0, 10.0, 3.0, 1.0, 0.3, 0.1),
                        ms=(3, 10), n_src=(5, 5), n_tgt=(3, 7), src=None, tgt=None) -> dict:
    """Full and averaged minibatch plans, balanced and unbalanced.

    ``plans`` maps ``(method, m, tau)`` to a plan matrix; ``tau_sweep`` lists
    the cross-label mass of the full unbalanced plan along ``taus``. Labelled
    clouds ``src`` and ``tgt`` replace the built-in scene when given.
    """
    if src is None or tgt is None:
        src, tgt = two_cluster_pairs(seed, n_src, n_tgt)
    if src.labels is None or tgt.labels is None:
        raise ContractViolation("plan visualisation needs labelled point clouds")
    n_x, n_y = src.n, tgt.n
    a, b = np.full(n_x, 1 / n_x), np.full(n_y, 1 / n_y)
    C = build_cost(src, tgt).entries
    unb = SolverConfig(epsilon=epsilon, tau=tau)
    # exact balanced batches: entropic balanced Sinkhorn stalls at small eps on these scenes
    exact = SolverConfig(epsilon=0.0, tau=math.inf)
    plans = {("ot", n_x, math.inf): exact_ot_lp(a, b, C).plan.entries,
             ("uot", n_x, tau): solve(a, b, C, unb).plan.entries}
    for m in ms:
        if m > min(n_x, n_y):
            raise ContractViolation(f"batch size {m} exceeds the scene size")
        if m == n_x == n_y:
            continue
        plans[("mb-ot", m, math.inf)] = averaged_plan(src, tgt, m, exact).entries
        plans[("mb-uot", m, tau)] = averaged_plan(src, tgt, m, unb).entries
    sweep = []
    for t in taus:
        P = solve(a, b, C, SolverConfig(epsilon=epsilon, tau=parse_tau(t))).plan.entries
        sweep.append({"tau": parse_tau(t), "cross_label_mass": cross_label_mass(P, src.labels, tgt.labels),
                      "mass": float(P.sum())})
    return {"source": src, "target": tgt, "plans": plans, "tau_sweep": sweep}


# ---------------------------------------------------------------- concentration


def _unit_square(gen, n, offset):
    return gen.uniform(size=(n, 2)) + np.asarray(offset, float)


def reference_expectation(m, cfg: SolverConfig, samples: int, seed: int, loss="uot", offset=(0.5, 0.0)):
    """Monte Carlo mean and standard error of the loss on fresh i.i.d. m-samples."""
    gen = _gen(seed, 3)
    vals = np.empty(samples)
    for s in range(samples):
        Xb = _unit_square(gen, m, (0.0, 0.0))
        Yb = _unit_square(gen, m, offset)
        vals[s] = batch_loss(loss, Xb, Yb, cfg)[0]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def concentration_experiment(settings=((60, 5, 50),), reps=500, delta=0.05, epsilon=0.1, tau=1.0,
                             ref_samples=100_000, loss="uot", seed=0, offset=(0.5, 0.0)) -> dict:
    """Deviation of the incomplete estimator from its expectation vs the bound.

    Samples are uniform on the unit square (target shifted by ``offset``).
    The bound constant uses the largest cost entry of each instance.
    """
    cfg = SolverConfig(epsilon=epsilon, tau=tau)
    refs = {}
    rows, summary = [], []
    for n, m, k in settings:
        if m not in refs:
            refs[m] = reference_expectation(m, cfg, ref_samples, seed, loss, offset)
        ref, ref_se = refs[m]
        gen = _gen(seed, 4 + 1000 * n + m)
        hits = 0
        for r in range(reps):
            X = _unit_square(gen, n, (0.0, 0.0))
            Y = _unit_square(gen, n, offset)
            est = incomplete_run(loss, X, Y, MinibatchScheme(m, k, rng.derive_seed(seed, r)), cfg).value
            u = uniform_measure(n).weights
            M = bound_constant(u, u, build_cost(X, Y).entries, tau, epsilon=epsilon,
                               loss="uot" if loss == "uot" else "sinkhorn_div")
            bound = deviation_bound(n, m, k, delta, M)
            dev = abs(est - ref)
            hits += dev <= bound
            rows.append({"n": n, "m": m, "k": k, "rep": r, "estimate": est, "deviation": dev, "bound": bound,
                         "within": int(dev <= bound)})
        summary.append({"n": n, "m": m, "k": k, "reference": ref, "reference_se": ref_se,
                        "coverage": hits / reps, "delta": delta})
    return {"rows": rows, "summary": summary}


def marginal_coverage(n=6, m=2, k=100, reps=500, delta=0.05, epsilon=0.1, tau=1.0, seed=0) -> dict:
    """Row-marginal gap between incomplete and complete averaged plans vs the bound.

    Every minibatch plan is computed once; draws then average cached plans.
    The plan-mass constant is the largest mass among all minibatch plans.
    """
    gen = _gen(seed, 5)
    X = _unit_square(gen, n, (0.0, 0.0))
    Y = _unit_square(gen, n, (0.5, 0.0))
    cfg = SolverConfig(epsilon=epsilon, tau=tau)
    subsets = list(combinations(range(n), m))
    pos = {s: i for i, s in enumerate(subsets)}
    row_marg = np.zeros((len(subsets), len(subsets), n))
    max_mass = 0.0
    for ia, I in enumerate(subsets):
        for jb, J in enumerate(subsets):
            P = batch_loss("uot", X[list(I)], Y[list(J)], cfg)[1].plan.entries
            row_marg[ia, jb, list(I)] = P.sum(axis=1)
            max_mass = max(max_mass, float(P.sum()))
    complete = row_marg.mean(axis=(0, 1))
    bound = marginal_deviation_bound(k, delta, max_mass)
    hits = 0
    gaps = np.empty((reps, n))
    for r in range(reps):
        I, J = rng.sample_pairs(n, n, m, k, rng.derive_seed(seed, r))
        ia = [pos[tuple(sorted(t))] for t in I.tolist()]
        jb = [pos[tuple(sorted(t))] for t in J.tolist()]
        est = row_marg[ia, jb].mean(axis=0)
        gaps[r] = np.abs(est - complete)
        hits += int(np.sum(gaps[r] <= bound))
    return {"coverage": hits / (reps * n), "bound": bound, "max_plan_mass": max_mass,
            "max_gap": float(gaps.max()), "complete_row_marginal": complete}


# ---------------------------------------------------------------- flow


def imbalanced_clusters(n: int, frac_left: float, y: float, seed: int, half_gap=2.0, spread=0.3) -> PointCloud:
    """Two Gaussian clusters at ``(-half_gap, y)`` and ``(half_gap, y)``; label 0 is left."""
    gen = _gen(seed, 6)
    n_left = int(round(frac_left * n))
    labels = np.r_[np.zeros(n_left, int), np.ones(n - n_left, int)]
    centres = np.where(labels[:, None] == 0, [-half_gap, y], [half_gap, y])
    return PointCloud(centres + spread * gen.standard_normal((n, 2)), labels)


def flow_scene(n=600, frac=0.64, height=1.0, half_gap=2.0, spread=0.3, seed=0):
    """Source clusters on top (``frac`` on the left), target below with ``1 - frac`` on the left."""
    src = imbalanced_clusters(n, frac, height, rng.derive_seed(seed, 0, 0x5C), half_gap, spread)
    tgt = imbalanced_clusters(n, 1 - frac, -height, rng.derive_seed(seed, 1, 0x5C), half_gap, spread)
    return src, tgt


def cluster_purity(final, labels, half_gap=2.0, height=1.0) -> float:
    """Share of source points whose nearest target cluster centre is the one below their origin."""
    final = np.asarray(final, float)
    left = np.array([-half_gap, -height])
    right = np.array([half_gap, -height])
    nearest = (np.linalg.norm(final - right, axis=1) < np.linalg.norm(final - left, axis=1)).astype(int)
    return float(np.mean(nearest == np.asarray(labels)))


def flow_experiment(n=600, frac=0.64, iterations=500, m=64, k=1, lr=0.02, epsilon=0.5, taus=(5.0, math.inf),
                    loss="sinkhorn_div", height=1.0, half_gap=2.0, spread=0.3, solver_tol=1e-6,
                    solver_max_iter=1000, snapshot_every=None, seed=0, src=None, tgt=None) -> list:
    """One flow per ``tau`` from the same start; purity needs labelled sources."""
    if src is None or tgt is None:
        src, tgt = flow_scene(n, frac, height, half_gap, spread, seed)
    out = []
    for tau in taus:
        tau = parse_tau(tau)
        cfg = SolverConfig(epsilon=epsilon, tau=tau, tol=solver_tol, max_iter=solver_max_iter)
        fc = FlowConfig(lr, iterations, MinibatchScheme(m, k, seed), loss, cfg, snapshot_every)
        traj = euler_flow(src, tgt, fc)
        purity = cluster_purity(traj.final, src.labels, half_gap, height) if src.labels is not None else math.nan
        out.append({"tau": tau, "trajectory": traj, "purity": purity, "source": src, "target": tgt})
    return out


# ---------------------------------------------------------------- jumbot


def jumbot_experiment(scenario="label_shift", n_src=2000, n_tgt=2000, target_proportions=(0.6, 0.3, 0.1),
                      shift=(0.0, 3.0), taus=(1.0, math.inf), epsilon=0.1, eta1=0.1, eta2=0.1, eta3=1.0,
                      lr=0.05, epochs=5, warmup=200, m=60, solver_max_iter=2000, solver_tol=1e-7,
                      seed=0) -> list:
    """Train one model per ``tau`` on the same data and initialization.

    ``scenario="partial"`` drops the last class from the target.
    """
    if scenario not in ("label_shift", "partial"):
        raise ContractViolation(f"unknown scenario {scenario!r}")
    K = len(target_proportions)
    src = make_shifted_blobs(n_src, [1.0 / K] * K, rng.derive_seed(seed, 0, 0x7A))
    present = list(range(K - 1)) if scenario == "partial" else None
    tgt = make_shifted_blobs(n_tgt, target_proportions, rng.derive_seed(seed, 1, 0x7A), shift=shift, present=present)
    out = []
    for tau in taus:
        tau = parse_tau(tau)
        cfg = JumbotConfig(eta1=eta1, eta2=eta2, eta3=eta3,
                           solver=SolverConfig(epsilon=epsilon, tau=tau, max_iter=solver_max_iter, tol=solver_tol),
                           scheme=MinibatchScheme(m=m, k=1, seed=seed), lr=lr, epochs=epochs, warmup=warmup,
                           seed=seed)
        model = TinyClassifier(src.points.dim, K, cfg.width, cfg.emb, seed=seed)
        report = train(model, src, tgt, cfg)
        out.append({"tau": tau, "report": report})
    return out
