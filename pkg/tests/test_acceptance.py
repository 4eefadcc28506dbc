"""Acceptance gate: one PASS/FAIL line per criterion, printed in the terminal summary."""
import math
import statistics
import time
from itertools import combinations, permutations

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, fd5

from ubot.experiments import (
    concentration_experiment,
    flow_experiment,
    jumbot_experiment,
    marginal_coverage,
    outlier_bound,
    outlier_experiment,
    tainted,
)
from ubot.gradients import grad_cost, grad_positions
from ubot.jumbot import PARAM_NAMES, JumbotConfig, TinyClassifier, objective_and_grads
from ubot.measures import build_cost
from ubot.minibatch import MinibatchScheme, averaged_plan, batch_loss, complete_estimator, incomplete_run
from ubot.solvers import (
    SolverConfig,
    exact_balanced_ot,
    sinkhorn_divergence,
    sinkhorn_uot,
    solve,
    uot_primal_oracle,
)


def record(number, title, ok, detail, started):
    elapsed = time.perf_counter() - started
    ACCEPTANCE_LINES.append(f"criterion {number:02d} {title}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f} s)")
    assert ok, detail


def simplex(gen, n):
    w = gen.random(n) + 0.1
    return w / w.sum()


def test_01_oracle_equivalence():
    t0 = time.perf_counter()
    gen = np.random.default_rng(101)
    worst = 0.0
    for i in range(50):
        n, p = (int(v) for v in gen.integers(1, 11, 2))
        tau = (0.1, 1.0, 10.0)[i % 3]
        a, b = simplex(gen, n), simplex(gen, p)
        C = build_cost(gen.random((n, 2)), gen.random((p, 2))).entries
        ref = uot_primal_oracle(a, b, C, tau, epsilon=0.01).cost
        got = sinkhorn_uot(a, b, C, SolverConfig(0.01, tau)).cost
        worst = max(worst, abs(got - ref) / abs(ref))
    ok = worst <= 1e-3 and time.perf_counter() - t0 < 60
    record(1, "oracle equivalence", ok, f"worst relative error {worst:.2e}", t0)


def test_02_single_entry_closed_forms():
    t0 = time.perf_counter()
    worst_sk = worst_or = 0.0
    eps = 0.01
    for c0 in (0.1, 1.0, 10.0):
        for tau in (0.5, 1.0, 5.0):
            s = eps + 2 * tau
            sk = sinkhorn_uot([1.0], [1.0], [[c0]], SolverConfig(eps, tau)).cost
            worst_sk = max(worst_sk, abs(sk - s * (1 - math.exp(-c0 / s))))
            orc = uot_primal_oracle([1.0], [1.0], [[c0]], tau).cost
            worst_or = max(worst_or, abs(orc - 2 * tau * (1 - math.exp(-c0 / (2 * tau)))))
    ok = max(worst_sk, worst_or) <= 1e-6
    record(2, "1x1 closed forms", ok, f"sinkhorn {worst_sk:.2e}, oracle {worst_or:.2e}", t0)


def test_03_exact_limit():
    t0 = time.perf_counter()
    gen = np.random.default_rng(103)
    u = np.full(8, 1 / 8)
    worst = 0.0
    for _ in range(20):
        C = build_cost(gen.random((8, 2)), gen.random((8, 2))).entries
        ent = sinkhorn_uot(u, u, C, SolverConfig.make_balanced(1e-3 * C.mean(), max_iter=100_000)).cost
        exact = exact_balanced_ot(C).cost
        worst = max(worst, abs(ent - exact) / exact)
    brute_ok = True
    for _ in range(5):
        C = gen.random((6, 6))
        brute = min(sum(C[i, s[i]] for i in range(6)) for s in permutations(range(6))) / 6
        brute_ok &= exact_balanced_ot(C).cost == brute
    ok = worst <= 0.02 and brute_ok
    record(3, "exact limit", ok, f"worst relative gap {worst:.2e}, hungarian == brute force: {brute_ok}", t0)


def test_04_divergence_axioms():
    t0 = time.perf_counter()
    gen = np.random.default_rng(104)
    self_gap = asym = 0.0
    lowest = math.inf
    for i in range(200):
        eps = (0.05, 0.5)[i % 2]
        tau = (0.5, math.inf)[(i // 2) % 2]
        cfg = SolverConfig(eps, tau, tol=1e-12, max_iter=100_000)
        n, p = (int(v) for v in gen.integers(1, 9, 2))
        X, Y = gen.standard_normal((n, 2)), gen.standard_normal((p, 2)) + gen.random()
        a, b = gen.random(n) + 0.1, gen.random(p) + 0.1
        if math.isinf(tau):
            a, b = a / a.sum(), b / b.sum()
        self_gap = max(self_gap, abs(sinkhorn_divergence(a, a, X, X, cfg).value))
        s_ab = sinkhorn_divergence(a, b, X, Y, cfg).value
        s_ba = sinkhorn_divergence(b, a, Y, X, cfg).value
        asym = max(asym, abs(s_ab - s_ba))
        lowest = min(lowest, s_ab, s_ba)
    ok = self_gap <= 1e-8 and asym <= 1e-9 and lowest >= 0
    record(4, "divergence axioms", ok, f"|S(a,a)| {self_gap:.1e}, asymmetry {asym:.1e}, min {lowest:.3g}", t0)


def test_05_outlier_bound_and_plateau():
    t0 = time.perf_counter()
    gen = np.random.default_rng(105)
    violations, worst_slack = 0, -math.inf
    for i in range(100):
        n, p = (int(v) for v in gen.integers(2, 13, 2))
        tau = (0.1, 1.0, 10.0)[i % 3]
        X, Y = gen.standard_normal((n, 2)), gen.standard_normal((p, 2))
        direction = gen.standard_normal(2)
        z = direction / np.linalg.norm(direction) * gen.uniform(0, 100)
        lhs = uot_primal_oracle(np.full(n + 1, 1 / (n + 1)), np.full(p, 1 / p), build_cost(tainted(X, z), Y), tau).cost
        slack = lhs - outlier_bound(X, Y, z, tau)
        worst_slack = max(worst_slack, slack)
        violations += slack > 1e-8
    recs = outlier_experiment(distances=np.logspace(1, 2, 5).tolist(), losses=("ot-balanced", "uot"), seed=0)
    uot = [r["mean"] for r in recs if r["loss"] == "uot"]
    ot = [r["mean"] for r in recs if r["loss"] == "ot-balanced"]
    uot_change = (max(uot) - min(uot)) / uot[0]
    ot_growth = ot[-1] / ot[0] - 1
    ok = violations == 0 and uot_change < 0.05 and ot_growth > 0.5 and time.perf_counter() - t0 < 120
    record(5, "outlier robustness", ok, f"violations {violations} (max excess {worst_slack:.1e}), "
           f"uot change {uot_change:.2%}, ot growth {ot_growth:.0%}", t0)


def double_loop(C, m, cfg):
    n = C.shape[0]
    u = np.full(m, 1.0 / m)
    total, count = 0.0, 0
    for I in combinations(range(n), m):
        for J in combinations(range(n), m):
            total += solve(u, u, C[np.ix_(I, J)], cfg).cost
            count += 1
    return total / count


def test_06_minibatch_correctness():
    t0 = time.perf_counter()
    gen = np.random.default_rng(106)
    X, Y = gen.standard_normal((6, 2)), gen.standard_normal((6, 2)) + 1
    C = build_cost(X, Y).entries
    bitwise = all(complete_estimator("uot", X, Y, m, cfg) == double_loop(C, m, cfg)
                  for cfg in (SolverConfig(0.1, 1.0), SolverConfig.make_balanced(0.1))
                  for m in (1, 2, 3))
    cfg = SolverConfig(0.1, 1.0)
    run = incomplete_run("uot", X, Y, MinibatchScheme(2, 10_000, seed=6), cfg)
    z = abs(run.value - complete_estimator("uot", X, Y, 2, cfg)) / (run.std / math.sqrt(run.k))
    exact = SolverConfig(0.0, math.inf)
    marg = 0.0
    for m in (1, 2, 3):
        P = averaged_plan(X, Y, m, exact)
        marg = max(marg, np.abs(P.row_marginal - 1 / 6).max(), np.abs(P.col_marginal - 1 / 6).max())
    ok = bitwise and z <= 3 and marg <= 1e-10
    record(6, "minibatch correctness", ok, f"bitwise {bitwise}, incomplete gap {z:.2f} SE, marginal gap {marg:.1e}", t0)


def test_07_concentration_coverage():
    t0 = time.perf_counter()
    res = concentration_experiment(settings=((60, 5, 50),), reps=500, delta=0.05, seed=0)
    cover = res["summary"][0]["coverage"]
    marg = marginal_coverage(n=6, m=2, k=1000, reps=500, delta=0.05, seed=0)["coverage"]
    ok = cover >= 0.95 and marg >= 0.95 and time.perf_counter() - t0 < 300
    record(7, "concentration coverage", ok, f"deviation coverage {cover:.3f}, marginal coverage {marg:.3f}", t0)


def _check(g, fd, worst):
    mask = np.abs(fd) > 1e-8
    if mask.any():
        worst = max(worst, float(np.max(np.abs(g[mask] - fd[mask]) / np.abs(fd[mask]))))
    return worst


def test_08_gradient_checks():
    t0 = time.perf_counter()
    gen = np.random.default_rng(108)
    combos = [(e, t) for e in (0.05, 0.5) for t in (0.1, 1.0, math.inf)]
    worst_cost = worst_pos = 0.0
    converged = True
    for i in range(50):
        eps, tau = combos[i % len(combos)]
        cfg = SolverConfig(eps, tau, tol=1e-13, max_iter=200_000)
        n, p = (int(v) for v in gen.integers(2, 5, 2))
        # unit-square points keep C / eps moderate so balanced Sinkhorn reaches tol
        X, Y = gen.random((n, 2)), gen.random((p, 2))
        a, b = np.full(n, 1 / n), np.full(p, 1 / p)
        C = build_cost(X, Y).entries
        res = sinkhorn_uot(a, b, C, cfg)
        converged &= res.converged
        fd = np.empty_like(C)
        for idx in np.ndindex(C.shape):
            def cost_at(v, idx=idx):
                Cp = C.copy()
                Cp[idx] = v
                return sinkhorn_uot(a, b, Cp, cfg).cost
            fd[idx] = fd5(cost_at, C[idx], 1e-4)
        worst_cost = _check(grad_cost(res), fd, worst_cost)

        loss = ("uot", "sinkhorn_div")[i % 2]
        wrt = ("X", "Y")[(i // 2) % 2]
        g = grad_positions(loss, X, Y, wrt, cfg).grad
        Z = X if wrt == "X" else Y
        fdp = np.empty_like(Z)
        for idx in np.ndindex(Z.shape):
            def f(v, idx=idx):
                Zp = Z.copy()
                Zp[idx] = v
                return batch_loss(loss, Zp, Y, cfg)[0] if wrt == "X" else batch_loss(loss, X, Zp, cfg)[0]
            fdp[idx] = fd5(f, Z[idx], 1e-3)
        worst_pos = _check(g, fdp, worst_pos)

    Xs, Xt = gen.standard_normal((10, 2)), gen.standard_normal((10, 2)) + 0.3
    ys = np.arange(10) % 3
    model = TinyClassifier(2, 3, width=6, emb=4, seed=8)
    jcfg = JumbotConfig(eta1=0.3, eta2=0.2, eta3=1.5, scheme=MinibatchScheme(10),
                        solver=SolverConfig(0.1, 1.0, tol=1e-12, max_iter=100_000))
    parts, grads = objective_and_grads(model, Xs, ys, Xt, jcfg)
    worst_net = 0.0
    for name in PARAM_NAMES:
        theta = model.params[name]
        fdn = np.empty_like(theta)
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + 1e-4
            up = objective_and_grads(model, Xs, ys, Xt, jcfg, plan=parts.plan)[0].value
            theta[idx] = old - 1e-4
            down = objective_and_grads(model, Xs, ys, Xt, jcfg, plan=parts.plan)[0].value
            theta[idx] = old
            fdn[idx] = (up - down) / 2e-4
        worst_net = _check(grads[name], fdn, worst_net)
    ok = converged and worst_cost <= 1e-4 and worst_pos <= 1e-4 and worst_net <= 1e-3
    record(8, "gradient checks", ok,
           f"grad_cost {worst_cost:.1e}, grad_positions {worst_pos:.1e}, network {worst_net:.1e}", t0)


@pytest.mark.slow
def test_09_flow_cluster_purity():
    t0 = time.perf_counter()
    gaps = []
    for seed in range(5):
        unb, bal = flow_experiment(n=600, iterations=500, m=64, k=1, lr=0.02, taus=(5.0, math.inf), seed=seed)
        gaps.append(unb["purity"] - bal["purity"])
    med = statistics.median(gaps)
    ok = med >= 0.1 and time.perf_counter() - t0 < 600
    record(9, "flow cluster purity", ok, f"median purity gap {med:.3f} over seeds {[round(g, 3) for g in gaps]}", t0)


@pytest.mark.slow
def test_10_jumbot_domain_adaptation():
    t0 = time.perf_counter()
    acc_gap, mass_unb, mass_bal, partial_gap = [], [], [], []
    for seed in range(5):
        unb, bal = (r["report"].final for r in jumbot_experiment("label_shift", seed=seed))
        acc_gap.append(unb["tgt_acc"] - bal["tgt_acc"])
        mass_unb.append(unb["cross_label_mass"])
        mass_bal.append(bal["cross_label_mass"])
        unb, bal = (r["report"].final for r in jumbot_experiment("partial", seed=seed))
        partial_gap.append(unb["tgt_acc"] - bal["tgt_acc"])
    a = statistics.median(acc_gap)
    mu, mb = statistics.median(mass_unb), statistics.median(mass_bal)
    pg = statistics.median(partial_gap)
    ok = a >= 0 and mu < mb and pg >= 0.05 and time.perf_counter() - t0 < 600
    record(10, "jumbot domain adaptation", ok, f"label-shift accuracy gap {a:+.3f}, cross-label mass "
           f"{mu:.3f} vs {mb:.3f}, partial accuracy gap {pg:+.3f}", t0)
