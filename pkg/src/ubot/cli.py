"""Command line harness: ``ubot <experiment> --config cfg.json --seed S --out DIR``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import experiments as ex
from .errors import ContractViolation, NumericalFailure
from .measures import as_points, build_cost, load_point_cloud_csv
from .minibatch import cross_label_mass
from .solvers import SolverConfig, solve
from .svg import PALETTE, Figure

EXPERIMENTS = ("outlier", "plan-viz", "concentration", "flow", "jumbot", "solve")

PAPER_SCALE = {
    "flow": {"n": 10000, "iterations": 5000},
    "concentration": {"settings": [[60, 5, 50], [100, 10, 100], [200, 10, 1000]]},
    "outlier": {"reps": 20},
}


def load_schema() -> dict:
    return json.loads(resources.files("ubot").joinpath("config_schema.json").read_text())


def validate(experiment: str, params: dict) -> None:
    schema = load_schema()
    sub = dict(schema["definitions"][experiment])
    sub["definitions"] = schema["definitions"]
    jsonschema.validate(params, sub)


def _fmt(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    if isinstance(v, (np.floating,)):
        return _fmt(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _taus(values):
    return [ex.parse_tau(t) for t in values]


def _user_clouds(params):
    src = params.pop("source_csv", None)
    tgt = params.pop("target_csv", None)
    if (src is None) != (tgt is None):
        raise ContractViolation("give both source_csv and target_csv or neither")
    if src is None:
        return None, None
    return load_point_cloud_csv(src), load_point_cloud_csv(tgt)


# ---------------------------------------------------------------- runners


def run_outlier(params, seed, out: Path) -> None:
    if "ks" in params:
        params["ks"] = tuple(params["ks"])
    if "losses" in params:
        params["losses"] = tuple(params["losses"])
    recs = ex.outlier_experiment(seed=seed, **params)
    write_csv(out / "outlier.csv", ["distance", "loss", "k", "mean", "std"], recs)
    fig = Figure(title="loss vs outlier distance")
    fig.log_x = True
    fig.axis_labels("outlier distance (log scale)", "loss")
    series = {}
    for r in recs:
        series.setdefault((r["loss"], r["k"]), []).append((r["distance"], r["mean"]))
    for idx, ((loss, k), pts) in enumerate(sorted(series.items())):
        if loss in ("ot-balanced", "sinkhorn-div-balanced", "mb-ot"):
            continue  # off scale next to the plateaued curves
        xs, ys = zip(*pts)
        name = loss if k == 0 else f"{loss} k={k}"
        fig.line(xs, ys, PALETTE[idx % len(PALETTE)], name, dashed=loss == "uot-bound")
    fig.save(out / "outlier.svg")


def _plan_figure(src, tgt, P, title):
    fig = Figure(title=title)
    top = P.max() if P.size and P.max() > 0 else 1.0
    segs = []
    for i, j in zip(*np.nonzero(P / top > 1e-3)):
        x0, y0 = src.points[i]
        x1, y1 = tgt.points[j]
        segs.append((x0, y0, x1, y1, P[i, j] / top))
    if segs:
        fig.segments(segs)
    for cloud, shade in ((src, 0), (tgt, 2)):
        for c in sorted(set(cloud.labels.tolist())):
            fig.scatter(cloud.points[cloud.labels == c], PALETTE[(shade + c) % len(PALETTE)], r=4)
    return fig


def run_plan_viz(params, seed, out: Path) -> None:
    src, tgt = _user_clouds(params)
    if "taus" in params:
        params["taus"] = tuple(params["taus"])
    for key in ("ms", "n_src", "n_tgt"):
        if key in params:
            params[key] = tuple(params[key])
    res = ex.plan_viz_experiment(seed=seed, src=src, tgt=tgt, **params)
    src, tgt = res["source"], res["target"]
    plan_rows, summary = [], []
    for (method, m, tau), P in res["plans"].items():
        top = P.max() if P.max() > 0 else 1.0
        for i in range(P.shape[0]):
            for j in range(P.shape[1]):
                plan_rows.append({"method": method, "m": m, "tau": tau, "i": i, "j": j,
                                  "value": float(P[i, j]), "normalized": float(P[i, j] / top)})
        summary.append({"method": method, "m": m, "tau": tau, "mass": float(P.sum()),
                        "cross_label_mass": cross_label_mass(P, src.labels, tgt.labels)})
        _plan_figure(src, tgt, P, f"{method} m={m} tau={ex.tau_label(tau)}").save(out / f"plan_{method}_m{m}.svg")
    write_csv(out / "plans.csv", ["method", "m", "tau", "i", "j", "value", "normalized"], plan_rows)
    write_csv(out / "plan_summary.csv", ["method", "m", "tau", "mass", "cross_label_mass"], summary)
    write_csv(out / "tau_sweep.csv", ["tau", "mass", "cross_label_mass"], res["tau_sweep"])


def run_concentration(params, seed, out: Path) -> None:
    marginal = params.pop("marginal", None)
    if "settings" in params:
        params["settings"] = [tuple(s) for s in params["settings"]]
    res = ex.concentration_experiment(seed=seed, **params)
    write_csv(out / "concentration.csv", ["n", "m", "k", "rep", "estimate", "deviation", "bound", "within"],
              res["rows"])
    write_csv(out / "concentration_summary.csv", ["n", "m", "k", "reference", "reference_se", "coverage", "delta"],
              res["summary"])
    if marginal is not None:
        mres = ex.marginal_coverage(seed=seed, delta=params.get("delta", 0.05), epsilon=params.get("epsilon", 0.1),
                                    tau=params.get("tau", 1.0), **marginal)
        row = {k: mres[k] for k in ("coverage", "bound", "max_plan_mass", "max_gap")}
        write_csv(out / "marginal_coverage.csv", list(row), [row])


def run_flow(params, seed, out: Path) -> None:
    src, tgt = _user_clouds(params)
    if "taus" in params:
        params["taus"] = tuple(params["taus"])
    runs = ex.flow_experiment(seed=seed, src=src, tgt=tgt, **params)
    frames = out / "frames"
    frames.mkdir(exist_ok=True)
    summary = []
    for run in runs:
        tag = f"tau{ex.tau_label(run['tau'])}"
        traj = run["trajectory"]
        traj.write_snapshots_csv(out / f"trajectory_{tag}.csv")
        traj.write_loss_csv(out / f"loss_{tag}.csv")
        tpts = as_points(run["target"])
        for it, pts in traj.snapshots:
            fig = Figure(title=f"{tag} iteration {it}")
            fig.scatter(tpts, PALETTE[2], r=1.5, opacity=0.4)
            fig.scatter(pts, PALETTE[0], r=1.5, opacity=0.6)
            fig.save(frames / f"{tag}_iter{it:06d}.svg")
        final_loss = traj.losses[-1][1] if traj.losses else math.nan
        summary.append({"tau": run["tau"], "purity": run["purity"], "final_loss": final_loss,
                        "converged": int(traj.converged)})
    write_csv(out / "flow_summary.csv", ["tau", "purity", "final_loss", "converged"], summary)


def run_jumbot(params, seed, out: Path) -> None:
    for key in ("taus", "target_proportions", "shift"):
        if key in params:
            params[key] = tuple(params[key])
    runs = ex.jumbot_experiment(seed=seed, **params)
    summary = []
    for run in runs:
        tag = f"tau{ex.tau_label(run['tau'])}"
        rep = run["report"]
        rep.write_csv(out / f"report_{tag}.csv")
        rep.model.save_json(out / f"model_{tag}.json")
        summary.append({"tau": run["tau"], **{k: rep.final[k] for k in ("src_acc", "tgt_acc", "cross_label_mass")}})
    write_csv(out / "jumbot_summary.csv", ["tau", "src_acc", "tgt_acc", "cross_label_mass"], summary)


def run_solve(params, seed, out: Path) -> None:
    src, tgt = _user_clouds(params)
    if "source" in params or "target" in params:
        if src is not None:
            raise ContractViolation("give points either inline or as CSV, not both")
        src, tgt = as_points(params.pop("source")), as_points(params.pop("target"))
    if "cost" in params:
        if src is not None:
            raise ContractViolation("give either a cost matrix or point clouds")
        C = np.asarray(params.pop("cost"), dtype=np.float64)
    elif src is not None:
        C = build_cost(src, tgt).entries
    else:
        raise ContractViolation("solve needs 'cost' or source/target points")
    n, p = C.shape
    a = np.asarray(params.pop("a", [1.0 / n] * n), dtype=np.float64)
    b = np.asarray(params.pop("b", [1.0 / p] * p), dtype=np.float64)
    cfg = SolverConfig.from_dict(params)
    res = solve(a, b, C, cfg)
    (out / "result.json").write_text(json.dumps(res.to_json_dict(), indent=2) + "\n")


RUNNERS = {
    "outlier": run_outlier,
    "plan-viz": run_plan_viz,
    "concentration": run_concentration,
    "flow": run_flow,
    "jumbot": run_jumbot,
    "solve": run_solve,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ubot", description="Unbalanced minibatch OT experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", type=Path, help="JSON parameter block (defaults when omitted)")
    p.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--paper-scale", action="store_true", help="run at the full-size settings")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if not 0 <= args.seed < 2**64:
            raise ContractViolation("seed must be an unsigned 64-bit integer")
        params = {}
        if args.config is not None:
            params = json.loads(args.config.read_text())
            if not isinstance(params, dict):
                raise ContractViolation("config must be a JSON object")
        if args.paper_scale:
            params = {**params, **PAPER_SCALE.get(args.experiment, {})}
        validate(args.experiment, params)
        args.out.mkdir(parents=True, exist_ok=True)
        RUNNERS[args.experiment](dict(params), args.seed, args.out)
    except (ContractViolation, jsonschema.ValidationError, json.JSONDecodeError, OSError) as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        print(f"ubot: config error: {msg}", file=sys.stderr)
        return 2
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"ubot: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
