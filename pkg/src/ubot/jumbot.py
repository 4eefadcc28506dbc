"""Toy joint unbalanced minibatch OT (JUMBOT) for domain adaptation.

A small tanh network embeds both domains; a linear head classifies. Each step
minimizes source cross-entropy plus ``eta3`` times the UOT loss between a
stratified source batch and a target batch under the joint cost::

    C_ij = eta1 |g(x_i^s) - g(x_j^t)|^2 + eta2 CE(y_i^s, softmax(f(g(x_j^t))))

The inner plan is treated as a constant when differentiating (envelope
gradient), so ``dLoss/dC = eta3 * plan``.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, NumericalFailure
from .measures import CostMatrix, PointCloud, as_points
from .minibatch import MinibatchScheme, cross_label_mass
from .solvers import SolverConfig, TransportPlan, solve, uot_energy

PROB_FLOOR = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class LabeledDataset:
    points: PointCloud
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        pts = self.points if isinstance(self.points, PointCloud) else PointCloud(self.points)
        object.__setattr__(self, "points", pts)
        lab = np.array(self.labels, dtype=np.int64)
        if lab.shape != (pts.n,):
            raise ContractViolation(f"expected {pts.n} labels, got shape {lab.shape}")
        if lab.size and (lab.min() < 0 or lab.max() >= self.n_classes):
            raise ContractViolation(f"labels must lie in [0, {self.n_classes})")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def X(self) -> np.ndarray:
        return self.points.points

    @property
    def n(self) -> int:
        return self.points.n

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


class TinyClassifier:
    """Two tanh layers to an ``emb``-dimensional embedding, then a linear head."""

    def __init__(self, dim: int, n_classes: int, width: int = 32, emb: int = 8, seed: int = 0):
        gen = np.random.default_rng([seed, 0x4D4F44])

        def glorot(fan_in, fan_out):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return gen.uniform(-lim, lim, size=(fan_in, fan_out))

        self.params = {
            "W1": glorot(dim, width), "b1": np.zeros(width),
            "W2": glorot(width, emb), "b2": np.zeros(emb),
            "W3": glorot(emb, n_classes), "b3": np.zeros(n_classes),
        }

    @property
    def n_classes(self) -> int:
        return self.params["W3"].shape[1]

    def forward(self, X):
        p = self.params
        H = np.tanh(X @ p["W1"] + p["b1"])
        E = np.tanh(H @ p["W2"] + p["b2"])
        Z = E @ p["W3"] + p["b3"]
        return E, Z, (X, H, E)

    def embed(self, X) -> np.ndarray:
        return self.forward(X)[0]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.forward(X)[1], axis=1)

    def backward(self, cache, dE, dZ) -> dict:
        """Parameter gradients given upstream gradients on embeddings and logits."""
        p = self.params
        X, H, E = cache
        grads = {"W3": E.T @ dZ, "b3": dZ.sum(axis=0)}
        dE = dE + dZ @ p["W3"].T
        dA2 = dE * (1.0 - E * E)
        grads["W2"] = H.T @ dA2
        grads["b2"] = dA2.sum(axis=0)
        dA1 = (dA2 @ p["W2"].T) * (1.0 - H * H)
        grads["W1"] = X.T @ dA1
        grads["b1"] = dA1.sum(axis=0)
        return grads

    def copy(self) -> "TinyClassifier":
        out = TinyClassifier.__new__(TinyClassifier)
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out

    def to_dict(self) -> dict:
        return {k: self.params[k].tolist() for k in PARAM_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "TinyClassifier":
        out = cls.__new__(cls)
        out.params = {k: np.array(d[k], dtype=np.float64) for k in PARAM_NAMES}
        return out

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")


def softmax(Z) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    e = np.exp(Z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels, n_classes) -> np.ndarray:
    return np.eye(n_classes)[np.asarray(labels, dtype=np.int64)]


def _sq_dists(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def joint_cost(src_emb, src_onehot, tgt_logits, tgt_emb, eta1: float, eta2: float) -> CostMatrix:
    """Embedding distance plus clamped cross-entropy of target predictions."""
    src_emb, tgt_emb = np.asarray(src_emb, float), np.asarray(tgt_emb, float)
    src_onehot, tgt_logits = np.asarray(src_onehot, float), np.asarray(tgt_logits, float)
    if src_emb.shape[1] != tgt_emb.shape[1]:
        raise ContractViolation(f"embedding dims differ: {src_emb.shape[1]} vs {tgt_emb.shape[1]}")
    if src_onehot.shape != (src_emb.shape[0], tgt_logits.shape[1]) or tgt_logits.shape[0] != tgt_emb.shape[0]:
        raise ContractViolation("label / logit shapes do not match the embeddings")
    neg_log_p = -np.log(np.maximum(softmax(tgt_logits), PROB_FLOOR))
    return CostMatrix(eta1 * _sq_dists(src_emb, tgt_emb) + eta2 * (src_onehot @ neg_log_p.T))


def _joint_cost_backward(G, Es, Ys, Zt, Et, eta1, eta2):
    """Pull ``dLoss/dC = G`` back to source embeddings, target embeddings and logits."""
    rows, cols = G.sum(axis=1), G.sum(axis=0)
    dEs = 2.0 * eta1 * (rows[:, None] * Es - G @ Et)
    dEt = 2.0 * eta1 * (cols[:, None] * Et - G.T @ Es)
    P = softmax(Zt)
    live = P >= PROB_FLOOR  # clamped probabilities are constant
    W = -eta2 * (G.T @ Ys) * live
    dZt = W - P * W.sum(axis=1, keepdims=True)
    return dEs, dEt, dZt


@dataclass(frozen=True)
class JumbotConfig:
    eta1: float = 0.1
    eta2: float = 0.1
    eta3: float = 1.0
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(epsilon=0.1, tau=1.0, max_iter=2000, tol=1e-7))
    scheme: MinibatchScheme = field(default_factory=lambda: MinibatchScheme(m=60, k=1))
    lr: float = 0.05
    epochs: int = 10
    warmup: int = 200
    width: int = 32
    emb: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.eta1, self.eta2, self.eta3) < 0 or not self.eta1 + self.eta2 > 0:
            raise ContractViolation("eta1, eta2, eta3 must be nonnegative with eta1 + eta2 > 0")
        if not self.lr > 0:
            raise ContractViolation("lr must be positive")
        if self.scheme.k != 1:
            raise ContractViolation("training draws one minibatch pair per step (k = 1)")
        if self.epochs < 0 or self.warmup < 0:
            raise ContractViolation("epochs and warmup must be nonnegative")


@dataclass
class LossParts:
    value: float
    source_ce: float
    transfer: float
    plan: TransportPlan | None
    converged: bool


def _source_ce(Zs, Ys):
    Zc = Zs - Zs.max(axis=1, keepdims=True)
    logp = Zc - np.log(np.exp(Zc).sum(axis=1, keepdims=True))
    ce = -float(np.sum(Ys * logp)) / Zs.shape[0]
    return ce, (softmax(Zs) - Ys) / Zs.shape[0]


def objective_and_grads(model: TinyClassifier, Xs, ys, Xt, cfg: JumbotConfig, plan=None):
    """Objective value and parameter gradients for one batch pair.

    With ``plan=None`` the inner UOT problem is solved; otherwise the given
    plan is held fixed and the transfer term is its primal energy, which makes
    the returned gradients exact for the returned value.
    """
    K = model.n_classes
    Ys = one_hot(ys, K)
    Es, Zs, cache_s = model.forward(Xs)
    Et, Zt, cache_t = model.forward(Xt)
    ce, dZs = _source_ce(Zs, Ys)
    grads = model.backward(cache_s, np.zeros_like(Es), dZs)
    if cfg.eta3 == 0:
        return LossParts(ce, ce, 0.0, None, True), grads
    C = joint_cost(Es, Ys, Zt, Et, cfg.eta1, cfg.eta2).entries
    a = np.full(Xs.shape[0], 1.0 / Xs.shape[0])
    b = np.full(Xt.shape[0], 1.0 / Xt.shape[0])
    eps, tau = cfg.solver.epsilon, cfg.solver.tau
    if plan is None:
        res = solve(a, b, C, cfg.solver)
        P, transfer, converged = res.plan.entries, res.cost, res.converged
    else:
        P = plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, float)
        transfer, converged = uot_energy(P, a, b, C, eps, tau), True
    dEs, dEt, dZt = _joint_cost_backward(cfg.eta3 * P, Es, Ys, Zt, Et, cfg.eta1, cfg.eta2)
    g_s = model.backward(cache_s, dEs, np.zeros_like(Zs))
    g_t = model.backward(cache_t, dEt, dZt)
    for k in grads:
        grads[k] = grads[k] + g_s[k] + g_t[k]
    value = ce + cfg.eta3 * transfer
    return LossParts(value, ce, transfer, TransportPlan(P), converged), grads


def jumbot_loss(model: TinyClassifier, src_batch, tgt_batch, cfg: JumbotConfig):
    """``(objective, plan)`` for a source batch ``(X, y)`` and a target batch ``X``."""
    Xs, ys = src_batch
    parts, _ = objective_and_grads(model, np.asarray(Xs, float), ys, as_points(tgt_batch), cfg)
    return parts.value, parts.plan


def stratified_sampler(labels, per_class: int, seed: int, n_classes: int | None = None):
    """Endless stream of batches with exactly ``per_class`` indices of every class."""
    labels = np.asarray(labels, dtype=np.int64)
    K = int(labels.max()) + 1 if n_classes is None else n_classes
    pools = [np.flatnonzero(labels == c) for c in range(K)]
    small = [c for c, p in enumerate(pools) if p.size < per_class]
    if small:
        raise ContractViolation(f"classes {small} have fewer than {per_class} samples")
    gen = np.random.default_rng([seed, 0x535452])
    while True:
        yield np.concatenate([gen.choice(p, size=per_class, replace=False) for p in pools])


@dataclass
class TrainingReport:
    rows: list  # one dict per epoch
    model: TinyClassifier

    COLUMNS = ("epoch", "src_acc", "tgt_acc", "transfer_term", "cross_label_mass")

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.rows:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in self.COLUMNS[1:]])


def accuracy(model: TinyClassifier, data: LabeledDataset) -> float:
    return float(np.mean(model.predict(data.X) == data.labels))


def _sgd(model, grads, lr):
    for k, g in grads.items():
        model.params[k] -= lr * g


def train(model: TinyClassifier, src: LabeledDataset, tgt: LabeledDataset, cfg: JumbotConfig) -> TrainingReport:
    """Source-only warmup, then epochs of joint training over the target set.

    Target labels are used only for the report (accuracy and cross-label
    mass of the plans), never for training.
    """
    K = src.n_classes
    per_class = cfg.scheme.m // K
    if per_class < 1:
        raise ContractViolation(f"batch size {cfg.scheme.m} is smaller than the number of classes {K}")
    m_t = cfg.scheme.m
    if m_t > tgt.n:
        raise ContractViolation(f"target batch size {m_t} exceeds target size {tgt.n}")
    sampler = stratified_sampler(src.labels, per_class, cfg.seed, K)
    perm_gen = np.random.default_rng([cfg.seed, 0x544754])
    Xs_all, Xt_all = src.X, tgt.X
    warm = JumbotConfig(**{**cfg.__dict__, "eta3": 0.0})
    for it in range(cfg.warmup):
        idx = next(sampler)
        parts, grads = objective_and_grads(model, Xs_all[idx], src.labels[idx], Xt_all[:1], warm)
        _check(parts, it, "warmup")
        _sgd(model, grads, cfg.lr)
    rows = [{"epoch": 0, "src_acc": accuracy(model, src), "tgt_acc": accuracy(model, tgt),
             "transfer_term": float("nan"), "cross_label_mass": float("nan")}]
    for epoch in range(1, cfg.epochs + 1):
        order = perm_gen.permutation(tgt.n)
        transfers, clm = [], []
        for start in range(0, tgt.n - m_t + 1, m_t):
            jdx = order[start:start + m_t]
            idx = next(sampler)
            parts, grads = objective_and_grads(model, Xs_all[idx], src.labels[idx], Xt_all[jdx], cfg)
            _check(parts, epoch, "epoch")
            _sgd(model, grads, cfg.lr)
            transfers.append(parts.transfer)
            if parts.plan is not None:
                clm.append(cross_label_mass(parts.plan, src.labels[idx], tgt.labels[jdx]))
        rows.append({
            "epoch": epoch,
            "src_acc": accuracy(model, src),
            "tgt_acc": accuracy(model, tgt),
            "transfer_term": float(np.mean(transfers)) if transfers else float("nan"),
            "cross_label_mass": float(np.mean(clm)) if clm else float("nan"),
        })
    return TrainingReport(rows, model)


def _check(parts, step, phase):
    if not math.isfinite(parts.value):
        raise NumericalFailure(
            f"non-finite objective during {phase} {step}: source CE {parts.source_ce!r}, transfer {parts.transfer!r}"
        )


def make_shifted_blobs(n: int, proportions, seed: int, shift=(0.0, 0.0), spread: float = 0.5,
                       radius: float = 2.0, present=None) -> LabeledDataset:
    """Gaussian classes centred on a circle, translated by ``shift``.

    Class counts follow ``proportions``; ``present`` (a list of class ids)
    drops the remaining classes before the proportions are renormalized.
    """
    props = np.asarray(proportions, dtype=np.float64)
    K = props.size
    if present is not None:
        keep = np.zeros(K, dtype=bool)
        keep[list(present)] = True
        props = np.where(keep, props, 0.0)
    if np.any(props < 0) or props.sum() <= 0:
        raise ContractViolation("class proportions must be nonnegative with a positive sum")
    props = props / props.sum()
    counts = np.floor(props * n).astype(int)
    counts[np.argmax(props)] += n - counts.sum()
    gen = np.random.default_rng([seed, 0x424C42])
    angles = 2 * np.pi * np.arange(K) / K
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1) + np.asarray(shift, float)
    labels = np.repeat(np.arange(K), counts)
    pts = centres[labels] + spread * gen.standard_normal((n, 2))
    order = gen.permutation(n)
    return LabeledDataset(PointCloud(pts[order]), labels[order], K)


def make_rotated_ring(n: int, proportions, seed: int, angle: float = 0.0, noise: float = 0.1,
                      present=None) -> LabeledDataset:
    """Unit ring split into ``K`` angular sectors (one per class), rotated by ``angle``."""
    props = np.asarray(proportions, dtype=np.float64)
    K = props.size
    if present is not None:
        keep = np.zeros(K, dtype=bool)
        keep[list(present)] = True
        props = np.where(keep, props, 0.0)
    if np.any(props < 0) or props.sum() <= 0:
        raise ContractViolation("class proportions must be nonnegative with a positive sum")
    props = props / props.sum()
    counts = np.floor(props * n).astype(int)
    counts[np.argmax(props)] += n - counts.sum()
    gen = np.random.default_rng([seed, 0x524E47])
    labels = np.repeat(np.arange(K), counts)
    theta = 2 * np.pi * (labels + gen.uniform(0.1, 0.9, n)) / K + angle
    r = 1.0 + noise * gen.standard_normal(n)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    order = gen.permutation(n)
    return LabeledDataset(PointCloud(pts[order]), labels[order], K)
