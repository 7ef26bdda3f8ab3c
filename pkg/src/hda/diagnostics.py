"""Measurements on trained or training HDAN models.

Nongaussianity (excess kurtosis), cosine similarity between output parts,
heuristic-head ranges, domain probes, disagreement risks with the algebraic
bound identities, and target accuracy. Everything here works on detached
numpy arrays and never touches model gradients.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .hdan import ForwardOut, HdanModel, forward


class DegenerateInputError(ValueError):
    """Input has too few rows or no non-constant column."""


def _arr(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


# ---------------------------------------------------------------------------
# nongaussianity


def kurtosis(x) -> float:
    """Excess kurtosis per column, averaged over non-degenerate columns.

    Each column is normalized to zero mean and unit variance and scored as
    ``E[N^4] - 3 E[N^2]^2``. Columns with variance below 1e-12 are skipped.
    """
    x = _arr(x)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 4:
        raise DegenerateInputError(f"kurtosis needs at least 4 rows, got {x.shape[0]}")
    kurt, valid = kernels.column_kurtosis(x)
    if not np.any(valid):
        raise DegenerateInputError("kurtosis: every column is constant")
    return float(np.asarray(kurt)[valid].mean())


def nongauss_gap(f, g) -> float:
    """Signed difference ``kurt(f) - kurt(g)``."""
    return kurtosis(f) - kurtosis(g)


# ---------------------------------------------------------------------------
# similarity and ranges

COSINE_EPS = 1e-12


def cosine(a, b, return_flag: bool = False):
    """Cosine similarity of two vectors; 0 (flagged degenerate) if either norm is ~0."""
    a = _arr(a).reshape(-1)
    b = _arr(b).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < COSINE_EPS or nb < COSINE_EPS:
        return (0.0, True) if return_flag else 0.0
    c = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return (c, False) if return_flag else c


def batch_cosine(a, b) -> float:
    """Mean over rows of the per-row cosine similarity; degenerate rows count as 0."""
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"batch_cosine: shapes differ {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na >= COSINE_EPS) & (nb >= COSINE_EPS)
    dots = (a * b).sum(axis=1)
    per_row = np.where(ok, dots / np.where(ok, na * nb, 1.0), 0.0)
    return float(np.clip(per_row, -1.0, 1.0).mean())


def head_diagnostics(fw: ForwardOut):
    """Per-head mean absolute output and the pairwise batch-cosine matrix."""
    parts = [_arr(h) for h in fw.h_parts]
    m = len(parts)
    ranges = np.array([np.abs(h).mean() for h in parts])
    pair = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            pair[i, j] = pair[j, i] = batch_cosine(parts[i], parts[j])
    return ranges, pair


def mean_pair_cos(pair: np.ndarray) -> float:
    """Mean off-diagonal entry; the lone diagonal entry when there is one head."""
    m = pair.shape[0]
    if m == 0:
        return 0.0
    if m == 1:
        return float(pair[0, 0])
    return float(pair[~np.eye(m, dtype=bool)].mean())


# ---------------------------------------------------------------------------
# domain probe

PROBE_HIDDEN = 16
PROBE_EPOCHS = 200
PROBE_LR = 0.1
PROBE_TRAIN_FRACTION = 0.8


@dataclass
class Probe:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def _standardize(self, x):
        return (x - self.mean) / self.scale

    def predict(self, x) -> np.ndarray:
        return kernels.probe_predict(self._standardize(_arr(x)), self.w1, self.b1, self.w2, self.b2)

    def predict_proba(self, x) -> np.ndarray:
        z = np.tanh(self._standardize(_arr(x)) @ self.w1 + self.b1)
        s = z @ self.w2 + self.b2
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)


def fit_probe(x, labels, num_classes: int, seed, hidden: int = PROBE_HIDDEN,
              epochs: int = PROBE_EPOCHS, lr: float = PROBE_LR) -> Probe:
    """Train a fresh one-hidden-layer tanh classifier by full-batch gradient descent.

    Inputs are standardized with statistics of ``x`` itself.
    """
    x = _arr(x)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    d = x.shape[1]
    w1 = rng.normal(size=(d, hidden)) / np.sqrt(d)
    b1 = np.zeros(hidden)
    w2 = rng.normal(size=(hidden, num_classes)) / np.sqrt(hidden)
    b2 = np.zeros(num_classes)
    kernels.probe_train((x - mu) / sd, labels, w1, b1, w2, b2, epochs, lr)
    return Probe(w1, b1, w2, b2, mu, sd)


def domain_probe(reps, domain_labels, seed=0, hidden: int = PROBE_HIDDEN,
                 epochs: int = PROBE_EPOCHS, lr: float = PROBE_LR) -> float:
    """Held-out accuracy of a fresh probe predicting domain identity from ``reps``.

    The probe trains on a seeded 80% of rows and is scored on the other 20%.
    """
    reps = _arr(reps)
    if reps.ndim == 1:
        reps = reps[:, None]
    domains, y = np.unique(np.asarray(domain_labels), return_inverse=True)
    if domains.size < 2:
        raise ValueError("domain_probe: need at least two domains")
    if reps.shape[0] != y.shape[0]:
        raise ValueError(f"domain_probe: {reps.shape[0]} rows but {y.shape[0]} labels")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(reps.shape[0])
    n_train = int(round(PROBE_TRAIN_FRACTION * reps.shape[0]))
    tr, te = perm[:n_train], perm[n_train:]
    probe = fit_probe(reps[tr], y[tr], domains.size, rng, hidden=hidden, epochs=epochs, lr=lr)
    return float(np.mean(probe.predict(reps[te]) == y[te]))


# ---------------------------------------------------------------------------
# risks and bound algebra


def disagreement_risk(f1, f2) -> float:
    """Mean over samples of the mean absolute difference between two outputs."""
    a, b = _arr(f1), _arr(f2)
    if a.shape != b.shape:
        raise ValueError(f"disagreement_risk: shapes differ {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def risk(outputs, labels) -> float:
    """Disagreement between probability outputs and one-hot labels."""
    p = _arr(outputs)
    onehot = np.zeros_like(p)
    onehot[np.arange(p.shape[0]), np.asarray(labels, dtype=np.intp)] = 1.0
    return disagreement_risk(p, onehot)


@dataclass
class BoundReport:
    k: float
    identity_residual: float
    risk_g: float
    risk_f: float
    scaled_risk_f: float
    ratio: Optional[float]
    holds: bool


def bound_identity_check(f, f_star, k: float, tol: float = 1e-12) -> BoundReport:
    """Check the decomposition algebra for ``h = k (f - f*)``, ``g = f - h``, ``g* = f*``.

    Verifies ``(1 - k)(f - f*) == g - g*`` elementwise and reports the
    disagreement scaling ``risk(g, g*) == (1 - k) risk(f, f*)``.
    """
    if not 0.0 < k <= 1.0:
        raise ValueError(f"bound_identity_check: k must lie in (0, 1], got {k}")
    f, f_star = _arr(f), _arr(f_star)
    if f.shape != f_star.shape:
        raise ValueError(f"bound_identity_check: shapes differ {f.shape} vs {f_star.shape}")
    diff = f - f_star
    h = k * diff
    # same as f - h, but rounds to exactly f_star when k == 1
    g = f_star + (1.0 - k) * diff
    g_star = f_star
    lhs = (1.0 - k) * diff
    rhs = g - g_star
    scale = max(1.0, float(np.abs(f).max(initial=0.0)), float(np.abs(f_star).max(initial=0.0)))
    residual = max(float(np.abs(lhs - rhs).max(initial=0.0)),
                   float(np.abs(g + h - f).max(initial=0.0)))
    risk_g = disagreement_risk(g, g_star)
    risk_f = disagreement_risk(f, f_star)
    scaled = (1.0 - k) * risk_f
    ratio = risk_g / risk_f if risk_f > 0 else None
    holds = residual <= tol * scale and abs(risk_g - scaled) <= tol * max(1.0, risk_f)
    return BoundReport(k, residual, risk_g, risk_f, scaled, ratio, holds)


@dataclass
class BoundTerms:
    """Empirical terms of the target-risk bound for ``F`` and for ``G``.

    ``f_star`` outputs come from an oracle classifier trained on pooled
    labeled data (evaluation labels included), standing in for the ideal
    joint hypothesis.
    """

    eps_s_f: float
    eps_t_f: float
    eps_s_g: float
    eps_t_g: float
    eps_s_star: float
    eps_t_star: float
    dis_s_f: float
    dis_t_f: float
    dis_s_g: float
    dis_t_g: float
    k: float

    def rhs_f(self) -> float:
        return self.eps_s_f + self.eps_s_star + self.eps_t_star + abs(self.dis_s_f - self.dis_t_f)

    def rhs_g(self) -> float:
        return self.eps_s_g + self.eps_s_star + self.eps_t_star + abs(self.dis_s_g - self.dis_t_g)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rhs_f"] = self.rhs_f()
        d["rhs_g"] = self.rhs_g()
        return d


def _probs(logits: np.ndarray) -> np.ndarray:
    s = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def estimate_k(h, f, f_star) -> float:
    """Least-squares coefficient of ``h`` on ``f - f*``, clipped into (0, 1]."""
    h, diff = _arr(h).reshape(-1), (_arr(f) - _arr(f_star)).reshape(-1)
    denom = diff @ diff
    if denom <= 0:
        return 1.0
    return float(np.clip((h @ diff) / denom, 1e-12, 1.0))


def bound_terms(model: HdanModel, x_s, y_s, x_t, y_t, seed=0) -> BoundTerms:
    """Evaluate every empirical term of the source/target bound on probabilities."""
    x_s, x_t = _arr(x_s), _arr(x_t)
    y_s, y_t = np.asarray(y_s), np.asarray(y_t)
    oracle = fit_probe(np.concatenate([x_s, x_t]), np.concatenate([y_s, y_t]),
                       model.num_classes, seed)
    star_s, star_t = oracle.predict_proba(x_s), oracle.predict_proba(x_t)
    fw_s, fw_t = forward(model, x_s), forward(model, x_t)
    pf_s, pf_t = _probs(fw_s.f.data), _probs(fw_t.f.data)
    pg_s, pg_t = _probs(fw_s.g.data), _probs(fw_t.g.data)
    k = estimate_k(np.concatenate([pf_s - pg_s, pf_t - pg_t]),
                   np.concatenate([pf_s, pf_t]), np.concatenate([star_s, star_t]))
    return BoundTerms(
        eps_s_f=risk(pf_s, y_s), eps_t_f=risk(pf_t, y_t),
        eps_s_g=risk(pg_s, y_s), eps_t_g=risk(pg_t, y_t),
        eps_s_star=risk(star_s, y_s), eps_t_star=risk(star_t, y_t),
        dis_s_f=disagreement_risk(pf_s, star_s), dis_t_f=disagreement_risk(pf_t, star_t),
        dis_s_g=disagreement_risk(pg_s, star_s), dis_t_g=disagreement_risk(pg_t, star_t),
        k=k,
    )


# ---------------------------------------------------------------------------
# accuracy and per-epoch record


def accuracy_from_logits(logits, labels) -> float:
    return float(np.mean(np.argmax(_arr(logits), axis=1) == np.asarray(labels)))


def target_accuracy(model: HdanModel, target_eval) -> float:
    """Top-1 accuracy of ``argmax G(x)`` on a labeled evaluation set."""
    if target_eval.y is None:
        raise ValueError(f"target_accuracy: evaluation set {target_eval.name!r} is unlabeled")
    return accuracy_from_logits(forward(model, target_eval.x).g.data, target_eval.y)


@dataclass
class MetricsRecord:
    epoch: int
    l_cls: float
    l_trans: float
    l_h: float
    cos_gh: float
    kurt_f: float
    kurt_g: float
    kurt_gap: float
    h_part_ranges: List[float]
    head_pair_cos: float
    probe_acc_g: float
    probe_acc_h: float
    target_acc: float
    extra: dict = field(default_factory=dict)

    @staticmethod
    def columns(M: int) -> list:
        return (["epoch", "l_cls", "l_trans", "l_h", "cos_gh", "kurt_f", "kurt_g", "kurt_gap"]
                + [f"h_range_{k}" for k in range(1, M + 1)]
                + ["head_pair_cos", "probe_acc_g", "probe_acc_h", "target_acc"])

    def row(self) -> list:
        return ([self.epoch, self.l_cls, self.l_trans, self.l_h, self.cos_gh,
                 self.kurt_f, self.kurt_g, self.kurt_gap]
                + list(self.h_part_ranges)
                + [self.head_pair_cos, self.probe_acc_g, self.probe_acc_h, self.target_acc])


def child_seed(seed, i: int) -> np.random.SeedSequence:
    """The ``i``-th child of ``seed`` without advancing any spawn counter."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,))


def _safe_kurtosis(x) -> float:
    try:
        return kurtosis(x)
    except DegenerateInputError:
        return 0.0


def measure(model: HdanModel, task, epoch: int, losses: dict, M: int, probe_seed=0) -> MetricsRecord:
    """Evaluate every per-epoch diagnostic on the full task data."""
    pools = list(task.sources) + [task.target_unlabeled]
    x_all = np.concatenate([d.x for d in pools])
    dom_all = np.concatenate([np.full(len(d), d.domain_id) for d in pools])
    fw = forward(model, x_all)
    f, g, h = fw.f.data, fw.g.data, fw.h_total.data
    kf, kg = _safe_kurtosis(f), _safe_kurtosis(g)
    if fw.h_parts:
        ranges, pair = head_diagnostics(fw)
    else:
        ranges, pair = np.zeros(0), np.zeros((0, 0))
    ranges = list(ranges) + [0.0] * (M - len(ranges))
    seed_g, seed_h = child_seed(probe_seed, 0), child_seed(probe_seed, 1)
    return MetricsRecord(
        epoch=epoch,
        l_cls=losses.get("l_cls", 0.0),
        l_trans=losses.get("l_trans", 0.0),
        l_h=losses.get("l_h", 0.0),
        cos_gh=batch_cosine(g, h),
        kurt_f=kf,
        kurt_g=kg,
        kurt_gap=kf - kg,
        h_part_ranges=[float(r) for r in ranges],
        head_pair_cos=mean_pair_cos(pair),
        probe_acc_g=domain_probe(g, dom_all, seed_g),
        probe_acc_h=domain_probe(h, dom_all, seed_h),
        target_acc=target_accuracy(model, task.target_eval),
        extra={"mean_abs_h": float(np.abs(h).mean())},
    )
