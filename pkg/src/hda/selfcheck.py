"""Built-in correctness checks: finite-difference gradients, bound algebra and
kurtosis closed forms.

``run_selfcheck()`` runs everything and returns a :class:`SelfcheckReport`;
the individual pieces are importable for tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import autodiff as ad
from . import hdan
from .autodiff import Tensor
from .diagnostics import bound_identity_check, kurtosis

PRIMITIVE_TOL = 1e-6
GRAPH_TOL = 1e-4
FD_EPS = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a|| + ||n||, 1e-12)``; zero when both vanish."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central differences of scalar ``fn()`` with respect to ``arr``, perturbed in place."""
    out = np.zeros_like(arr, dtype=np.float64)
    flat, gflat = arr.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return out


# ---------------------------------------------------------------------------
# primitives


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x) * gap + x, x)


def _shape(rng):
    return int(rng.integers(2, 6)), int(rng.integers(1, 5))


def _case_matmul(rng):
    n, k = _shape(rng)
    m = int(rng.integers(1, 5))
    return [rng.normal(size=(n, k)), rng.normal(size=(k, m))], lambda a, b: ad.matmul(a, b)


def _binary(op):
    def case(rng):
        shape = _shape(rng)
        if rng.random() < 0.3:
            return [rng.normal(size=shape), rng.normal(size=())], op
        return [rng.normal(size=shape), rng.normal(size=shape)], op
    return case


def _unary(op, sample=None):
    def case(rng):
        shape = _shape(rng)
        x = sample(rng, shape) if sample else rng.normal(size=shape)
        return [x], op
    return case


def _case_scale(rng):
    c = float(rng.normal())
    return [rng.normal(size=_shape(rng))], lambda x: ad.scale(x, c)


def _case_add_bias(rng):
    n, d = _shape(rng)
    return [rng.normal(size=(n, d)), rng.normal(size=d)], ad.add_bias


def _case_take_rows(rng):
    n, d = _shape(rng)
    idx = rng.integers(0, n, size=int(rng.integers(1, 2 * n)))
    return [rng.normal(size=(n, d))], lambda x: ad.take_rows(x, idx)


def _case_concat(rng):
    d = int(rng.integers(1, 4))
    return ([rng.normal(size=(int(rng.integers(1, 4)), d)), rng.normal(size=(int(rng.integers(1, 4)), d))],
            lambda a, b: ad.concat_rows([a, b]))


def _case_softmax(rng):
    return [rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(2, 5))))], ad.softmax


def _case_xent(rng, weighted=False):
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    labels = rng.integers(0, c, size=n)
    w = rng.uniform(0.1, 2.0, size=n) if weighted else None
    return [rng.normal(size=(n, c)) * 2], lambda z: ad.softmax_cross_entropy(z, labels, w)


def _case_kurtosis(rng):
    n, d = int(rng.integers(5, 12)), int(rng.integers(1, 4))
    return [rng.normal(size=(n, d))], ad.kurtosis


PRIMITIVE_CASES: Dict[str, Callable] = {
    "matmul": _case_matmul,
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "scale": _case_scale,
    "relu": _unary(ad.relu, _away_from_zero),
    "tanh": _unary(ad.tanh),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda rng, s: rng.uniform(0.2, 3.0, size=s)),
    "abs": _unary(ad.abs_, _away_from_zero),
    "square": _unary(ad.square),
    "add_bias": _case_add_bias,
    "take_rows": _case_take_rows,
    "concat_rows": _case_concat,
    "softmax": _case_softmax,
    "sum": _unary(ad.sum_),
    "mean": _unary(ad.mean),
    "l1_mean": _unary(ad.l1_mean, _away_from_zero),
    "softmax_cross_entropy": _case_xent,
    "softmax_cross_entropy_weighted": lambda rng: _case_xent(rng, weighted=True),
    "kurtosis": _case_kurtosis,
}


def _projected(out: Tensor, proj: np.ndarray) -> Tensor:
    if out.data.ndim == 0:
        return ad.scale(out, float(proj))
    return ad.sum_(ad.mul(out, Tensor(proj)))


def check_primitive(name: str, rng: np.random.Generator, eps: float = FD_EPS) -> float:
    """Relative error between backprop and central differences for one random case."""
    arrays, op = PRIMITIVE_CASES[name](rng)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    proj = rng.normal(size=op(*[Tensor(a) for a in arrays]).shape)

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    ad.backward(_projected(op(*leaves), proj))
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        num = numeric_grad(lambda: _projected(op(*[Tensor(a) for a in arrays]), proj).item(), arr, eps)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, relative_error(analytic, num))
    return worst


def check_grad_reverse(rng: np.random.Generator, eps: float = FD_EPS) -> float:
    """Backward of the reversal layer must equal ``-lam`` times the identity's gradient."""
    x = rng.normal(size=_shape(rng))
    lam = float(rng.uniform(0.1, 2.0))
    proj = rng.normal(size=x.shape)
    leaf = Tensor(x, requires_grad=True)
    ad.backward(_projected(ad.tanh(ad.grad_reverse(leaf, lam)), proj))
    num = numeric_grad(lambda: _projected(ad.tanh(Tensor(x)), proj).item(), x, eps)
    return relative_error(leaf.grad, -lam * num)


# ---------------------------------------------------------------------------
# full loss graph


@dataclass
class GraphCase:
    seed: int
    M: int
    num_domains: int
    num_classes: int
    norm: str
    entropy_conditioning: bool
    independence: bool
    disc_input: str
    lam: float
    mu: float


def random_graph_case(rng: np.random.Generator, seed: int) -> GraphCase:
    return GraphCase(
        seed=seed,
        M=int(rng.integers(1, 4)),
        num_domains=int(rng.integers(2, 5)),
        num_classes=int(rng.integers(2, 4)),
        norm=str(rng.choice(["l1", "l2"])),
        entropy_conditioning=bool(rng.random() < 0.5),
        independence=bool(rng.random() < 0.5),
        disc_input=str(rng.choice(["softmax", "logits"])),
        lam=float(rng.uniform(0.1, 1.0)),
        mu=float(rng.uniform(0.2, 2.0)),
    )


def check_loss_graph(case: GraphCase, eps: float = FD_EPS, d_in: int = 3, hidden: int = 4,
                     rows_per_domain: int = 6) -> float:
    """Compare backprop of the combined objective against its intended gradient.

    Because of the reversal layer the trained gradient is not the gradient of
    a single function. The oracle is built from two finite-difference
    gradients: ``A = L_cls + mu L_H (+ w L_indep)`` and ``T = L_trans``.
    Discriminator parameters should receive ``dT``; every other parameter
    ``dA - lam dT``.
    """
    rng = np.random.default_rng(case.seed)
    model = hdan.build_model(d_in, hidden, case.num_classes, case.M, case.num_domains, case.seed,
                             disc_hidden=3, disc_input=case.disc_input)
    # lift the near-zero fundament init so F contributes visibly to every term
    for p in model.fundament_head.parameters():
        p.data[...] = rng.normal(scale=0.5, size=p.shape)
    x = rng.normal(size=(rows_per_domain * case.num_domains, d_in))
    domains = np.repeat(np.arange(case.num_domains), rows_per_domain)
    labeled = domains == 0
    y = rng.integers(0, case.num_classes, size=int(labeled.sum()))
    w_indep = 0.3

    weights = None
    if case.entropy_conditioning:
        g0 = hdan.forward(model, x).g.data
        weights = np.concatenate([hdan.entropy_weights(g0[domains == d]) for d in range(case.num_domains)])

    def parts(lam):
        fw = hdan.forward(model, x)
        g_groups = [(ad.take_rows(fw.g, np.flatnonzero(domains == d)), d) for d in range(case.num_domains)]
        l_cls = hdan.classification_loss(ad.take_rows(fw.g, np.flatnonzero(labeled)), y)
        l_trans = hdan.transfer_loss(model, g_groups, lam, sample_weights=weights)
        l_h = hdan.heuristic_loss(fw.h_total, case.norm)
        l_ind = hdan.independence_loss(fw.f, fw.g) if case.independence else None
        return hdan.total_loss(l_cls, l_trans, l_h, case.mu, l_ind, w_indep)

    def a_value():
        b = parts(0.0)
        return b.l_f.item() - b.l_trans.item()

    def t_value():
        return parts(0.0).l_trans.item()

    model.zero_grad()
    for p in model.parameters():
        p.requires_grad = True
    ad.backward(parts(case.lam).l_f)

    disc_ids = {id(p) for p in model.discriminator.parameters()}
    analytic, expected = [], []
    for p in model.parameters():
        da = numeric_grad(a_value, p.data, eps)
        dt = numeric_grad(t_value, p.data, eps)
        want = dt if id(p) in disc_ids else da - case.lam * dt
        analytic.append(np.ravel(p.grad if p.grad is not None else np.zeros_like(p.data)))
        expected.append(np.ravel(want))
    return relative_error(np.concatenate(analytic), np.concatenate(expected))


# ---------------------------------------------------------------------------
# closed forms


def kurtosis_closed_forms(seed: int = 0, n: int = 100_000) -> Dict[str, float]:
    """Excess kurtosis of balanced Rademacher, normal and uniform samples."""
    rng = np.random.default_rng(seed)
    rademacher = np.repeat([-1.0, 1.0], n // 2)
    rng.shuffle(rademacher)
    return {
        "rademacher": kurtosis(rademacher),
        "normal": kurtosis(rng.normal(size=n)),
        "uniform": kurtosis(rng.uniform(-1.0, 1.0, size=n)),
    }


KURTOSIS_TARGETS = {"rademacher": (-2.0, 1e-9), "normal": (0.0, 0.05), "uniform": (-1.2, 0.05)}


def bound_triples(count: int = 1000, seed: int = 0, tol: float = 1e-12) -> List[bool]:
    """Random ``(f, f*, k)`` triples; each entry says whether both identities hold."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(count):
        n, c = int(rng.integers(1, 20)), int(rng.integers(1, 6))
        f = rng.normal(size=(n, c))
        f_star = rng.normal(size=(n, c))
        k = float(rng.uniform(1e-6, 1.0))
        rep = bound_identity_check(f, f_star, k, tol=tol)
        ratio_ok = rep.ratio is None or abs(rep.ratio - (1.0 - k)) <= tol
        results.append(bool(rep.holds and ratio_ok))
    return results


# ---------------------------------------------------------------------------
# report


@dataclass
class CheckLine:
    name: str
    passed: int
    total: int
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.passed == self.total


@dataclass
class SelfcheckReport:
    lines: List[CheckLine] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(line.ok for line in self.lines)

    @property
    def passed(self) -> int:
        return sum(line.passed for line in self.lines)

    @property
    def total(self) -> int:
        return sum(line.total for line in self.lines)

    def format(self) -> str:
        out = []
        for line in self.lines:
            tag = "PASS" if line.ok else "FAIL"
            out.append(f"[{tag}] {line.name}: {line.passed}/{line.total} {line.detail}".rstrip())
        out.append(f"{self.passed}/{self.total} checks passed in {self.seconds:.1f}s")
        return "\n".join(out)


def run_selfcheck(configs: int = 20, triples: int = 1000, seed: int = 0,
                  primitives: Sequence[str] = tuple(PRIMITIVE_CASES)) -> SelfcheckReport:
    t0 = time.perf_counter()
    report = SelfcheckReport()
    rng = np.random.default_rng(seed)
    for name in primitives:
        errs = [check_primitive(name, rng) for _ in range(configs)]
        report.lines.append(CheckLine(f"grad {name}", sum(e < PRIMITIVE_TOL for e in errs), configs,
                                      f"max rel err {max(errs):.2e}"))
    errs = [check_grad_reverse(rng) for _ in range(configs)]
    report.lines.append(CheckLine("grad grad_reverse", sum(e < PRIMITIVE_TOL for e in errs), configs,
                                  f"max rel err {max(errs):.2e}"))
    errs = [check_loss_graph(random_graph_case(rng, seed * 1000 + i)) for i in range(configs)]
    report.lines.append(CheckLine("grad full loss graph", sum(e < GRAPH_TOL for e in errs), configs,
                                  f"max rel err {max(errs):.2e}"))
    ok = bound_triples(triples, seed)
    report.lines.append(CheckLine("bound identities", sum(ok), len(ok)))
    values = kurtosis_closed_forms(seed)
    for name, (target, tol) in KURTOSIS_TARGETS.items():
        v = values[name]
        report.lines.append(CheckLine(f"kurtosis {name}", int(abs(v - target) <= tol), 1,
                                      f"value {v:.6g} target {target} +/- {tol}"))
    report.seconds = time.perf_counter() - t0
    return report
