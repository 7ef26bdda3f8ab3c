"""Experiment orchestration: configs, the training loop, metrics files and sweeps."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from . import autodiff as ad
from . import hdan, kernels
from .data import Task, TaskSpec, make_task
from .diagnostics import MetricsRecord, bound_terms, child_seed, measure
from .nn import SgdState, lambda_schedule, sgd_step

logger = logging.getLogger(__name__)

METHODS = ("hdan", "source_only", "dann_baseline")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden: int = 32
    M: int = 3
    mu: float = 1.0
    entropy_conditioning: bool = False
    independence_loss: bool = False
    independence_weight: float = 0.1
    heuristic_loss_norm: str = "l1"
    activation: str = "tanh"
    disc_hidden: int = 16
    disc_input: str = "softmax"


@dataclass
class OptimConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 100
    batch_size: int = 64
    gamma: float = 10.0


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    output_dir: Optional[str] = None
    method: str = "hdan"

    def validate(self) -> None:
        self.task.validate()
        m, o = self.model, self.optim
        if m.M < 1:
            raise ConfigError("model.M must be >= 1")
        if m.hidden < 1 or m.disc_hidden < 1:
            raise ConfigError("model.hidden and model.disc_hidden must be >= 1")
        if m.mu < 0 or m.independence_weight < 0:
            raise ConfigError("model.mu and model.independence_weight must be nonnegative")
        if m.heuristic_loss_norm not in ("l1", "l2"):
            raise ConfigError("model.heuristic_loss_norm must be 'l1' or 'l2'")
        if m.activation not in ("tanh", "relu"):
            raise ConfigError("model.activation must be 'tanh' or 'relu'")
        if m.disc_input not in ("softmax", "logits"):
            raise ConfigError("model.disc_input must be 'softmax' or 'logits'")
        if o.epochs < 1:
            raise ConfigError("optim.epochs must be >= 1")
        if o.batch_size < 2:
            raise ConfigError("optim.batch_size must be >= 2")
        if o.lr <= 0:
            raise ConfigError("optim.lr must be positive")
        if o.gamma <= 0:
            raise ConfigError("optim.gamma must be positive")
        if not 0 <= o.momentum < 1 or o.weight_decay < 0:
            raise ConfigError("optim.momentum must be in [0, 1) and weight_decay nonnegative")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        """Deep-ish copy with top-level fields replaced."""
        cfg = config_from_dict(self.to_dict())
        for k, v in changes.items():
            setattr(cfg, k, v)
        return cfg


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    """Parse a config mapping; unknown keys at any level are rejected."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    cfg = ExperimentConfig(
        task=_build(TaskSpec, data.get("task", {}), "task"),
        model=_build(ModelConfig, data.get("model", {}), "model"),
        optim=_build(OptimConfig, data.get("optim", {}), "optim"),
        seed=int(data.get("seed", 0)),
        output_dir=data.get("output_dir"),
        method=data.get("method", "hdan"),
    )
    cfg.validate()
    return cfg


BUNDLED_CONFIGS = ("default", "moons", "msda", "ssda1", "ssda3")


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package (``default``, ``moons``, ...)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED_CONFIGS:
        raise ConfigError(f"no bundled config named {name!r}; choose from {BUNDLED_CONFIGS}")
    return Path(__file__).parent / "configs" / f"{stem}.json"


def resolve_config_path(path) -> Path:
    """``path`` itself if it exists, else the bundled config of that name."""
    p = Path(path)
    if p.exists():
        return p
    if p.parent == Path(".") and p.stem in BUNDLED_CONFIGS:
        return bundled_config_path(p.name)
    raise ConfigError(f"config file not found: {path}")


def load_config(path) -> ExperimentConfig:
    path = resolve_config_path(path)
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def default_output_root() -> Path:
    return Path(os.environ.get("HDA_OUT_DIR", "runs"))


# ---------------------------------------------------------------------------
# training


class _Cycler:
    """Endless shuffled index stream over a pool of ``n`` rows."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.buf = np.zeros(0, dtype=np.intp)

    def take(self, k: int) -> np.ndarray:
        k = min(k, self.n)
        while self.buf.size < k:
            self.buf = np.concatenate([self.buf, self.rng.permutation(self.n)])
        out, self.buf = self.buf[:k], self.buf[k:]
        return out


@dataclass
class _Group:
    x: np.ndarray
    y: Optional[np.ndarray]
    domain: int


def _groups(task: Task) -> List[_Group]:
    """Training pools in a fixed order: sources, unlabeled target, labeled target."""
    groups = [_Group(s.x, s.y, s.domain_id) for s in task.sources]
    groups.append(_Group(task.target_unlabeled.x, None, task.target_unlabeled.domain_id))
    if task.target_labeled is not None:
        tl = task.target_labeled
        groups.append(_Group(tl.x, tl.y, tl.domain_id))
    return groups


def compute_losses(model, cfg: ExperimentConfig, groups: Sequence[_Group], idx: Sequence[np.ndarray], lam: float):
    """Build the loss graph for one batch; returns (LossBundle, ForwardOut)."""
    xs = np.concatenate([grp.x[i] for grp, i in zip(groups, idx)])
    fw = hdan.forward(model, xs)
    bounds = np.cumsum([0] + [i.size for i in idx])
    g_parts = [ad.take_rows(fw.g, np.arange(bounds[j], bounds[j + 1])) for j in range(len(groups))]

    lab_rows = [np.arange(bounds[j], bounds[j + 1]) for j, grp in enumerate(groups) if grp.y is not None]
    lab_y = [grp.y[i] for grp, i in zip(groups, idx) if grp.y is not None]
    l_cls = hdan.classification_loss(ad.take_rows(fw.g, np.concatenate(lab_rows)), np.concatenate(lab_y))

    zero = ad.Tensor(0.0)
    if cfg.method == "source_only":
        l_trans = zero
    else:
        l_trans = hdan.transfer_loss(
            model, [(gp, grp.domain) for gp, grp in zip(g_parts, groups)], lam,
            entropy_conditioning=cfg.model.entropy_conditioning,
        )
    l_h = hdan.heuristic_loss(fw.h_total, cfg.model.heuristic_loss_norm) if cfg.method == "hdan" else zero
    l_indep = None
    if cfg.model.independence_loss and cfg.method == "hdan":
        l_indep = hdan.independence_loss(fw.f, fw.g)
    bundle = hdan.total_loss(l_cls, l_trans, l_h, cfg.model.mu, l_indep, cfg.model.independence_weight)
    return bundle, fw


def _full_losses(model, cfg, groups) -> dict:
    idx = [np.arange(grp.x.shape[0]) for grp in groups]
    bundle, _ = compute_losses(model, cfg, groups, idx, 0.0)
    return bundle.values()


def _decomposition_residual(fw) -> float:
    return float(np.abs(fw.g.data + fw.h_total.data - fw.f.data).max())


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(path: Path, records: Sequence[MetricsRecord], M: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MetricsRecord.columns(M))
        for r in records:
            w.writerow([_fmt(v) for v in r.row()])


def _record_dict(r: MetricsRecord) -> dict:
    d = dataclasses.asdict(r)
    return d


@dataclass
class RunSummary:
    status: str
    final_target_acc: Optional[float]
    best_target_acc: Optional[float]
    final_metrics: Optional[dict]
    wall_clock_seconds: float
    config: dict
    code_version: str
    kernel_backend: str
    max_decomposition_residual: Optional[float] = None
    init_cos_gh: Optional[float] = None
    steps: int = 0
    bound_terms: Optional[dict] = None
    records: List[MetricsRecord] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("records")
        return d


def _resolve_output_dir(cfg: ExperimentConfig, output_dir) -> Path:
    if output_dir is not None:
        return Path(output_dir)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return default_output_root() / f"{cfg.method}_seed{cfg.seed}"


def run_experiment(cfg: ExperimentConfig, output_dir=None, eval_only: bool = False,
                   write_files: bool = True) -> RunSummary:
    """Train one model per ``cfg`` and emit ``metrics.csv`` and ``summary.json``.

    ``summary.json`` is written even when training fails numerically; its
    ``status`` field then carries the error.
    """
    cfg.validate()
    t0 = time.perf_counter()
    out = _resolve_output_dir(cfg, output_dir)
    if write_files:
        out.mkdir(parents=True, exist_ok=True)

    root = np.random.SeedSequence(cfg.seed)
    model_ss, order_ss, probe_ss = root.spawn(3)
    task_seed = cfg.task.seed if cfg.task.seed is not None else cfg.seed
    task = make_task(cfg.task, seed=task_seed)
    groups = _groups(task)
    M = cfg.model.M

    model = hdan.build_model(
        task.dim, cfg.model.hidden, task.num_classes, M, task.num_domains, model_ss,
        heuristic=cfg.method != "dann_baseline",
        activation=cfg.model.activation,
        disc_hidden=cfg.model.disc_hidden,
        disc_input=cfg.model.disc_input,
    )
    if cfg.method == "source_only":
        params = model.generator_parameters()
    else:
        params = model.parameters()
    opt = SgdState(lr=cfg.optim.lr, momentum=cfg.optim.momentum, weight_decay=cfg.optim.weight_decay)
    order_rng = np.random.default_rng(order_ss)
    cyclers = [_Cycler(grp.x.shape[0], order_rng) for grp in groups]
    bs = cfg.optim.batch_size
    steps_per_epoch = max(math.ceil(grp.x.shape[0] / bs) for grp in groups)
    total_steps = 0 if eval_only else cfg.optim.epochs * steps_per_epoch

    records: List[MetricsRecord] = []
    max_resid = 0.0
    status = "ok"
    step = 0

    def snapshot(epoch):
        rec = measure(model, task, epoch, _full_losses(model, cfg, groups), M, probe_seed=probe_ss)
        records.append(rec)
        return rec

    try:
        rec0 = snapshot(0)
        init_cos = rec0.cos_gh
        for epoch in range(1, (0 if eval_only else cfg.optim.epochs) + 1):
            for _ in range(steps_per_epoch):
                idx = [c.take(bs) for c in cyclers]
                lam = lambda_schedule(step / total_steps, cfg.optim.gamma)
                bundle, fw = compute_losses(model, cfg, groups, idx, lam)
                max_resid = max(max_resid, _decomposition_residual(fw))
                if not np.isfinite(bundle.l_f.item()):
                    raise FloatingPointError(f"non-finite loss at step {step}")
                model.zero_grad()
                ad.backward(bundle.l_f)
                sgd_step(params, opt)
                step += 1
            rec = snapshot(epoch)
            logger.debug("epoch %d target_acc %.4f l_h %.4f", epoch, rec.target_acc, rec.l_h)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        status = f"failed: {exc}"
        init_cos = records[0].cos_gh if records else None

    bt = None
    if status == "ok":
        src = task.sources[0]
        bt = bound_terms(model, src.x, src.y, task.target_eval.x, task.target_eval.y,
                         seed=child_seed(probe_ss, 2)).to_dict()

    accs = [r.target_acc for r in records]
    summary = RunSummary(
        status=status,
        final_target_acc=accs[-1] if accs else None,
        best_target_acc=max(accs) if accs else None,
        final_metrics=_record_dict(records[-1]) if records else None,
        wall_clock_seconds=time.perf_counter() - t0,
        config=cfg.to_dict(),
        code_version=__version__,
        kernel_backend=kernels.BACKEND,
        max_decomposition_residual=max_resid,
        init_cos_gh=init_cos,
        steps=step,
        bound_terms=bt,
        records=records,
    )
    if write_files:
        write_metrics_csv(out / "metrics.csv", records, M)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# sweeps


def sweep_m(cfg: ExperimentConfig, m_values: Sequence[int], seeds: Optional[Sequence[int]] = None,
            output_dir=None) -> list:
    """Target accuracy mean and std per number of heuristic heads.

    Each ``M`` is run for every seed (default: ``cfg.seed`` + 0, 1, 2). Writes
    ``sweep.csv`` with columns ``M,mean_target_acc,std_target_acc,n_seeds``.
    """
    m_values = [int(m) for m in m_values]
    if not m_values:
        raise ValueError("sweep_m: m_values is empty")
    seeds = list(seeds) if seeds is not None else [cfg.seed + i for i in range(3)]
    root = Path(output_dir) if output_dir is not None else _resolve_output_dir(cfg, None)
    root.mkdir(parents=True, exist_ok=True)
    table = []
    for m in m_values:
        accs = []
        for s in seeds:
            run_cfg = cfg.replace(seed=s)
            run_cfg.model.M = m
            run_cfg.validate()
            summary = run_experiment(run_cfg, output_dir=root / f"M{m}" / f"seed{s}")
            if summary.status != "ok":
                raise RuntimeError(f"sweep run M={m} seed={s} {summary.status}")
            accs.append(summary.final_target_acc)
        table.append({
            "M": m,
            "mean_target_acc": float(np.mean(accs)),
            "std_target_acc": float(np.std(accs)),
            "n_seeds": len(accs),
        })
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["M", "mean_target_acc", "std_target_acc", "n_seeds"],
                           lineterminator="\n")
        w.writeheader()
        for row in table:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    return table
