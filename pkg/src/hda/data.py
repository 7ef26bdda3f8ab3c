"""Synthetic domain-shift generators and UDA / MSDA / SSDA task splits.

Two families:

* moons: two interleaved half circles, centered at the origin; a domain is
  the base distribution rotated about the origin.
* blobs with nuisance: Gaussian classes in the signal dims (shared by every
  domain) plus nuisance dims holding noise and a per-domain constant offset.
  The nuisance block is a known domain-specific subspace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

GENERATORS = ("moons", "blobs")
MODES = ("uda", "msda", "ssda")


@dataclass
class DomainDataset:
    x: np.ndarray
    y: Optional[np.ndarray]
    domain_id: int
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError(f"{self.name}: x must be 2-D, got shape {self.x.shape}")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise ValueError(f"{self.name}: {self.y.shape[0]} labels for {self.x.shape[0]} rows")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def labeled(self) -> bool:
        return self.y is not None

    def unlabeled(self, domain_id: Optional[int] = None, name: Optional[str] = None) -> "DomainDataset":
        return DomainDataset(
            self.x.copy(), None,
            self.domain_id if domain_id is None else domain_id,
            name or self.name,
        )

    def subset(self, idx, domain_id: Optional[int] = None, name: Optional[str] = None) -> "DomainDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return DomainDataset(
            self.x[idx].copy(),
            None if self.y is None else self.y[idx].copy(),
            self.domain_id if domain_id is None else domain_id,
            name or self.name,
        )


@dataclass
class TaskSpec:
    mode: str = "uda"
    generator: str = "blobs"
    num_sources: int = 1
    shots: int = 0
    n_per_domain: int = 500
    num_classes: int = 3
    noise_std: float = 0.5
    # moons
    rotation_deg: float = 40.0
    # blobs
    d_signal: int = 2
    d_nuisance: int = 4
    domain_offset: float = 3.0
    class_sep: float = 1.5
    seed: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"task.mode must be one of {MODES}, got {self.mode!r}")
        if self.generator not in GENERATORS:
            raise ValueError(f"task.generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.num_sources < 1:
            raise ValueError("task.num_sources must be >= 1")
        if self.mode in ("uda", "ssda") and self.num_sources != 1:
            raise ValueError(f"task.mode={self.mode} requires exactly one source")
        if self.mode == "ssda" and self.shots not in (1, 3):
            raise ValueError(f"ssda shots must be 1 or 3, got {self.shots}")
        if self.mode != "ssda" and self.shots != 0:
            raise ValueError("task.shots only applies to ssda")
        if self.generator == "moons" and self.num_classes != 2:
            raise ValueError("moons generator has exactly 2 classes")
        if self.n_per_domain < 2:
            raise ValueError("task.n_per_domain must be >= 2")
        if self.noise_std < 0:
            raise ValueError("task.noise_std must be nonnegative")

    @property
    def num_domains(self) -> int:
        if self.mode == "uda":
            return 2
        if self.mode == "msda":
            return self.num_sources + 1
        return 3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Task:
    sources: List[DomainDataset]
    target_unlabeled: DomainDataset
    target_eval: DomainDataset
    target_labeled: Optional[DomainDataset] = None
    num_classes: int = 2
    num_domains: int = 2

    @property
    def dim(self) -> int:
        return self.target_unlabeled.dim


# ---------------------------------------------------------------------------
# generators


def _class_sizes(n: int, num_classes: int) -> np.ndarray:
    sizes = np.full(num_classes, n // num_classes)
    sizes[: n % num_classes] += 1
    return sizes


def _rotation(deg: float) -> np.ndarray:
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


# base moons are centered so rotations act about the data center
_MOONS_CENTER = np.array([0.5, 0.25])


def _moons_domain(rng, n, rotation_deg, noise_std):
    sizes = _class_sizes(n, 2)
    t0 = rng.uniform(0.0, math.pi, sizes[0])
    t1 = rng.uniform(0.0, math.pi, sizes[1])
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower]) - _MOONS_CENTER
    x = x + rng.normal(0.0, 1.0, x.shape) * noise_std
    y = np.repeat([0, 1], sizes)
    x = x @ _rotation(rotation_deg).T
    return x, y


def make_moons_shift(n_per_domain: int, rotation_deg: float, noise_std: float, seed):
    """Source moons and a copy of their distribution rotated by ``rotation_deg``."""
    if n_per_domain < 2:
        raise ValueError(f"n_per_domain must be >= 2, got {n_per_domain}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be nonnegative, got {noise_std}")
    rng = np.random.default_rng(seed)
    xs, ys = _moons_domain(rng, n_per_domain, 0.0, noise_std)
    xt, yt = _moons_domain(rng, n_per_domain, rotation_deg, noise_std)
    return DomainDataset(xs, ys, 0, "source"), DomainDataset(xt, yt, 1, "target")


def simplex_means(rng, num_classes: int, d_signal: int, radius: float) -> np.ndarray:
    """``num_classes`` points at distance ``radius`` from the origin, randomly oriented.

    Regular simplex when it fits in ``d_signal`` dims, otherwise random
    directions.
    """
    if num_classes - 1 <= d_signal:
        centered = np.eye(num_classes) - 1.0 / num_classes
        # orthonormal coordinates of the simplex in its own (C-1)-dim span
        u, s, _ = np.linalg.svd(centered.T, full_matrices=False)
        coords = centered @ u[:, : num_classes - 1]
        coords /= np.linalg.norm(coords, axis=1, keepdims=True)
        q, _ = np.linalg.qr(rng.normal(size=(d_signal, d_signal)))
        means = coords @ q[:, : num_classes - 1].T
    else:
        means = rng.normal(size=(num_classes, d_signal))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    return means * radius


def _blobs_domain(rng, n, means, d_nuisance, offset, noise_std):
    num_classes, d_signal = means.shape
    sizes = _class_sizes(n, num_classes)
    y = np.repeat(np.arange(num_classes), sizes)
    signal = means[y] + rng.normal(0.0, 1.0, (n, d_signal)) * noise_std
    nuisance = offset + rng.normal(0.0, 1.0, (n, d_nuisance)) * noise_std
    return np.concatenate([signal, nuisance], axis=1), y


def make_blobs_nuisance(
    n_per_domain: int,
    num_classes: int,
    d_signal: int,
    d_nuisance: int,
    domain_offset: float,
    noise_std: float,
    seed,
    class_sep: float = 1.5,
):
    """Gaussian class blobs plus nuisance dims offset by ``domain_offset`` in the target."""
    _check_blobs(n_per_domain, num_classes, d_signal, d_nuisance, noise_std)
    rng = np.random.default_rng(seed)
    means = simplex_means(rng, num_classes, d_signal, class_sep)
    xs, ys = _blobs_domain(rng, n_per_domain, means, d_nuisance, 0.0, noise_std)
    xt, yt = _blobs_domain(rng, n_per_domain, means, d_nuisance, domain_offset, noise_std)
    return DomainDataset(xs, ys, 0, "source"), DomainDataset(xt, yt, 1, "target")


def _check_blobs(n, num_classes, d_signal, d_nuisance, noise_std):
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if d_signal < 1 or d_nuisance < 1:
        raise ValueError(f"d_signal and d_nuisance must be >= 1, got {d_signal}, {d_nuisance}")
    if n < 2:
        raise ValueError(f"n_per_domain must be >= 2, got {n}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be nonnegative, got {noise_std}")


# ---------------------------------------------------------------------------
# task splits


def _domain_shifts(spec: TaskSpec) -> list:
    """Shift parameter per generated domain: sources first, target last.

    Source ``j`` of ``S`` gets ``shift * j / S``; the target gets ``shift``.
    """
    shift = spec.rotation_deg if spec.generator == "moons" else spec.domain_offset
    s = spec.num_sources
    return [shift * j / s for j in range(s)] + [shift]


def make_task(spec: TaskSpec, seed=None) -> Task:
    """Generate all domains for ``spec`` and split the target per ``spec.mode``.

    ``seed`` is used when ``spec.seed`` is None.
    """
    spec.validate()
    seed = spec.seed if spec.seed is not None else seed
    rng = np.random.default_rng(seed)
    shifts = _domain_shifts(spec)
    if spec.generator == "moons":
        domains = [_moons_domain(rng, spec.n_per_domain, s, spec.noise_std) for s in shifts]
    else:
        _check_blobs(spec.n_per_domain, spec.num_classes, spec.d_signal, spec.d_nuisance, spec.noise_std)
        means = simplex_means(rng, spec.num_classes, spec.d_signal, spec.class_sep)
        domains = [
            _blobs_domain(rng, spec.n_per_domain, means, spec.d_nuisance, s, spec.noise_std)
            for s in shifts
        ]

    sources = [
        DomainDataset(x, y, j, f"source{j}" if spec.num_sources > 1 else "source")
        for j, (x, y) in enumerate(domains[:-1])
    ]
    target_id = spec.num_sources
    full_target = DomainDataset(*domains[-1], target_id, "target")

    target_labeled = None
    if spec.mode == "ssda":
        lab_idx = []
        for c in range(spec.num_classes):
            members = np.flatnonzero(full_target.y == c)
            if spec.shots > members.size:
                raise ValueError(
                    f"{spec.shots} shots requested but class {c} has only {members.size} target samples"
                )
            lab_idx.extend(rng.choice(members, size=spec.shots, replace=False))
        lab_idx = np.sort(np.asarray(lab_idx, dtype=np.intp))
        rest = np.setdiff1d(np.arange(len(full_target)), lab_idx)
        target_labeled = full_target.subset(lab_idx, domain_id=target_id + 1, name="target_labeled")
        pool = full_target.subset(rest)
    else:
        pool = full_target

    return Task(
        sources=sources,
        target_unlabeled=pool.unlabeled(name="target_unlabeled"),
        target_eval=pool.subset(np.arange(len(pool)), name="target_eval"),
        target_labeled=target_labeled,
        num_classes=spec.num_classes,
        num_domains=spec.num_domains,
    )


# ---------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return "%.17g" % v


def export_csv(ds: DomainDataset, path) -> Path:
    """Write ``x0..x{d-1},y,domain`` rows; unlabeled rows carry ``y = -1``."""
    path = Path(path)
    d = ds.dim
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{j}" for j in range(d)] + ["y", "domain"])
            ys = ds.y if ds.y is not None else np.full(len(ds), -1)
            for row, label in zip(ds.x, ys):
                w.writerow([_fmt(v) for v in row] + [int(label), ds.domain_id])
    except OSError as exc:
        raise OSError(f"cannot write dataset CSV {path}: {exc.strerror or exc}") from exc
    return path


def import_csv(path, name: Optional[str] = None) -> DomainDataset:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read dataset CSV {path}: {exc.strerror or exc}") from exc
    if not rows or rows[0][-2:] != ["y", "domain"]:
        raise ValueError(f"{path}: missing 'y,domain' header")
    body = rows[1:]
    d = len(rows[0]) - 2
    x = np.array([[float(v) for v in r[:d]] for r in body], dtype=np.float64).reshape(len(body), d)
    y = np.array([int(r[d]) for r in body], dtype=np.int64)
    domains = {int(r[d + 1]) for r in body}
    if len(domains) > 1:
        raise ValueError(f"{path}: rows from several domains {sorted(domains)}")
    domain_id = domains.pop() if domains else 0
    labels = None if (y.size and np.all(y == -1)) else y
    return DomainDataset(x, labels, domain_id, name or path.stem)
