"""Datasets, synthetic generators, label noise, CSV I/O and batch trajectories."""

import configparser
import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyDataset, InvalidArgument, ParseError, SchemaError
from .models import TwoLayerReLU
from .numerics import SeededStream


@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y: float
    noisy: bool = False


@dataclass
class Dataset:
    """An ordered set of examples stored column-wise.

    ``X`` has shape ``(n, d0)``; ``y`` holds floats for regression and integer
    class indices for classification.
    """

    X: np.ndarray
    y: np.ndarray
    task: str
    noisy: np.ndarray = None
    n_classes: int = 0
    noise_level: float = 0.0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise InvalidArgument(f"unknown task {self.task!r}")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64 if self.task == "classification" else np.float64)
        if self.X.shape[0] != self.y.shape[0]:
            raise InvalidArgument("X and y lengths differ")
        if self.noisy is None:
            self.noisy = np.zeros(self.n, dtype=bool)
        if self.task == "classification" and not self.n_classes and self.n:
            self.n_classes = int(self.y.max()) + 1

    @property
    def n(self):
        return int(self.X.shape[0])

    @property
    def d0(self):
        return int(self.X.shape[1])

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return Example(self.X[i], self.y[i].item(), bool(self.noisy[i]))

    def __iter__(self):
        return (self[i] for i in range(self.n))

    @property
    def examples(self):
        return list(self)

    def subset(self, idx):
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx], noisy=self.noisy[idx])


def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def teacher_network(d0, teacher_width, seed):
    """The frozen teacher: a TwoLayerReLU with N(0, 1) first-layer entries."""
    teacher = TwoLayerReLU(d0, teacher_width, sign_seed=SeededStream(seed).child("teacher-signs").seed)
    w = SeededStream(seed).child("teacher-weights").normal(teacher.dim)
    return teacher, w


def gen_teacher_student(d0, teacher_width, n, seed, split="train"):
    """Unit-norm Gaussian inputs labeled by ``tanh`` of a random ReLU teacher.

    The teacher depends only on ``seed``; ``split`` selects an independent
    input sub-stream, so train and test sets share one teacher.
    """
    if d0 < 1 or teacher_width < 1 or n < 1:
        raise InvalidArgument("d0, teacher_width and n must all be >= 1")
    teacher, tw = teacher_network(d0, teacher_width, seed)
    X = _unit_rows(SeededStream(seed).child(f"inputs-{split}").normal((n, d0)))
    y = np.empty(n)
    # chunk to bound the (n, width) activation matrix
    for start in range(0, n, 2048):
        y[start:start + 2048] = np.tanh(teacher.predict(tw, X[start:start + 2048]))
    prov = {"generator": "teacher_student", "d0": d0, "teacher_width": teacher_width,
            "n": n, "seed": seed, "split": split}
    return Dataset(X, y, "regression", provenance=prov)


def gen_gaussian_mixture(d0, n_classes, n, seed, separation=2.0, split="train"):
    """Isotropic Gaussian clusters, one per class, with shared random centers.

    Centers are drawn once per ``seed`` with norm about ``separation``; each
    input is its class center plus N(0, I/d0) noise.
    """
    if d0 < 1 or n_classes < 2 or n < 1:
        raise InvalidArgument("need d0 >= 1, n_classes >= 2 and n >= 1")
    centers = SeededStream(seed).child("centers").normal((n_classes, d0)) * (separation / math.sqrt(d0))
    s = SeededStream(seed).child(f"inputs-{split}")
    y = s.integers(n_classes, size=n).astype(np.int64)
    X = centers[y] + s.normal((n, d0)) / math.sqrt(d0)
    prov = {"generator": "gaussian_mixture", "d0": d0, "n_classes": n_classes, "n": n,
            "seed": seed, "separation": separation, "split": split}
    return Dataset(X, y, "classification", n_classes=n_classes, provenance=prov)


def inject_label_noise(ds, eps, seed):
    """Resample the labels of exactly ``round(eps * n)`` examples uniformly over classes."""
    if ds.task != "classification":
        raise InvalidArgument("label noise is only defined for classification datasets")
    if not 0.0 <= eps <= 1.0:
        raise InvalidArgument(f"eps must lie in [0, 1], got {eps}")
    k = int(math.floor(eps * ds.n + 0.5))
    s = SeededStream(seed).child("label-noise")
    idx = s.choice_without_replacement(ds.n, k)
    y = ds.y.copy()
    noisy = ds.noisy.copy()
    y[idx] = s.integers(ds.n_classes, size=k)
    noisy[idx] = True
    prov = dict(ds.provenance, noise_seed=seed, noise_level=eps)
    return replace(ds, y=y, noisy=noisy, noise_level=eps, provenance=prov)


def load_csv_dataset(path, task, d0, header=False, normalize=False, n_classes=0):
    """Read ``d0`` feature columns followed by one label column per row."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != d0 + 1:
                raise SchemaError(f"{path}:{lineno}: expected {d0 + 1} columns, got {len(row)}", line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno) from None
            rows.append(vals[:-1])
            labels.append(vals[-1])
    if not rows:
        raise EmptyDataset(f"{path} contains no examples")
    X = np.asarray(rows)
    if task == "regression" and normalize:
        X = _unit_rows(X)
    y = np.asarray(labels)
    if task == "classification":
        if np.any(y != np.round(y)) or np.any(y < 0):
            raise ParseError(f"{path}: classification labels must be nonnegative integers")
        y = y.astype(np.int64)
    prov = {"path": str(path), "normalized": bool(normalize)}
    return Dataset(X, y, task, n_classes=n_classes, provenance=prov)


def write_csv_dataset(path, ds, header=True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if header:
            writer.writerow([f"x{i}" for i in range(ds.d0)] + ["y"])
        for x, y in zip(ds.X, ds.y):
            label = str(int(y)) if ds.task == "classification" else repr(float(y))
            writer.writerow([repr(float(v)) for v in x] + [label])


def write_manifest(path, sections):
    """Serialize ``{section: {key: value}}`` as INI text with sorted keys."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name in sections:
        cp[name] = {k: _fmt(v) for k, v in sorted(sections[name].items())}
    with open(path, "w") as fh:
        cp.write(fh)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class BatchTrajectory:
    """The fixed batching configuration: per-epoch seeded shuffles cut into size-b blocks."""

    seed: int
    n: int
    b: int
    epochs: int = 1

    def __post_init__(self):
        if self.n < 1 or self.b < 1 or self.epochs < 1:
            raise InvalidArgument("n, b and epochs must be positive")
        if self.n % self.b:
            raise InvalidArgument(f"batch size must divide n (n={self.n}, b={self.b})")

    @property
    def m(self):
        return self.n // self.b

    @property
    def total_steps(self):
        return self.m * self.epochs


def batches(traj, epoch):
    """The ``m`` index arrays (0-based) used in ``epoch`` (1-based)."""
    if traj.n % traj.b:
        raise InvalidArgument(f"batch size must divide n (n={traj.n}, b={traj.b})")
    if not 1 <= epoch <= traj.epochs:
        raise InvalidArgument(f"epoch {epoch} outside [1, {traj.epochs}]")
    perm = SeededStream(traj.seed).child(f"epoch-{epoch}").permutation(traj.n)
    return [perm[i * traj.b:(i + 1) * traj.b] for i in range(traj.m)]
