"""Synthetic task streams, the seeded tokenizer, and CSV ingestion.

Samples are Gaussian clusters around unit-norm class means scaled by a
separation factor, drawn in a raw feature space and mapped to token grids
by one frozen linear tokenizer per run.  Split-class streams give each
task its own disjoint label block; domain-shift streams keep one label
set and rotate the raw feature space a little further each task.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from . import rng as rng_mod

SCENARIOS = ("cil", "til", "dil", "oil")
TRAIN_FRACTION = 0.8


@dataclass
class ScenarioSpec:
    scenario: str = "cil"
    tasks: int = 5
    classes_per_task: int = 2
    samples_per_class: int = 200
    feature_dim: int = 16
    noise: float = 0.1
    separation: float = 2.0
    shift: float = 0.5

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.tasks < 1:
            raise ValueError("tasks must be >= 1")
        if self.classes_per_task < 2:
            raise ValueError("classes_per_task must be >= 2")
        if self.samples_per_class < 5:
            raise ValueError("samples_per_class must be >= 5 for an 80/20 split")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.noise < 0.0:
            raise ValueError("noise must be >= 0")
        if self.separation <= 0.0:
            raise ValueError("separation must be > 0")

    @property
    def total_classes(self) -> int:
        if self.scenario == "dil":
            return self.classes_per_task
        return self.tasks * self.classes_per_task

    def task_classes(self, task_id: int) -> list[int]:
        if self.scenario == "dil":
            return list(range(self.classes_per_task))
        lo = task_id * self.classes_per_task
        return list(range(lo, lo + self.classes_per_task))


@dataclass
class TaskDataset:
    task_id: int
    classes: list[int]
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def __post_init__(self):
        for y in (self.train_y, self.test_y):
            if y.size and not set(np.unique(y)) <= set(self.classes):
                raise ValueError(f"task {self.task_id}: labels outside declared classes")

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    @property
    def n_test(self) -> int:
        return self.test_x.shape[0]


@dataclass
class Tokenizer:
    """Frozen linear map from raw vectors to token grids (seq_len x dim)."""

    seq_len: int
    token_width: int
    dim: int
    matrix: np.ndarray

    @property
    def feature_dim(self) -> int:
        return self.seq_len * self.token_width

    def tokenize(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != (self.feature_dim,):
            raise ValueError(f"raw vector must have shape ({self.feature_dim},), got {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise ValueError("raw vector must be finite")
        return raw.reshape(self.seq_len, self.token_width) @ self.matrix

    def tokenize_batch(self, raws: np.ndarray) -> np.ndarray:
        raws = np.asarray(raws, dtype=np.float64)
        if raws.ndim != 2 or raws.shape[1] != self.feature_dim:
            raise ValueError(f"raw batch must be (n, {self.feature_dim}), got {raws.shape}")
        if not np.all(np.isfinite(raws)):
            raise ValueError("raw batch must be finite")
        return raws.reshape(-1, self.seq_len, self.token_width) @ self.matrix


def make_tokenizer(feature_dim: int, seq_len: int, dim: int, seed) -> Tokenizer:
    """Seeded semi-orthogonal map; isometric per chunk while token_width <= dim."""
    if feature_dim % seq_len != 0:
        raise ValueError(f"feature_dim {feature_dim} not divisible by seq_len {seq_len}")
    token_width = feature_dim // seq_len
    gen = rng_mod.generator(seed, "tokenizer")
    draw = gen.normal(0.0, 1.0, size=(token_width, dim))
    if token_width <= dim:
        matrix = linalg.orthonormalize(draw.T).T
    else:
        matrix = linalg.orthonormalize(draw)
    return Tokenizer(seq_len=seq_len, token_width=token_width, dim=dim, matrix=matrix)


def rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Orthogonal rotation built from Givens blocks on axis pairs (0,1), (2,3), ..."""
    r = np.eye(dim)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(0, dim - 1, 2):
        r[i, i] = c
        r[i + 1, i + 1] = c
        r[i, i + 1] = -s
        r[i + 1, i] = s
    return r


def _class_means(spec: ScenarioSpec, gen: np.random.Generator) -> np.ndarray:
    """Unit-norm mean directions, mutually orthogonal whenever they fit.

    Orthogonal means keep inter-class interference out of the raw space,
    so any overlap seen downstream is introduced by the model, not the
    generator.  With more classes than dimensions exact orthogonality is
    impossible and normalized random directions are used instead.
    """
    means = gen.normal(size=(spec.total_classes, spec.feature_dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise FloatingPointError("degenerate zero draw for a class mean")
    if spec.total_classes <= spec.feature_dim:
        means = linalg.orthonormalize(means.T).T
        if means.shape[0] != spec.total_classes:
            raise FloatingPointError("class mean draws were linearly dependent")
        return spec.separation * means
    return spec.separation * means / norms


def _split_rows(raws: np.ndarray, gen: np.random.Generator):
    n = raws.shape[0]
    n_train = int(TRAIN_FRACTION * n)
    perm = gen.permutation(n)
    return raws[perm[:n_train]], raws[perm[n_train:]]


def _assemble_task(spec, tokenizer, task_id, classes, means, gen, rotate=None):
    train_raws, train_labels, test_raws, test_labels = [], [], [], []
    for cls in classes:
        raws = means[cls] + spec.noise * gen.normal(size=(spec.samples_per_class, spec.feature_dim))
        if rotate is not None:
            raws = raws @ rotate.T
        tr, te = _split_rows(raws, gen)
        train_raws.append(tr)
        test_raws.append(te)
        train_labels.append(np.full(tr.shape[0], cls, dtype=np.int64))
        test_labels.append(np.full(te.shape[0], cls, dtype=np.int64))
    return TaskDataset(
        task_id=task_id,
        classes=list(classes),
        train_x=tokenizer.tokenize_batch(np.vstack(train_raws)),
        train_y=np.concatenate(train_labels),
        test_x=tokenizer.tokenize_batch(np.vstack(test_raws)),
        test_y=np.concatenate(test_labels),
    )


def gen_split_classes(spec: ScenarioSpec, tokenizer: Tokenizer, seed) -> list[TaskDataset]:
    """Disjoint-label task stream for the cil/til/oil scenarios."""
    if spec.scenario == "dil":
        raise ValueError("use gen_domain_shift for the dil scenario")
    if tokenizer.feature_dim != spec.feature_dim:
        raise ValueError("tokenizer feature_dim does not match spec")
    gen = rng_mod.generator(seed, "data")
    means = _class_means(spec, gen)
    return [
        _assemble_task(spec, tokenizer, t, spec.task_classes(t), means, gen)
        for t in range(spec.tasks)
    ]


def gen_domain_shift(spec: ScenarioSpec, tokenizer: Tokenizer, seed) -> list[TaskDataset]:
    """Shared-label task stream: task t sees the raw space rotated by t*shift."""
    if spec.scenario != "dil":
        raise ValueError("gen_domain_shift is only defined for the dil scenario")
    if tokenizer.feature_dim != spec.feature_dim:
        raise ValueError("tokenizer feature_dim does not match spec")
    gen = rng_mod.generator(seed, "data")
    means = _class_means(spec, gen)
    return [
        _assemble_task(
            spec,
            tokenizer,
            t,
            spec.task_classes(t),
            means,
            gen,
            rotate=rotation_matrix(spec.feature_dim, spec.shift * t),
        )
        for t in range(spec.tasks)
    ]


def gen_stream(spec: ScenarioSpec, tokenizer: Tokenizer, seed) -> list[TaskDataset]:
    if spec.scenario == "dil":
        return gen_domain_shift(spec, tokenizer, seed)
    return gen_split_classes(spec, tokenizer, seed)


def load_csv(path):
    """Parse `label,f0,f1,...` rows into (raws, labels).

    A file with no data rows (or no bytes at all) is an empty dataset;
    anything structurally wrong is an error naming the line and column.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        expected = ["label"] + [f"f{i}" for i in range(len(header) - 1)]
        if len(header) < 2 or header != expected:
            raise ValueError(f"{path}:1: header must be label,f0,f1,..., got {','.join(header)}")
        width = len(header) - 1
        raws, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: column label: {row[0]!r} is not an integer") from None
            feats = []
            for col, cell in enumerate(row[1:]):
                try:
                    value = float(cell)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: column f{col}: {cell!r} is not a number") from None
                if not math.isfinite(value):
                    raise ValueError(f"{path}:{lineno}: column f{col}: non-finite value {cell!r}")
                feats.append(value)
            raws.append(feats)
    if not raws:
        return np.zeros((0, width)), np.zeros(0, dtype=np.int64)
    return np.array(raws), np.array(labels, dtype=np.int64)


def load_manifest(path, tokenizer: Tokenizer) -> list[TaskDataset]:
    """Read a JSON manifest listing per-task CSV files.

    Schema: {"tasks": [{"task_id": int, "classes": [int, ...],
    "train": path, "test": path}, ...]}; file paths resolve relative to
    the manifest's directory.
    """
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or set(doc) != {"tasks"}:
        raise ValueError(f"{path}: manifest must be an object with exactly a 'tasks' key")
    datasets = []
    for entry in doc["tasks"]:
        extra = set(entry) - {"task_id", "classes", "train", "test"}
        if extra:
            raise ValueError(f"{path}: unknown manifest keys {sorted(extra)}")
        missing = {"task_id", "classes", "train", "test"} - set(entry)
        if missing:
            raise ValueError(f"{path}: manifest entry missing keys {sorted(missing)}")
        splits = {}
        for part in ("train", "test"):
            raws, labels = load_csv(path.parent / entry[part])
            if raws.size and raws.shape[1] != tokenizer.feature_dim:
                raise ValueError(
                    f"{entry[part]}: feature width {raws.shape[1]} does not match tokenizer ({tokenizer.feature_dim})"
                )
            if raws.shape[0]:
                splits[part] = (tokenizer.tokenize_batch(raws), labels)
            else:
                splits[part] = (np.zeros((0, tokenizer.seq_len, tokenizer.dim)), labels)
        datasets.append(
            TaskDataset(
                task_id=int(entry["task_id"]),
                classes=list(entry["classes"]),
                train_x=splits["train"][0],
                train_y=splits["train"][1],
                test_x=splits["test"][0],
                test_y=splits["test"][1],
            )
        )
    return datasets
