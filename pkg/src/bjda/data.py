"""Datasets on disk (labeled feature CSVs) and the synthetic benchmark
generator used for desk-scale experiments.

CSV layout: optional first line "# classes=C", then a header
"label,f0,...,f{d-1}", then one row per sample. label is an integer class
index, or -1 for unlabeled rows. Floats are written with 17 significant
digits, which round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ParseError, ValidationError


@dataclass
class Dataset:
    """Feature rows with integer labels; -1 marks an unlabeled row."""
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InputError(f"dataset {self.name!r}: features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise InputError(f"dataset {self.name!r}: {self.features.shape[0]} rows but "
                             f"{self.labels.shape[0]} labels")
        if self.features.size and not np.all(np.isfinite(self.features)):
            raise InputError(f"dataset {self.name!r}: non-finite feature value")
        if self.labels.size:
            if self.labels.min() < -1:
                raise InputError(f"dataset {self.name!r}: labels must be >= -1")
            if self.labels.max() >= self.class_count:
                raise InputError(f"dataset {self.name!r}: label {self.labels.max()} "
                                 f">= class_count {self.class_count}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# classes={dataset.class_count}\n")
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [f"{x:.17g}" for x in row])


def load_csv(path, class_count: int | None = None, name: str | None = None) -> Dataset:
    """Parse a feature CSV. class_count overrides the file's "# classes" line.

    Without either, the class count falls back to 1 + max label. Errors
    carry 1-based line numbers.
    """
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    file_classes = None
    lineno = 0
    if lines and lines[0].lstrip().startswith("#"):
        comment = lines[0].lstrip()[1:].strip()
        if comment.startswith("classes="):
            try:
                file_classes = int(comment[len("classes="):])
            except ValueError:
                raise ParseError(f"{path}:1: bad class count in {lines[0]!r}") from None
        lines = lines[1:]
        lineno = 1
    if not lines:
        raise ParseError(f"{path}: missing header row")
    header = next(csv.reader([lines[0]]))
    header_line = lineno + 1
    if len(header) < 2 or header[0] != "label" or \
            header[1:] != [f"f{i}" for i in range(len(header) - 1)]:
        raise ParseError(f"{path}:{header_line}: header must be label,f0,...,f{{d-1}}")
    dim = len(header) - 1

    labels, rows = [], []
    for offset, record in enumerate(csv.reader(lines[1:])):
        ln = header_line + 1 + offset
        if not record:
            continue
        if len(record) != dim + 1:
            raise ParseError(f"{path}:{ln}: expected {dim + 1} fields, got {len(record)}")
        try:
            label = int(record[0])
        except ValueError:
            raise ParseError(f"{path}:{ln}: label {record[0]!r} is not an integer") from None
        if label < -1:
            raise ValidationError(f"{path}:{ln}: label {label} must be >= -1")
        try:
            row = [float(x) for x in record[1:]]
        except ValueError:
            raise ParseError(f"{path}:{ln}: malformed float") from None
        for j, x in enumerate(row):
            if not math.isfinite(x):
                raise ValidationError(f"{path}:{ln}: non-finite value in column f{j}")
        labels.append(label)
        rows.append(row)

    features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    labels_arr = np.array(labels, dtype=np.int64)
    resolved = class_count if class_count is not None else file_classes
    if resolved is None:
        resolved = int(labels_arr.max()) + 1 if labels_arr.size else 0
    max_label = int(labels_arr.max()) if labels_arr.size else -1
    if max_label >= resolved:
        raise ValidationError(f"{path}: label {max_label} >= class count {resolved}")
    return Dataset(features, labels_arr, resolved, name or str(path))


@dataclass(frozen=True)
class SynthSpec:
    """Rotated-blobs benchmark: C Gaussian blobs on the unit circle, the
    target copy rotated by shift_angle degrees, both embedded into dim
    dimensions by one shared random orthonormal projection."""
    classes: int = 4
    dim: int = 32
    per_class: int = 200
    shift_angle: float = 50.0
    noise_sigma: float = 0.25
    projection_seed: int = 0
    sample_seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"synth: classes must be >= 2, got {self.classes}")
        if self.dim < 2:
            raise ConfigError(f"synth: dim must be >= 2, got {self.dim}")
        if self.per_class < 1:
            raise ConfigError(f"synth: per_class must be >= 1, got {self.per_class}")
        if not 0.0 <= float(self.shift_angle) < 360.0:
            raise ConfigError(f"synth: shift_angle must lie in [0, 360), got {self.shift_angle}")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0.0):
            raise ConfigError(f"synth: noise_sigma must be >= 0, got {self.noise_sigma}")


def _blob_coords(spec: SynthSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Class-major 2-D samples around the unit-circle centers, plus labels."""
    angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
    centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    coords = np.repeat(centers, spec.per_class, axis=0)
    coords = coords + spec.noise_sigma * rng.standard_normal(coords.shape)
    labels = np.repeat(np.arange(spec.classes), spec.per_class)
    return coords, labels


def gen_rotated_blobs(spec: SynthSpec) -> tuple[Dataset, Dataset]:
    """Generate the (source, target) pair. Fully determined by the two seeds."""
    proj_rng = np.random.default_rng(spec.projection_seed)
    basis, _ = np.linalg.qr(proj_rng.standard_normal((spec.dim, 2)))  # orthonormal columns

    src_rng = np.random.default_rng([spec.sample_seed, 0])
    tgt_rng = np.random.default_rng([spec.sample_seed, 1])
    src2, src_labels = _blob_coords(spec, src_rng)
    tgt2, tgt_labels = _blob_coords(spec, tgt_rng)

    theta = np.deg2rad(spec.shift_angle)
    rot = np.array([[np.cos(theta), -np.sin(theta)],
                    [np.sin(theta), np.cos(theta)]])
    tgt2 = tgt2 @ rot.T

    source = Dataset(src2 @ basis.T, src_labels, spec.classes, "synth-source")
    target = Dataset(tgt2 @ basis.T, tgt_labels, spec.classes, "synth-target")
    return source, target
