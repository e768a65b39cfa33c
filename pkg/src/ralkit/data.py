"""Datasets, kernels, Gram matrices, and the two loss functions.

Shared numeric substrate for the whole package.  Labels live in {-1, +1} with
0 standing for "unknown"; index sets are materialized as sorted integer
arrays.  Two kernels are carried side by side: K for the simple classifier f
and a narrower-bandwidth K_o for the complex classifier f_o.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._kernels import gaussian_gram

UNKNOWN = 0

__all__ = [
    "UNKNOWN",
    "Dataset",
    "KernelSpec",
    "GramPair",
    "load_dataset",
    "compute_gram",
    "build_gram_pair",
    "default_kernel_pair",
    "median_pairwise_distance",
    "hinge",
    "l01",
]


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent index structure."""


@dataclass
class Dataset:
    """Feature matrix plus label bookkeeping.

    labels[i] is -1/+1 for labeled instances and 0 (UNKNOWN) otherwise.
    candidate_idx marks the unlabeled instances open for querying and must be
    a subset of unlabeled_idx.  ground_truth is harness-only (the simulated
    labeler answers from it) and never read by models.
    """

    features: np.ndarray
    labels: np.ndarray
    ground_truth: np.ndarray | None = None
    candidate_idx: np.ndarray | None = None  # None: every unlabeled instance is queryable
    ids: list[str] | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DatasetError("features must be a 2-D matrix")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.n,):
            raise DatasetError("labels must have one entry per instance")
        bad = ~np.isin(self.labels, (-1, UNKNOWN, 1))
        if np.any(bad):
            raise DatasetError(f"labels must be -1, +1 or unknown; offending rows {np.flatnonzero(bad).tolist()}")
        if self.ground_truth is not None:
            self.ground_truth = np.asarray(self.ground_truth, dtype=np.int64)
            if self.ground_truth.shape != (self.n,) or np.any(~np.isin(self.ground_truth, (-1, 1))):
                raise DatasetError("ground_truth must be a full -1/+1 vector")
        if self.candidate_idx is None:
            self.candidate_idx = self.unlabeled_idx.astype(np.intp)
        self.candidate_idx = np.asarray(self.candidate_idx, dtype=np.intp)
        self.candidate_idx = np.unique(self.candidate_idx)
        if np.any(self.labels[self.candidate_idx] != UNKNOWN):
            raise DatasetError("candidate_idx must only contain unlabeled instances")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNKNOWN)

    @property
    def unlabeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labels == UNKNOWN)

    def with_label(self, index: int, label: int) -> "Dataset":
        """Copy of the dataset with one more acquired label."""
        if label not in (-1, 1):
            raise DatasetError(f"label must be -1 or +1, got {label}")
        if self.labels[index] != UNKNOWN:
            raise DatasetError(f"instance {index} is already labeled")
        labels = self.labels.copy()
        labels[index] = label
        cands = self.candidate_idx[self.candidate_idx != index]
        return Dataset(self.features, labels, self.ground_truth, cands, self.ids)


@dataclass
class KernelSpec:
    """Kernel family: linear, or gaussian with entries exp(-||xi-xj||^2 / (2 bw^2))."""

    kind: str = "gaussian"
    bandwidth: float | None = None
    jitter: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.bandwidth is None or self.bandwidth <= 0:
                raise ValueError("gaussian kernel needs bandwidth > 0")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass
class GramPair:
    """The simple-kernel gram K and the complex-kernel gram K_o, jitter included.

    The specs used to build the grams ride along when available; complexity
    scoring needs them to evaluate kernel rows at perturbed inputs.
    """

    K: np.ndarray
    K_o: np.ndarray
    spec_simple: "KernelSpec | None" = None
    spec_complex: "KernelSpec | None" = None

    def __post_init__(self) -> None:
        for name, M in (("K", self.K), ("K_o", self.K_o)):
            M = np.asarray(M, dtype=np.float64)
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12:
                raise ValueError(f"{name} not symmetric to 1e-12")
            setattr(self, name, M)
        if self.K.shape != self.K_o.shape:
            raise ValueError("K and K_o must share a shape")

    @property
    def n(self) -> int:
        return self.K.shape[0]


def load_dataset(path: str, format: str = "csv") -> Dataset:
    """Read a dataset from CSV.

    Expected header: id, one column per feature, label, optional truth.  The
    label column holds -1, 1 or '?'.  All unlabeled instances are registered
    as query candidates.
    """
    if format != "csv":
        raise DatasetError(f"unsupported format {format!r}")
    ids: list[str] = []
    feats: list[list[float]] = []
    labels: list[int] = []
    truths: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        if header[0] != "id" or "label" not in header:
            raise DatasetError(f"{path}: header must start with 'id' and contain 'label'")
        label_col = header.index("label")
        truth_col = header.index("truth") if "truth" in header else None
        n_feat = label_col - 1
        if n_feat < 1:
            raise DatasetError(f"{path}: no feature columns before 'label'")
        for lineno, row in enumerate(reader, start=2):
            if len(row) == 0 or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0].strip())
            try:
                feats.append([float(v) for v in row[1 : 1 + n_feat]])
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: bad feature value ({exc})") from None
            lab = row[label_col].strip()
            if lab == "?":
                labels.append(UNKNOWN)
            elif lab in ("-1", "1", "+1"):
                labels.append(int(lab))
            else:
                raise DatasetError(f"{path}: line {lineno}: label must be -1, 1 or ?, got {lab!r}")
            if truth_col is not None:
                t = row[truth_col].strip()
                if t not in ("-1", "1", "+1"):
                    raise DatasetError(f"{path}: line {lineno}: truth must be -1 or 1, got {t!r}")
                truths.append(int(t))
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    return Dataset(
        features=np.array(feats, dtype=np.float64),
        labels=labels_arr,
        ground_truth=np.array(truths, dtype=np.int64) if truths else None,
        candidate_idx=np.flatnonzero(labels_arr == UNKNOWN),
        ids=ids,
    )


def compute_gram(data: Dataset, spec: KernelSpec) -> np.ndarray:
    """Gram matrix of the dataset under the given kernel, jitter on the diagonal."""
    X = data.features
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    if spec.kind == "linear":
        K = X @ X.T
    else:
        K = gaussian_gram(X, float(spec.bandwidth))
    K = np.asarray(K, dtype=np.float64)
    if spec.jitter:
        K = K + spec.jitter * np.eye(data.n)
    # symmetrize away accumulation noise
    return 0.5 * (K + K.T)


def median_pairwise_distance(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return 1.0
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


def default_kernel_pair(data: Dataset, jitter: float = 1e-8) -> tuple[KernelSpec, KernelSpec]:
    """Default kernels: gaussian at the median pairwise distance for f, and a
    4x narrower bandwidth for f_o so the complex class is genuinely richer."""
    bw = median_pairwise_distance(data.features)
    return (
        KernelSpec("gaussian", bandwidth=bw, jitter=jitter),
        KernelSpec("gaussian", bandwidth=0.25 * bw, jitter=jitter),
    )


def build_gram_pair(
    data: Dataset,
    spec_simple: KernelSpec | None = None,
    spec_complex: KernelSpec | None = None,
) -> GramPair:
    if spec_simple is None or spec_complex is None:
        default_simple, default_complex = default_kernel_pair(data)
        spec_simple = spec_simple or default_simple
        spec_complex = spec_complex or default_complex
    return GramPair(
        K=compute_gram(data, spec_simple),
        K_o=compute_gram(data, spec_complex),
        spec_simple=spec_simple,
        spec_complex=spec_complex,
    )


def hinge(u):
    """Hinge loss max(0, 1-u); accepts scalars or arrays."""
    return np.maximum(0.0, 1.0 - np.asarray(u, dtype=np.float64))


def l01(u):
    """Zero-one gate extended to the reals: 1 at 0, 0 outside [-1, 1],
    linear 1-|u| in between.  Exact {0, +-1} inputs match the discrete table."""
    return np.clip(1.0 - np.abs(np.asarray(u, dtype=np.float64)), 0.0, 1.0)
