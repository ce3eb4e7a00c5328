"""Feature-quality evaluation: linear probe accuracy, hypersphere
uniformity, and the wall-clock scaling harness."""

from __future__ import annotations

import json
import os
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .descriptor import batch_distance_matrices
from .encoder import Adam, TrainConfig, train_dae
from .errors import BadParam, IoError


@dataclass
class LabeledFeatureSet:
    features: np.ndarray
    labels: np.ndarray
    class_names: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise BadParam("features and labels must have equal length")
        if self.labels.min(initial=0) < 0 or (
                len(self.labels) and self.labels.max() >= len(self.class_names)):
            raise BadParam("labels must index class_names")

    @property
    def num_classes(self):
        return len(self.class_names)


def stratified_split(labels, train_fraction, seed):
    """Per-class shuffled index split; every class keeps >= 1 test sample."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n_train = min(int(round(train_fraction * len(idx))), len(idx) - 1)
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    return np.concatenate(train_idx), np.concatenate(test_idx)


def linear_probe(featset: LabeledFeatureSet, split: float = 0.8,
                 epochs: int = 200, lr: float = 1e-2, seed: int = 0,
                 split_indices=None) -> float:
    """Held-out accuracy of one softmax layer on frozen features.

    Features are standardized with train-split statistics (an affine map,
    so the probe stays linear).  Stratified split, full-batch
    adaptive-moment updates, zero init; the seed drives only the split so
    results are reproducible.  split_indices overrides the internal split
    when the caller needs to share one with encoder pretraining.
    """
    x, y = featset.features, featset.labels
    classes = np.unique(y)
    if len(classes) < 2:
        raise BadParam("need at least 2 classes")
    counts = np.bincount(y, minlength=featset.num_classes)
    if counts[classes].min() < 10:
        raise BadParam("need >= 10 samples per class")
    if not 0 < split < 1:
        raise BadParam("split must be in (0, 1)")

    tr, te = split_indices if split_indices is not None else stratified_split(
        y, split, seed)
    mu = x[tr].mean(axis=0)
    sd = x[tr].std(axis=0) + 1e-8
    xtr, ytr = (x[tr] - mu) / sd, y[tr]
    n, d = xtr.shape
    c = featset.num_classes
    params = {"W": np.zeros((d, c)), "b": np.zeros(c)}
    opt = Adam(params, lr=lr)
    onehot = np.eye(c)[ytr]
    for _ in range(epochs):
        logits = xtr @ params["W"] + params["b"]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        opt.step({"W": xtr.T @ g, "b": g.sum(axis=0)})
    pred = (((x[te] - mu) / sd) @ params["W"] + params["b"]).argmax(axis=1)
    return float((pred == y[te]).mean())


def uniformity(features, max_exact: int = 5000, pairs: int = 1_000_000,
               seed: int = 0, with_se: bool = False):
    """-log E[exp(-2 ||f(x) - f(y)||^2)] over ordered feature pairs
    (self-pairs included); features are L2-normalized first.

    Exact up to max_exact features; beyond that the expectation is
    estimated from `pairs` uniform pair draws and the standard error of
    the estimate is available via with_se.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) < 2:
        raise BadParam("need >= 2 feature vectors")
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if norms.min() <= 0:
        raise BadParam("zero feature vector cannot be normalized")
    f = f / norms
    n = len(f)
    if n <= max_exact:
        # direct pairwise differences (not the Gram shortcut) so identical
        # features give exactly zero distance and F exactly 0.0
        total = 0.0
        chunk = max(1, int(6e7) // max(n * f.shape[1] * 8, 1))
        for lo in range(0, n, chunk):
            diff = f[lo:lo + chunk, None, :] - f[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diff, diff)
            total += np.exp(-2.0 * d2).sum()
        e = total / (n * n)
        se = 0.0
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=pairs)
        j = rng.integers(0, n, size=pairs)
        diff = f[i] - f[j]
        vals = np.exp(-2.0 * np.einsum("ij,ij->i", diff, diff))
        e = float(vals.mean())
        se = float(vals.std(ddof=1) / (e * np.sqrt(pairs)))
    value = float(-np.log(e)) + 0.0  # normalize -0.0 away
    return (value, se) if with_se else value


def _env_record():
    return {
        "record": "env",
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "numba_kernels": _kernels.USING_NUMBA,
        "machine": platform.machine(),
        "cpu_count": os.cpu_count(),
    }


def timing_scaling(counts, op: str = "distance_matrices", seed: int = 0,
                   repeats: int = 3) -> list[dict]:
    """Wall-clock scaling table at a fixed configuration.

    distance_matrices: batch kernel over synthetic 32-point curves,
    median of `repeats` runs after a warmup.  dae_training: one short
    fixed-budget training run per count.
    """
    counts = [int(c) for c in counts]
    if not counts:
        raise BadParam("counts must be non-empty")
    if sorted(counts) != counts:
        raise BadParam("counts must be sorted ascending")
    rng = np.random.default_rng(seed)
    rows = [_env_record()]
    if op == "distance_matrices":
        ctrl = np.cumsum(rng.standard_normal((max(counts), 32, 3)), axis=1)
        arcs = np.ones(max(counts))
        batch_distance_matrices(ctrl[:2], arcs[:2])  # warm the kernel
        chunk = 10_000  # bounded working set; production streams to disk
        for c in counts:
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                for lo in range(0, c, chunk):
                    batch_distance_matrices(ctrl[lo:lo + chunk],
                                            arcs[lo:lo + chunk])
                times.append(time.perf_counter() - t0)
            rows.append({"record": "timing", "op": op, "count": c,
                         "seconds": float(np.median(times))})
    elif op == "dae_training":
        data = rng.random((max(counts), 16, 16))
        cfg = TrainConfig(epochs=2, batch=128, hidden=(128, 64), latent_dim=32,
                          seed=seed)
        for c in counts:
            t0 = time.perf_counter()
            train_dae(data[:c], cfg)
            rows.append({"record": "timing", "op": op, "count": c,
                         "seconds": time.perf_counter() - t0})
    else:
        raise BadParam(f"unknown timing op {op!r}")
    return rows


def write_report(path, rows) -> None:
    """Line-delimited JSON records."""
    try:
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as e:
        raise IoError(str(e)) from e
