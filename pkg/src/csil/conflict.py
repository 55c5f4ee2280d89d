"""Topology diagnostics over fingerprint matrices.

The degree of conflict of a fingerprint matrix is the sum of pairwise cosine
similarities over all fingerprint pairs. Its minimum over C unit vectors is
-C/2, attained exactly when the unit fingerprints sum to the zero vector;
its maximum, C(C-1)/2, is attained when all fingerprints collide into one
direction. Lower is better: a model whose conflict sits at -C/2 has maximally
separated its classes in the embedding space.
"""

from __future__ import annotations

import csv

import numpy as np


def _check_fingerprints(fingerprints: np.ndarray) -> np.ndarray:
    fp = np.asarray(fingerprints, dtype=np.float64)
    if fp.ndim != 2:
        raise ValueError(f"fingerprints must be a matrix, got shape {fp.shape}")
    norms = np.sqrt((fp * fp).sum(axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"fingerprint row {int(zero[0])} has zero norm")
    return fp / norms[:, None]


def similarity_matrix(fingerprints: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; symmetric, unit diagonal, entries in [-1, 1]."""
    unit = _check_fingerprints(fingerprints)
    s = unit @ unit.T
    s = (s + s.T) / 2.0
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return s


def degree_of_conflict(fingerprints: np.ndarray) -> float:
    """Sum of the strict upper triangle of the similarity matrix."""
    fp = np.asarray(fingerprints)
    if fp.ndim != 2 or fp.shape[0] < 2:
        raise ValueError("degree_of_conflict needs at least 2 fingerprints")
    s = similarity_matrix(fp)
    return float(s[np.triu_indices(s.shape[0], k=1)].sum())


def optimal_doc(n_classes: int) -> float:
    """The conflict value of a maximally separated fingerprint set: -C/2."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    return -n_classes / 2.0

def mean_pairwise_similarity(n_classes: int) -> float:
    """Mean pairwise cosine at the optimum: -1/(C-1), i.e. -C/2 over C(C-1)/2 pairs."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    return -1.0 / (n_classes - 1)


def save_similarity_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(v)) for v in row])


def load_similarity_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh)]
    return np.asarray(rows)
