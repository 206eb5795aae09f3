"""Feature-population diagnostics: averaged Hausdorff distance, exact McNemar, probes."""

from fractions import Fraction
from math import comb

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, FormatError, ShapeError

PROBES = ("avg", "F", "P_last")
_CHUNK = 512


def _points(X, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError(f"{name} must be a nonempty N x d matrix, got shape {X.shape}")
    return X


def directed_average_distance(A, B):
    """Mean over a in A of the Euclidean distance to the nearest b in B."""
    total = 0.0
    for start in range(0, len(A), _CHUNK):
        total += cdist(A[start : start + _CHUNK], B).min(axis=1).sum()
    return total / len(A)


def averaged_hausdorff(A, B):
    """max(directed(A, B), directed(B, A)) with mean nearest-neighbour distances."""
    A = _points(A, "A")
    B = _points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"point sets differ in dimension: {A.shape} vs {B.shape}")
    return max(directed_average_distance(A, B), directed_average_distance(B, A))


def mcnemar_test(b, c):
    """Exact two-sided McNemar p-value from the two discordant counts.

    ``p = min(1, 2 * sum_{i <= min(b, c)} C(b + c, i) / 2^(b + c))``,
    evaluated in exact rational arithmetic.
    """
    if b < 0 or c < 0:
        raise ValueError(f"discordant counts must be nonnegative, got {b}, {c}")
    n = b + c
    if n == 0:
        raise ValueError("McNemar test is undefined with no discordant pairs")
    tail = sum(comb(n, i) for i in range(min(b, c) + 1))
    return float(min(Fraction(1), Fraction(2 * tail, 2**n)))


def discordant_counts(pred_a, pred_b, labels):
    """(b, c): items only classifier A gets right, items only B gets right."""
    a_ok = np.asarray(pred_a) == np.asarray(labels)
    b_ok = np.asarray(pred_b) == np.asarray(labels)
    return int(np.sum(a_ok & ~b_ok)), int(np.sum(~a_ok & b_ok))


def dump_features(model, corpus, probe):
    """Per-document activations at the averaging layer, F's output, or P's last hidden layer."""
    if probe not in PROBES:
        raise ConfigError(f"probe must be one of {PROBES}, got {probe!r}")
    X = corpus.inputs()
    if probe == "avg":
        return X
    H = model.feature_extract(X)
    if probe == "F":
        return H
    return model.classifier_hidden(H)


def write_pointset(points, path):
    points = _points(points, "points")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in points.tolist():
            fh.write("\t".join(repr(v) for v in row) + "\n")


def read_pointset(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.rstrip("\n").split("\t")])
            except ValueError as exc:
                raise FormatError(str(exc), path, lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(
                    f"expected {len(rows[0])} columns, found {len(rows[-1])}", path, lineno
                )
    if not rows:
        raise FormatError("point set is empty", path)
    return np.array(rows, dtype=np.float64)
