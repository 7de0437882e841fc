"""Vector geometry: cosine similarity, validation centroid, 2-component PCA.

The PCA here is an analysis aid for plotting feature distributions; the
selectors never consume its output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DimMismatch, EmptyValidationSet, ZeroNormInput
from .rng import Xoshiro256StarStar
from .store import EmbeddingMatrix

POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000


@dataclass(frozen=True)
class Centroid:
    """Arithmetic mean of the source rows, not renormalized."""

    vector: np.ndarray
    source_count: int


@dataclass(frozen=True)
class Projection2D:
    points: np.ndarray            # (count, 2) float64
    explained_variance: tuple[float, float]


def centroid(validation: EmbeddingMatrix) -> Centroid:
    """Exact arithmetic mean of the validation rows in 64-bit accumulation."""
    if validation.count < 1:
        raise EmptyValidationSet("cannot average an empty validation set")
    mean = validation.as_float64().mean(axis=0)
    return Centroid(vector=mean, source_count=validation.count)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped into [-1, 1] against rounding overshoot."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"vector dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroNormInput("cosine is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_to_centroid(matrix: EmbeddingMatrix, center: Centroid) -> np.ndarray:
    """Row-wise cosine similarity to a fixed centroid (vectorized)."""
    rows = matrix.as_float64()
    if rows.shape[1] != center.vector.shape[0]:
        raise DimMismatch(
            f"matrix dim {rows.shape[1]} vs centroid dim {center.vector.shape[0]}"
        )
    nc = np.linalg.norm(center.vector)
    if nc == 0.0:
        raise ZeroNormInput("centroid is the zero vector")
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormInput(f"row {int(np.argmax(norms == 0.0))} has zero L2 norm")
    return np.clip(rows @ center.vector / (norms * nc), -1.0, 1.0)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    # Deterministic orientation: largest-magnitude coordinate made positive.
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def _power_iteration(apply_mat, dim: int, rng: Xoshiro256StarStar) -> tuple[np.ndarray, float]:
    v = rng.normals(dim)
    v /= np.linalg.norm(v)
    for _ in range(POWER_ITER_MAX):
        w = apply_mat(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v lies in the null space: eigenvalue 0, any unit vector works.
            return v, 0.0
        w /= nw
        if np.dot(w, v) < 0:
            w = -w
        delta = np.linalg.norm(w - v)
        v = w
        if delta <= POWER_ITER_TOL:
            break
    lam = float(np.dot(v, apply_mat(v)))
    return v, max(lam, 0.0)


def pca2(matrix: EmbeddingMatrix) -> Projection2D:
    """Project rows onto the top two principal directions.

    Eigen-pairs come from power iteration with deflation; when dim > count
    the iteration runs in the (count x count) Gram domain to bound memory.
    Eigenvectors are sign-fixed so the projection is deterministic.
    """
    if matrix.count < 3:
        raise DegenerateInput(f"need at least 3 rows, got {matrix.count}")
    if matrix.dim < 2:
        raise DegenerateInput(f"need dimension >= 2, got {matrix.dim}")

    x = matrix.as_float64()
    xc = x - x.mean(axis=0)
    n, d = xc.shape
    denom = n - 1
    total_var = float(np.sum(xc * xc)) / denom
    if total_var == 0.0:
        raise DegenerateInput("all rows identical: covariance is zero")

    rng = Xoshiro256StarStar(0x9CA2)

    if d <= n:
        cov = (xc.T @ xc) / denom

        def make_apply(deflate):
            def apply(v):
                w = cov @ v
                for u, lam in deflate:
                    w -= lam * np.dot(u, v) * u
                return w
            return apply

        pairs: list[tuple[np.ndarray, float]] = []
        for _ in range(2):
            v, lam = _power_iteration(make_apply(pairs), d, rng)
            # Re-orthogonalize against previous component to stop drift.
            for u, _ in pairs:
                v = v - np.dot(u, v) * u
            nv = np.linalg.norm(v)
            if nv > 0:
                v = v / nv
            pairs.append((v, lam))
        comps = [p[0] for p in pairs]
        lams = [p[1] for p in pairs]
    else:
        gram = (xc @ xc.T) / denom

        def make_apply(deflate):
            def apply(v):
                w = gram @ v
                for u, lam in deflate:
                    w -= lam * np.dot(u, v) * u
                return w
            return apply

        gpairs: list[tuple[np.ndarray, float]] = []
        for _ in range(2):
            u, lam = _power_iteration(make_apply(gpairs), n, rng)
            for uu, _ in gpairs:
                u = u - np.dot(uu, u) * uu
            nu = np.linalg.norm(u)
            if nu > 0:
                u = u / nu
            gpairs.append((u, lam))
        comps = []
        lams = []
        for u, lam in gpairs:
            w = xc.T @ u
            nw = np.linalg.norm(w)
            if nw == 0.0:
                # Null direction: pick a deterministic unit vector orthogonal
                # to the components found so far.
                w = rng.normals(d)
                for c in comps:
                    w -= np.dot(c, w) * c
                nw = np.linalg.norm(w)
            comps.append(w / nw)
            lams.append(lam)

    if lams[1] > lams[0]:
        comps.reverse()
        lams.reverse()
    comps = [_fix_sign(c) for c in comps]

    points = np.column_stack([xc @ comps[0], xc @ comps[1]])
    ev = (lams[0] / total_var, lams[1] / total_var)
    ev = (float(min(max(ev[0], 0.0), 1.0)), float(min(max(ev[1], 0.0), 1.0)))
    return Projection2D(points=points, explained_variance=ev)


def projection_to_csv(projection: Projection2D, ids, labels) -> str:
    """CSV export: header ``id,pc1,pc2,label``, 9 significant digits."""
    lines = ["id,pc1,pc2,label"]
    for i, (ident, label) in enumerate(zip(ids, labels)):
        pc1, pc2 = projection.points[i]
        lab = "" if label is None else str(label)
        lines.append(f"{ident},{pc1:.9g},{pc2:.9g},{lab}")
    return "\n".join(lines) + "\n"
