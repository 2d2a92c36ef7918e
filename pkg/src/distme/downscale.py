"""Change of support from point clouds to a regular lattice by kNN averaging."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Lattice",
    "LatticeSummary",
    "build_lattice",
    "proportional_k",
    "knn_indices",
    "knn_aggregate",
    "brute_force_knn",
    "jitter_covariances",
    "choose_k0",
    "split_layers",
    "summary_columns",
]


@dataclass
class Lattice:
    xmin: float
    ymin: float
    xmax: float
    ymax: float
    nx: int
    ny: int

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_size(self):
        return (self.xmax - self.xmin) / self.nx, (self.ymax - self.ymin) / self.ny

    @property
    def centers(self) -> np.ndarray:
        """Cell centres, row-major (x varies fastest)."""
        dx, dy = self.cell_size
        cx = self.xmin + (np.arange(self.nx) + 0.5) * dx
        cy = self.ymin + (np.arange(self.ny) + 0.5) * dy
        gx, gy = np.meshgrid(cx, cy)
        return np.column_stack([gx.ravel(), gy.ravel()])


def build_lattice(bbox, target: int) -> Lattice:
    """Near-square cells covering ``bbox = (xmin, ymin, xmax, ymax)``.

    The grid has ``round(sqrt(target w/h))`` columns and
    ``round(sqrt(target h/w))`` rows; if that total misses ``target`` by more
    than 5% the closest admissible factorization with the most square cells
    is taken instead.
    """
    xmin, ymin, xmax, ymax = map(float, bbox)
    w, h = xmax - xmin, ymax - ymin
    if not (w > 0 and h > 0):
        raise ValueError(f"degenerate bounding box {bbox}")
    if target < 1:
        raise ValueError("target cell count must be positive")
    nx = max(1, round(math.sqrt(target * w / h)))
    ny = max(1, round(math.sqrt(target * h / w)))
    if abs(nx * ny - target) > 0.05 * target:
        best = None
        for cx in range(1, target + 1):
            cy = max(1, round(target / cx))
            if abs(cx * cy - target) > 0.05 * target:
                continue
            aspect = abs(math.log((w / cx) / (h / cy)))
            if best is None or aspect < best[0]:
                best = (aspect, cx, cy)
        if best is not None:
            _, nx, ny = best
    return Lattice(xmin, ymin, xmax, ymax, int(nx), int(ny))


def proportional_k(sizes, k0: int, base_size: int | None = None):
    """Neighbour counts proportional to series sizes.

    ``k0`` belongs to the smallest series (or to ``base_size`` when given);
    every series gets ``floor(k0 * n_j / base)``.
    """
    sizes = [int(n) for n in sizes]
    base = min(sizes) if base_size is None else int(base_size)
    return [(k0 * n) // base for n in sizes]


@dataclass
class LatticeSummary:
    """Per-cell kNN summaries of one variable.

    ``means`` has shape ``(S, M)`` with ``M = 1`` for a single-layer variable;
    ``cov`` holds the ``(S, M, M)`` sample covariances across layers for
    multi-layer variables.
    """

    name: str
    lattice: Lattice
    k: int
    means: np.ndarray
    cov: np.ndarray | None
    n_neighbors: np.ndarray
    max_distance: np.ndarray

    @property
    def layers(self) -> int:
        return self.means.shape[1]


def knn_indices(points, centers, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest points of every centre, ties to the smaller index.

    Returned rows are sorted ascending by point index.
    """
    points = np.asarray(points, dtype=float)
    centers = np.asarray(centers, dtype=float)
    n = points.shape[0]
    if n == 0:
        raise ValueError("empty point cloud")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    tree = cKDTree(points)
    kq = min(k + 1, n)
    dist, idx = tree.query(centers, k=kq)
    dist = dist.reshape(len(centers), kq)
    idx = idx.reshape(len(centers), kq)
    out = np.empty((len(centers), k), dtype=np.int64)
    for c in range(len(centers)):
        dk = dist[c, k - 1]
        tie = kq > k and dist[c, k] == dk
        if tie or np.count_nonzero(dist[c, :k] == dk) > 1:
            # resolve ties at the k-th distance by point index
            cand = np.asarray(tree.query_ball_point(centers[c], dk * (1 + 1e-12) + 1e-300))
            d = np.sqrt(np.sum((points[cand] - centers[c]) ** 2, axis=1))
            order = np.lexsort((cand, d))
            out[c] = np.sort(cand[order[:k]])
        else:
            out[c] = np.sort(idx[c, :k])
    return out


def brute_force_knn(points, centers, k: int) -> np.ndarray:
    """Exhaustive O(S n) version of :func:`knn_indices`."""
    points = np.asarray(points, dtype=float)
    out = []
    for c in np.asarray(centers, dtype=float):
        d = np.sqrt(np.sum((points - c) ** 2, axis=1))
        order = np.lexsort((np.arange(len(points)), d))
        out.append(np.sort(order[:k]))
    return np.array(out, dtype=np.int64)


def _summaries(values, idx):
    V = values[idx]  # (S, k, M)
    means = V.mean(axis=1)
    k = idx.shape[1]
    if k > 1:
        D = V - means[:, None, :]
        cov = np.einsum("skm,skl->sml", D, D) / (k - 1)
    else:
        cov = np.zeros((idx.shape[0], values.shape[1], values.shape[1]))
    return means, cov


def knn_aggregate(points, values, lattice: Lattice, k: int, name: str = "value") -> LatticeSummary:
    """kNN means (and covariances across layers) at every lattice cell.

    ``values`` is ``(n,)`` for one layer or ``(n, M)`` for ``M`` layers
    measured at the same points.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    points = np.asarray(points, dtype=float)
    centers = lattice.centers
    idx = knn_indices(points, centers, k)
    means, cov = _summaries(values, idx)
    dmax = np.sqrt(np.max(np.sum((points[idx] - centers[:, None, :]) ** 2, axis=2), axis=1))
    return LatticeSummary(
        name, lattice, k, means, cov if values.shape[1] > 1 else None,
        np.full(len(centers), k), dmax,
    )


def jitter_covariances(cov, rel: float = 1e-8) -> np.ndarray:
    """Add ``rel`` times the mean diagonal to each diagonal."""
    cov = np.array(cov, dtype=float, copy=True)
    M = cov.shape[-1]
    mdiag = np.trace(cov, axis1=-2, axis2=-1) / M
    # all-zero matrices still need a positive diagonal
    mdiag = np.where(mdiag > 0, mdiag, 1.0)
    cov[..., np.arange(M), np.arange(M)] += rel * mdiag[..., None]
    return cov


def choose_k0(points, lattice: Lattice, max_radius: float | None = None, k_max: int = 200) -> int:
    """Neighbour count for the sparsest series from a radius criterion.

    Returns the largest ``k`` whose neighbours all lie within
    ``max_radius`` (default: two cell diagonals) of every cell centre;
    raises if even ``k = 1`` fails.
    """
    dx, dy = lattice.cell_size
    if max_radius is None:
        max_radius = 2 * math.hypot(dx, dy)
    points = np.asarray(points, dtype=float)
    tree = cKDTree(points)
    k_max = min(k_max, len(points))
    dist, _ = tree.query(lattice.centers, k=k_max)
    dist = dist.reshape(lattice.n_cells, k_max)
    worst = dist.max(axis=0)  # k-th neighbour distance of the worst cell
    ok = np.flatnonzero(worst <= max_radius)
    if ok.size == 0:
        raise ValueError("no neighbour count keeps every cell within the radius")
    return int(ok[-1] + 1)


def split_layers(columns):
    """Group value columns into variables.

    Columns ``<p>_1 .. <p>_M`` (M >= 2) form one multi-layer variable ``p``;
    every other column is a single-layer variable.
    """
    groups, used = [], set()
    for c in columns:
        if c in used:
            continue
        prefix, _, suffix = c.rpartition("_")
        if prefix and suffix == "1" and f"{prefix}_2" in columns:
            layers = []
            m = 1
            while f"{prefix}_{m}" in columns:
                layers.append(f"{prefix}_{m}")
                m += 1
            groups.append((prefix, layers))
            used.update(layers)
        else:
            groups.append((c, [c]))
            used.add(c)
    return groups


def summary_columns(summaries, se_scale=False):
    """Flatten lattice summaries into output columns.

    Multi-layer variables give ``<p>_1..<p>_M`` means and jittered
    ``<p>_cov_jk`` covariances (divided by ``k`` with ``se_scale``), the
    layout the model reads for replicated covariates.
    """
    lattice = summaries[0].lattice
    centers = lattice.centers
    cols = {"cell": np.arange(lattice.n_cells), "cx": centers[:, 0], "cy": centers[:, 1]}
    desc = {"cell": "cell index, row-major with x fastest", "cx": "cell centre x", "cy": "cell centre y"}
    for s in summaries:
        cols[f"k_{s.name}"] = s.n_neighbors
        desc[f"k_{s.name}"] = f"neighbours averaged for {s.name}"
        if s.cov is None:
            cols[s.name] = s.means[:, 0]
            desc[s.name] = f"kNN mean of {s.name}"
            continue
        M = s.layers
        for m in range(M):
            cols[f"{s.name}_{m + 1}"] = s.means[:, m]
            desc[f"{s.name}_{m + 1}"] = f"kNN mean of {s.name} layer {m + 1}"
        cov = s.cov / s.k if se_scale else s.cov
        cov = jitter_covariances(cov)
        for j in range(M):
            for k in range(j, M):
                name = f"{s.name}_cov_{j + 1}{k + 1}"
                cols[name] = cov[:, j, k]
                desc[name] = f"kNN {'standard error ' if se_scale else ''}covariance of {s.name} layers {j + 1},{k + 1}"
    return cols, desc
