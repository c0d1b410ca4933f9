"""
Non-local block grouping.

Full-band blocks are cut from the cube with a sliding window, clustered
with k-means++ / Lloyd, stacked into tensor groups of shape
(d_L * d_W, H, s_k), and averaged back into a cube after denoising.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from tensor.core import as_tensor

log = logging.getLogger(__name__)


@dataclass
class BlockGrid:
    """Window geometry, anchors and the unfolded blocks.

    `blocks` has shape (S, d_L * d_W, H); the spatial index of a block runs
    row-fastest, matching the tensor layout.
    """
    window: tuple[int, int]
    step: tuple[int, int]
    positions: list[tuple[int, int]]
    blocks: np.ndarray

    @property
    def size(self) -> int:
        return len(self.positions)


@dataclass
class TensorGroup:
    x: np.ndarray
    member_ids: np.ndarray

    @property
    def n_members(self) -> int:
        return len(self.member_ids)


def _anchors(length: int, window: int, step: int) -> list[int]:
    anchors = list(range(0, length - window + 1, step))
    # snap the last window to the border so every pixel is covered
    if anchors[-1] != length - window:
        anchors.append(length - window)
    return anchors


def extract_blocks(msi, window_rows: int, window_cols: int, step_rows: int, step_cols: int) -> BlockGrid:
    """Cut overlapping full-band blocks from an (L, W, H) cube."""
    msi = as_tensor(msi, "msi")
    rows, cols, bands = msi.shape
    if min(window_rows, window_cols, step_rows, step_cols) < 1:
        raise ValueError("window and step sizes must be positive")
    if window_rows > rows or window_cols > cols:
        raise ValueError(
            f"window {window_rows}x{window_cols} does not fit a {rows}x{cols} image"
        )
    positions = [(r, c) for c in _anchors(cols, window_cols, step_cols)
                 for r in _anchors(rows, window_rows, step_rows)]
    blocks = np.stack([
        np.reshape(msi[r:r + window_rows, c:c + window_cols, :],
                   (window_rows * window_cols, bands), order="F")
        for r, c in positions
    ])
    return BlockGrid(window=(window_rows, window_cols), step=(step_rows, step_cols),
                     positions=positions, blocks=blocks)


def _kmeans_pp_seeds(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    closest = cdist(features, features[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0.0:
            pick = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a seed
            free = np.setdiff1d(np.arange(n), chosen)
            pick = int(rng.choice(free))
        chosen.append(pick)
        closest = np.minimum(closest, cdist(features, features[[pick]], "sqeuclidean")[:, 0])
    return features[chosen].copy()


def _fill_empty(features: np.ndarray, labels: np.ndarray, centers: np.ndarray, k: int) -> bool:
    """Move the farthest point of a shared cluster into each empty one."""
    moved = False
    for j in range(k):
        if np.any(labels == j):
            continue
        counts = np.bincount(labels, minlength=k)
        dist = np.sum((features - centers[labels]) ** 2, axis=1)
        dist[counts[labels] <= 1] = -1.0
        far = int(np.argmax(dist))
        labels[far] = j
        centers[j] = features[far]
        moved = True
    return moved


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters in order of first appearance."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(order.size, dtype=np.int64)
    mapping[np.unique(labels)[order]] = np.arange(order.size)
    return mapping[labels]


def cluster_blocks(grid: BlockGrid, k: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations on flattened blocks.

    Returns one label in [0, k) per block; every cluster is non-empty and
    labels are numbered by first appearance.
    """
    n = grid.size
    if not 1 <= k <= n:
        raise ValueError(f"number of clusters must be in 1..{n}, got {k}")
    features = grid.blocks.reshape(n, -1)
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    if k == n:
        return np.arange(n, dtype=np.int64)

    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_seeds(features, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for it in range(max_iter):
        new_labels = np.argmin(cdist(features, centers, "sqeuclidean"), axis=1).astype(np.int64)
        _fill_empty(features, new_labels, centers, k)
        if np.array_equal(new_labels, labels):
            log.debug("k-means converged after %d iterations", it)
            break
        labels = new_labels
        for j in range(k):
            centers[j] = features[labels == j].mean(axis=0)
    _fill_empty(features, labels, centers, k)
    return _canonical(labels)


def form_groups(grid: BlockGrid, assignments, k: int | None = None) -> list[TensorGroup]:
    """Stack the blocks of each cluster along mode 3.

    Group j has shape (d_L * d_W, H, s_j) and keeps its member block ids in
    ascending order.
    """
    labels = np.asarray(assignments)
    if labels.shape != (grid.size,):
        raise ValueError(f"expected {grid.size} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("cluster labels must be integers")
    k = int(labels.max()) + 1 if k is None else int(k)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cluster label out of range 0..{k - 1}")
    groups = []
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            raise ValueError(f"cluster {j} has no blocks")
        groups.append(TensorGroup(x=np.stack(grid.blocks[members], axis=2), member_ids=members))
    return groups


def with_estimate(group: TensorGroup, x_hat: np.ndarray) -> TensorGroup:
    """Copy of `group` carrying the denoised tensor."""
    if x_hat.shape != group.x.shape:
        raise ValueError(f"estimate shape {x_hat.shape} does not match group {group.x.shape}")
    return replace(group, x=x_hat)


def aggregate(groups: list[TensorGroup], grid: BlockGrid, dims) -> np.ndarray:
    """Average every block contribution back into an (L, W, H) cube."""
    rows, cols, bands = (int(d) for d in dims)
    window_rows, window_cols = grid.window
    total = np.zeros((rows, cols, bands))
    weight = np.zeros((rows, cols, 1))
    seen = np.zeros(grid.size, dtype=bool)
    for group in groups:
        for j, block_id in enumerate(group.member_ids):
            r, c = grid.positions[block_id]
            block = np.reshape(group.x[:, :, j], (window_rows, window_cols, bands), order="F")
            total[r:r + window_rows, c:c + window_cols, :] += block
            weight[r:r + window_rows, c:c + window_cols, :] += 1.0
            seen[block_id] = True
    if not seen.all():
        raise ValueError(f"{int((~seen).sum())} blocks are missing from the groups")
    if np.any(weight == 0.0):
        raise RuntimeError("aggregation left pixels without any covering block")
    return total / weight
