"""Axis-aligned bounding-volume hierarchy over triangles.

The tree is built once in numpy (median split on the longest centroid axis)
and stored as flat arrays so that both the compiled and the pure-Python
closest-point kernels can traverse it without touching Python objects.
"""

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 4


@dataclass
class TriBVH:
    """Flat BVH arrays. Internal nodes: left/right are child node ids and
    count == 0. Leaves: left == -1, start/count index into ``order``."""

    bb_min: np.ndarray   # (nodes, 3) float64
    bb_max: np.ndarray   # (nodes, 3) float64
    left: np.ndarray     # (nodes,) int32
    right: np.ndarray    # (nodes,) int32
    start: np.ndarray    # (nodes,) int32
    count: np.ndarray    # (nodes,) int32
    order: np.ndarray    # (ntris,) int32, permutation of triangle ids


def build(tris: np.ndarray) -> TriBVH:
    """Build a BVH for ``tris`` of shape (T, 3, 3)."""
    ntris = tris.shape[0]
    if ntris == 0:
        raise ValueError("cannot build a BVH over zero triangles")
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    centroids = tris.mean(axis=1)

    bb_min, bb_max = [], []
    left, right, start, count = [], [], [], []
    order = np.arange(ntris, dtype=np.int64)

    # Iterative build; stack holds (node_id, lo_idx, hi_idx) ranges of `order`.
    def new_node():
        bb_min.append(None)
        bb_max.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    root = new_node()
    stack = [(root, 0, ntris)]
    while stack:
        node, a, b = stack.pop()
        ids = order[a:b]
        bb_min[node] = lo[ids].min(axis=0)
        bb_max[node] = hi[ids].max(axis=0)
        n = b - a
        if n <= LEAF_SIZE:
            start[node] = a
            count[node] = n
            continue
        cen = centroids[ids]
        extent = cen.max(axis=0) - cen.min(axis=0)
        axis = int(np.argmax(extent))
        # argsort(kind="stable") keeps the build deterministic under ties
        perm = np.argsort(cen[:, axis], kind="stable")
        order[a:b] = ids[perm]
        mid = a + n // 2
        lc = new_node()
        rc = new_node()
        left[node] = lc
        right[node] = rc
        stack.append((lc, a, mid))
        stack.append((rc, mid, b))

    return TriBVH(
        bb_min=np.ascontiguousarray(np.array(bb_min, dtype=np.float64)),
        bb_max=np.ascontiguousarray(np.array(bb_max, dtype=np.float64)),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        start=np.array(start, dtype=np.int32),
        count=np.array(count, dtype=np.int32),
        order=order.astype(np.int32),
    )
