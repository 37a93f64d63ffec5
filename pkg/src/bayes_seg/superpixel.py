"""Over-segmentation into connected superpixels.

The default mode grows a spanning forest over the 4-connected pixel graph.
Edges are added greedily by the gain of an entropy-rate term plus a weighted
component-size balancing term, until exactly ``n`` components remain. Gains
only shrink as the forest grows, so stale heap entries are upper bounds and
are re-evaluated lazily.

The balancing weight grows with ``n``: the balancing gain of a merge is close
to 1 for any pair of small components and drops by about (merged size / pixel
count), so it only separates candidate merges once components near the target
size. Edges whose similarity is below ``DISSIMILAR_WEIGHT`` collect a
proportional share of the balancing gain.
"""

import heapq
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

from .raster_io import GrayImage
from .utils import ParameterError

logger = logging.getLogger(__name__)

DEFAULT_BALANCE = 0.5
DEFAULT_BANDWIDTH = 30.0
DISSIMILAR_WEIGHT = 0.1

_LN2 = math.log(2.0)

SegmentationMode = Literal["entropy", "grid"]


@dataclass(frozen=True)
class PixelGraph:
    """4-connected pixel graph; edge ``e`` joins ``sources[e] < targets[e]``."""

    width: int
    height: int
    sources: NDArray[np.int64]
    targets: NDArray[np.int64]
    weights: NDArray[np.float64]

    @property
    def num_nodes(self) -> int:
        return self.width * self.height

    @property
    def num_edges(self) -> int:
        return int(self.sources.size)

    def incident_weight(self) -> NDArray[np.float64]:
        """Sum of edge weights incident to each node."""
        n = self.num_nodes
        return np.bincount(self.sources, self.weights, n) + np.bincount(self.targets, self.weights, n)


def build_pixel_graph(img: GrayImage, bandwidth: float = DEFAULT_BANDWIDTH) -> PixelGraph:
    """Gaussian-similarity graph over 4-neighbours, edges in (source, target) order."""
    if not bandwidth > 0:
        raise ParameterError(f"bandwidth must be positive, got {bandwidth}")
    h, w = img.data.shape
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    sources = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    targets = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    order = np.lexsort((targets, sources))
    sources, targets = sources[order], targets[order]

    values = img.data.ravel().astype(np.float64)
    diff = values[sources] - values[targets]
    weights = np.exp(-(diff * diff) / (2.0 * bandwidth * bandwidth))
    return PixelGraph(w, h, sources, targets, weights)


def _xlogx(x: float) -> float:
    return x * math.log(x) if x > 0.0 else 0.0


def entropy_rate_gain(weight: float, rest_u: float, rest_v: float) -> float:
    """Entropy-rate increase (bits) from moving ``weight`` off the self-loops of both ends.

    ``rest_u`` and ``rest_v`` are the self-loop masses left after the move.
    """
    base = _xlogx(weight)
    gain = (_xlogx(weight + rest_u) - _xlogx(rest_u) - base) + (
        _xlogx(weight + rest_v) - _xlogx(rest_v) - base
    )
    return gain / _LN2


def balancing_gain(size_a: int, size_b: int, total: int) -> float:
    """Gain of the size-entropy-minus-count term when two components merge."""
    p, q = size_a / total, size_b / total
    return 1.0 + (_xlogx(p) + _xlogx(q) - _xlogx(p + q)) / _LN2


def balance_weight(balance: float, n: int, max_er_gain: float, max_balancing_gain: float) -> float:
    """Coefficient of the balancing term, in units of the largest initial entropy-rate gain."""
    if max_balancing_gain <= 0:
        return 0.0
    return balance * n * max_er_gain / max_balancing_gain


def balancing_credit(weights: NDArray[np.float64]) -> NDArray[np.float64]:
    """Share of the balancing gain each edge collects; 1 at or above the dissimilarity floor."""
    return np.minimum(weights / DISSIMILAR_WEIGHT, 1.0)


@dataclass(frozen=True)
class MergeResult:
    roots: NDArray[np.int64]
    gains: list[float]


def greedy_merge(graph: PixelGraph, n: int, balance: float = DEFAULT_BALANCE) -> MergeResult:
    """Lazy greedy forest growth until ``n`` components remain.

    Returns the component root of every node and the accepted gains, which are
    non-increasing. Ties go to the lowest (source, target) edge.
    """
    num_nodes = graph.num_nodes
    if not 1 <= n <= num_nodes:
        raise ParameterError(f"superpixel count must lie in 1..{num_nodes}, got {n}")
    if balance < 0:
        raise ParameterError(f"balance must be non-negative, got {balance}")

    total = 2.0 * float(graph.weights.sum())
    norm = (graph.weights / total).tolist() if total > 0 else [0.0] * graph.num_edges
    credit = balancing_credit(graph.weights).tolist()
    loops = (graph.incident_weight() / total).tolist() if total > 0 else [0.0] * num_nodes
    sources = graph.sources.tolist()
    targets = graph.targets.tolist()

    parent = list(range(num_nodes))
    size = [1] * num_nodes

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def er_gain(e: int) -> float:
        w = norm[e]
        return entropy_rate_gain(
            w, max(loops[sources[e]] - w, 0.0), max(loops[targets[e]] - w, 0.0)
        )

    er0 = [er_gain(e) for e in range(graph.num_edges)]
    b0 = balancing_gain(1, 1, num_nodes)
    scale = balance_weight(balance, n, max(er0, default=0.0), b0)

    def gain(e: int, size_u: int, size_v: int) -> float:
        return er_gain(e) + scale * credit[e] * balancing_gain(size_u, size_v, num_nodes)

    heap = [
        (-(er0[e] + scale * credit[e] * b0), sources[e], targets[e], e)
        for e in range(graph.num_edges)
    ]
    heapq.heapify(heap)

    components = num_nodes
    gains: list[float] = []
    while components > n and heap:
        _, u, v, e = heapq.heappop(heap)
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        g = gain(e, size[ru], size[rv])
        if heap and (-g, u, v) > heap[0][:3]:
            heapq.heappush(heap, (-g, u, v, e))
            continue
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        size[ru] += size[rv]
        loops[u] -= norm[e]
        loops[v] -= norm[e]
        components -= 1
        gains.append(g)

    roots = np.fromiter((find(i) for i in range(num_nodes)), dtype=np.int64, count=num_nodes)
    return MergeResult(roots, gains)


@dataclass(frozen=True)
class SuperpixelMap:
    """Partition of the pixels into ``n`` superpixels with ids in raster order.

    ``totals`` holds the intensity sum of each superpixel, so pixel-weighted
    means over unions of superpixels are exact.
    """

    assignment: NDArray[np.int32]
    n: int
    means: NDArray[np.float64]
    sizes: NDArray[np.int64]
    totals: NDArray[np.int64]
    adjacency: tuple[frozenset[int], ...]

    @classmethod
    def from_assignment(cls, img: GrayImage, assignment: NDArray[np.integer]) -> "SuperpixelMap":
        """Derive statistics and adjacency from any per-pixel labelling.

        Ids are renumbered by the raster position of each region's first pixel.
        """
        if assignment.shape != img.data.shape:
            raise ParameterError(
                f"assignment shape {assignment.shape} does not match image {img.data.shape}"
            )
        flat = np.asarray(assignment).ravel()
        _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
        rank = np.empty(first.size, dtype=np.int32)
        rank[np.argsort(first, kind="stable")] = np.arange(first.size, dtype=np.int32)
        ids = rank[inverse.ravel()].reshape(img.data.shape)
        n = int(first.size)

        sizes = np.bincount(ids.ravel(), minlength=n).astype(np.int64)
        totals = np.bincount(ids.ravel(), weights=img.data.ravel(), minlength=n).astype(np.int64)
        means = totals / sizes
        return cls(ids, n, means, sizes, totals, _adjacency(ids, n))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Adjacency as ascending id tuples, for deterministic iteration."""
        return tuple(tuple(sorted(adj)) for adj in self.adjacency)

    def is_partition_connected(self) -> bool:
        """True when every superpixel is a single 4-connected component."""
        for i, box in enumerate(ndimage.find_objects(self.assignment + 1)):
            if box is None:
                return False
            _, count = ndimage.label(self.assignment[box] == i)
            if count != 1:
                return False
        return True


def _adjacency(ids: NDArray[np.int32], n: int) -> tuple[frozenset[int], ...]:
    pairs = [
        np.stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()], axis=1),
        np.stack([ids[:-1, :].ravel(), ids[1:, :].ravel()], axis=1),
    ]
    edges = np.concatenate(pairs)
    edges = edges[edges[:, 0] != edges[:, 1]]
    edges.sort(axis=1)
    edges = np.unique(edges, axis=0)

    adjacency: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges.tolist():
        adjacency[a].add(b)
        adjacency[b].add(a)
    return tuple(frozenset(s) for s in adjacency)


def grid_superpixels(img: GrayImage, rows: int, cols: int) -> SuperpixelMap:
    """Rectangular tiling into ``rows`` x ``cols`` superpixels, intensity ignored."""
    h, w = img.data.shape
    if not (1 <= rows <= h and 1 <= cols <= w):
        raise ParameterError(f"grid {rows}x{cols} does not fit a {h}x{w} image")
    row_of = (np.arange(h) * rows) // h
    col_of = (np.arange(w) * cols) // w
    assignment = row_of[:, None] * cols + col_of[None, :]
    return SuperpixelMap.from_assignment(img, assignment)


def _grid_shape(n: int, h: int, w: int) -> tuple[int, int]:
    candidates = [(r, n // r) for r in range(1, n + 1) if n % r == 0 and r <= h and n // r <= w]
    if not candidates:
        raise ParameterError(f"{n} tiles cannot be laid out as a grid on a {h}x{w} image")
    return min(candidates, key=lambda rc: (abs(rc[0] - rc[1]), rc[0]))


def oversegment(
    img: GrayImage,
    n: int,
    balance: float = DEFAULT_BALANCE,
    bandwidth: float = DEFAULT_BANDWIDTH,
    mode: SegmentationMode = "entropy",
) -> SuperpixelMap:
    """Partition ``img`` into exactly ``n`` 4-connected superpixels."""
    total = img.width * img.height
    if not 1 <= n <= total:
        raise ParameterError(f"superpixel count must lie in 1..{total}, got {n}")

    if mode == "grid":
        rows, cols = _grid_shape(n, img.height, img.width)
        return grid_superpixels(img, rows, cols)

    graph = build_pixel_graph(img, bandwidth)
    merged = greedy_merge(graph, n, balance)
    sp = SuperpixelMap.from_assignment(img, merged.roots.reshape(img.data.shape))
    logger.debug(
        "over-segmented %dx%d image into %d superpixels (%d merges)",
        img.width,
        img.height,
        sp.n,
        len(merged.gains),
    )
    return sp
