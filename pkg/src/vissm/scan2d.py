"""1D visitation orders over a 2D patch grid.

A ScanOrder maps grid cells (flattened row-major) to sequence positions:
``order[k]`` is the flat raster index of the k-th cell visited. Full orders
are permutations of 0..h*w-1; a partial order (used by the atrous strategy,
whose members jointly partition the grid) visits an injective subset.
``inverse[cell]`` recovers the visitation rank, -1 for unvisited cells.

A MultiScan bundles several orders over the same grid with a merge rule for
recombining per-direction outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScanOrder:
    h: int
    w: int
    order: np.ndarray  # (k,) int, visitation sequence of flat raster indices
    inverse: np.ndarray = field(init=False)

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.intp)
        object.__setattr__(self, "order", order)
        n = self.h * self.w
        vals = order.tolist()
        if len(set(vals)) != len(vals) or (vals and (min(vals) < 0 or max(vals) >= n)):
            raise ValueError(f"order entries must be distinct cells in 0..{n - 1}")
        inv = np.full(n, -1, dtype=np.intp)
        inv[order] = np.arange(len(order), dtype=np.intp)
        object.__setattr__(self, "inverse", inv)

    def __len__(self):
        return len(self.order)

    @property
    def full(self) -> bool:
        return len(self.order) == self.h * self.w

    def reversed_order(self) -> "ScanOrder":
        return ScanOrder(self.h, self.w, self.order[::-1].copy())


@dataclass(frozen=True)
class MultiScan:
    directions: tuple
    merge: str = "sum"  # {"sum", "mean"}

    def __post_init__(self):
        dirs = tuple(self.directions)
        object.__setattr__(self, "directions", dirs)
        if not dirs:
            raise ValueError("MultiScan needs at least one direction")
        h, w = dirs[0].h, dirs[0].w
        if any(d.h != h or d.w != w for d in dirs):
            raise ValueError("all directions must share the same grid extents")
        if self.merge not in ("sum", "mean"):
            raise ValueError(f"unknown merge rule {self.merge!r}")

    @property
    def h(self):
        return self.directions[0].h

    @property
    def w(self):
        return self.directions[0].w

    def visit_counts(self) -> np.ndarray:
        """How many directions visit each grid cell (mean-merge divisor)."""
        counts = np.zeros(self.h * self.w, dtype=np.intp)
        for d in self.directions:
            counts[d.order] += 1
        return counts


def _check_extents(h: int, w: int) -> None:
    if h < 1 or w < 1:
        raise ValueError(f"grid extents must be positive, got ({h}, {w})")


def raster_scan(h: int, w: int) -> ScanOrder:
    """Row-major order: the identity permutation."""
    _check_extents(h, w)
    return ScanOrder(h, w, np.arange(h * w, dtype=np.intp))


def bidirectional(order: ScanOrder) -> MultiScan:
    """The order paired with its reversal."""
    return MultiScan((order, order.reversed_order()))


def cross_scan(h: int, w: int, merge: str = "sum") -> MultiScan:
    """Row-major, reversed row-major, column-major, reversed column-major."""
    _check_extents(h, w)
    row = raster_scan(h, w)
    col_order = np.arange(h * w, dtype=np.intp).reshape(h, w).T.reshape(-1)
    col = ScanOrder(h, w, col_order)
    return MultiScan((row, row.reversed_order(), col, col.reversed_order()), merge)


def zigzag_scan(h: int, w: int) -> ScanOrder:
    """Serpentine: even rows left-to-right, odd rows right-to-left."""
    _check_extents(h, w)
    rows = []
    for r in range(h):
        cells = np.arange(r * w, (r + 1) * w, dtype=np.intp)
        rows.append(cells if r % 2 == 0 else cells[::-1])
    return ScanOrder(h, w, np.concatenate(rows))


def local_scan(h: int, w: int, win: int) -> ScanOrder:
    """Windows visited row-major; raster order inside each window.

    Extents must be divisible by the window side; padding would break the
    bijection contract, so it is a hard error instead.
    """
    _check_extents(h, w)
    if win < 1 or h % win != 0 or w % win != 0:
        raise ValueError(
            f"window {win} must divide both extents ({h}, {w}); choose a divisor"
        )
    order = []
    for wr in range(h // win):
        for wc in range(w // win):
            for r in range(wr * win, (wr + 1) * win):
                for c in range(wc * win, (wc + 1) * win):
                    order.append(r * w + c)
    return ScanOrder(h, w, np.array(order, dtype=np.intp))


def efficient_scan(h: int, w: int, stride: int, merge: str = "sum") -> MultiScan:
    """Atrous decimation: stride^2 partial orders that partition the grid.

    Member (i, j) visits exactly the cells with
    (row % stride, col % stride) == (i, j), in raster order of the decimated
    subgrid. With stride 1 this degenerates to a single raster order.
    """
    _check_extents(h, w)
    if stride < 1 or h % stride != 0 or w % stride != 0:
        raise ValueError(
            f"stride {stride} must divide both extents ({h}, {w}); choose a divisor"
        )
    orders = []
    for i in range(stride):
        for j in range(stride):
            sub = [r * w + c for r in range(i, h, stride) for c in range(j, w, stride)]
            orders.append(ScanOrder(h, w, np.array(sub, dtype=np.intp)))
    return MultiScan(tuple(orders), merge)


def gather(tokens, order: ScanOrder):
    """Select tokens (axis -2, or axis 0 for 1-D input) in visitation order."""
    arr = np.asarray(tokens)
    axis = 0 if arr.ndim == 1 else arr.ndim - 2
    if arr.shape[axis] != order.h * order.w:
        raise ValueError(
            f"token count {arr.shape[axis]} does not match grid size {order.h * order.w}"
        )
    return np.take(arr, order.order, axis=axis)


def scatter(tokens, order: ScanOrder):
    """Place visitation-ordered tokens back at their grid cells.

    For a full order this inverts gather exactly; for a partial order the
    unvisited cells are zero (partition members then sum to the identity).
    """
    arr = np.asarray(tokens)
    axis = 0 if arr.ndim == 1 else arr.ndim - 2
    if arr.shape[axis] != len(order):
        raise ValueError(
            f"token count {arr.shape[axis]} does not match order length {len(order)}"
        )
    shape = list(arr.shape)
    shape[axis] = order.h * order.w
    out = np.zeros(shape, dtype=arr.dtype)
    key = [slice(None)] * arr.ndim
    key[axis] = order.order
    out[tuple(key)] = arr
    return out


def rank_grid(order: ScanOrder) -> np.ndarray:
    """(h, w) array of visitation ranks (-1 where a partial order skips)."""
    return order.inverse.reshape(order.h, order.w).copy()


STRATEGIES = ("raster", "bidirectional", "cross", "zigzag", "local", "efficient")


def make_scan(strategy: str, h: int, w: int, win: int = 2, stride: int = 2,
              merge: str = "sum"):
    """Build a ScanOrder or MultiScan by strategy name."""
    if strategy == "raster":
        return raster_scan(h, w)
    if strategy == "bidirectional":
        return MultiScan(bidirectional(raster_scan(h, w)).directions, merge)
    if strategy == "cross":
        return cross_scan(h, w, merge)
    if strategy == "zigzag":
        return zigzag_scan(h, w)
    if strategy == "local":
        return local_scan(h, w, win)
    if strategy == "efficient":
        return efficient_scan(h, w, stride, merge)
    raise ValueError(f"unknown scan strategy {strategy!r}; choose one of {STRATEGIES}")
