"""Exact planar spatial queries.

Pairwise Euclidean distances, k-nearest-neighbour sets with tie detection,
and nearest-sample-unit (discrete Voronoi) assignment.  All results are
exact; acceleration never trades correctness for speed.  Distances equal up
to a relative slack of ``TIE_RTOL`` are treated as tied, which keeps hand
fixtures with symmetric geometry deterministic under floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .frame import PopulationFrame

#: relative tolerance grouping equal squared distances
TIE_RTOL = 1e-9


def squared_distances(coords: np.ndarray, point: np.ndarray) -> np.ndarray:
    d = coords - point
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]


@dataclass(frozen=True)
class NeighborList:
    """Neighbours of one unit, ascending by distance, ties by ascending id."""

    owner: int
    neighbors: tuple[tuple[int, float], ...]

    def ids(self) -> list[int]:
        return [nid for nid, _ in self.neighbors]


def sorted_neighbors(frame: PopulationFrame, pos: int) -> tuple[np.ndarray, np.ndarray]:
    """All other units sorted by (squared distance, id); returns (positions, d2)."""
    d2 = squared_distances(frame.coords, frame.coords[pos])
    others = np.concatenate([np.arange(pos), np.arange(pos + 1, frame.n_units)])
    order = others[np.lexsort((frame.ids[others], d2[others]))]
    return order, d2[order]


def _tied_block_end(d2: np.ndarray, start: int) -> int:
    """End (exclusive) of the tie group beginning at ``start``."""
    ref = d2[start]
    end = start + 1
    ceiling = ref * (1.0 + TIE_RTOL)
    while end < d2.size and d2[end] <= ceiling:
        end += 1
    return end


def knn_query(frame: PopulationFrame, unit_id: int, k: float) -> NeighborList:
    """Nearest neighbours of a unit for a possibly fractional count k.

    Returns the ceil(k) nearest units plus every unit tied (within
    ``TIE_RTOL``) with the ceil(k)-th distance; fewer entries only when
    the population holds fewer than ceil(k) other units.

    Raises ``KeyError`` for an unknown id and ``DomainError`` for k < 0.
    """
    if not (k >= 0.0) or not math.isfinite(k):
        raise DomainError(f"k must be a finite nonnegative real, got {k!r}")
    pos = frame.position_of(unit_id)
    k = _snap_integer(k)
    m = min(int(math.ceil(k)), frame.n_units - 1)
    if m == 0:
        return NeighborList(owner=int(unit_id), neighbors=())
    order, d2 = sorted_neighbors(frame, pos)
    end = m
    ceiling = d2[m - 1] * (1.0 + TIE_RTOL)
    while end < order.size and d2[end] <= ceiling:
        end += 1
    pairs = tuple(
        (int(frame.ids[order[t]]), float(math.sqrt(d2[t]))) for t in range(end)
    )
    return NeighborList(owner=int(unit_id), neighbors=pairs)


def _snap_integer(k: float, tol: float = 1e-9) -> float:
    r = round(k)
    if abs(k - r) <= tol * max(1.0, abs(r)):
        return float(r)
    return k


@dataclass(frozen=True)
class VoronoiAssignment:
    """Per-unit shares over sample units; each row of shares sums to 1."""

    unit_ids: np.ndarray
    shares: tuple[dict[int, float], ...]


def nearest_sample_shares(
    frame: PopulationFrame, sample_positions: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Tie mask of nearest sample units for every population unit.

    Returns ``(mask, counts)`` where ``mask[i, s]`` is True when sample
    unit ``s`` attains unit ``i``'s minimum distance (within ``TIE_RTOL``)
    and ``counts[i] = mask[i].sum()``.  Equal split among all minimizers.
    """
    sample_positions = np.asarray(sample_positions, dtype=np.intp)
    if sample_positions.size == 0:
        raise DomainError("sample must be nonempty for Voronoi assignment")
    centers = frame.coords[sample_positions]
    n_units = frame.n_units
    mask = np.empty((n_units, sample_positions.size), dtype=bool)
    # blockwise to bound the transient (block x m) distance matrix
    block = max(1, int(4_000_000 // max(1, sample_positions.size)))
    for start in range(0, n_units, block):
        stop = min(start + block, n_units)
        diff = frame.coords[start:stop, None, :] - centers[None, :, :]
        d2 = diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2
        dmin = d2.min(axis=1)
        mask[start:stop] = d2 <= (dmin * (1.0 + TIE_RTOL))[:, None]
    counts = mask.sum(axis=1)
    return mask, counts


def voronoi_assign(frame: PopulationFrame, sample) -> VoronoiAssignment:
    """Assign every population unit to its nearest sample unit(s).

    ``sample`` is a SampleSelection or any iterable of selected unit ids.
    Sample units themselves sit at distance 0 of their own polygon; a unit
    equidistant from several sample units splits its share equally.
    """
    ids = getattr(sample, "ids", sample)
    positions = np.array([frame.position_of(i) for i in ids], dtype=np.intp)
    mask, counts = nearest_sample_shares(frame, positions)
    sample_ids = [int(frame.ids[p]) for p in positions]
    shares = tuple(
        {sample_ids[s]: 1.0 / counts[i] for s in np.flatnonzero(mask[i])}
        for i in range(frame.n_units)
    )
    return VoronoiAssignment(unit_ids=frame.ids, shares=shares)


def nearest_neighbor_distances(frame: PopulationFrame) -> np.ndarray:
    """Distance from each unit to its nearest other unit."""
    if frame.n_units < 2:
        raise DomainError("nearest-neighbour distances need at least two units")
    out = np.empty(frame.n_units)
    for i in range(frame.n_units):
        d2 = squared_distances(frame.coords, frame.coords[i])
        d2[i] = np.inf
        out[i] = math.sqrt(d2.min())
    return out
