"""Spatial weights from inclusion probabilities, with derived operators.

Each unit i gets k_i = 1/pi_i - 1 nearest neighbours (capped at N-1): the
floor(k_i) nearest at weight 1 and the ceil(k_i)-th at the fractional
remainder, so that every row sums to min(k_i, N-1).  Distance ties anywhere
in that range split the boundary weight equally across the tied block,
which keeps row sums exact and the construction deterministic.

The matrix is held sparsely; for equal probabilities pi = n/N the expected
nonzero count is about N * ceil(N/n - 1), i.e. roughly N^2/n entries.  The
derived operators A and B are never materialized densely.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np
from scipy import sparse

from .errors import DomainError
from .frame import PopulationFrame
from .spatial import TIE_RTOL, _snap_integer, squared_distances

_CONSISTENCY_ATOL = 1e-12


@dataclass(frozen=True)
class WeightsMatrix:
    """Sparse nonnegative spatial weights with cached aggregates.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
        Row-major weights w_ij, zero diagonal.
    row_sums, col_sums : arrays
        w_i. and w_.j.
    total : float
        Grand total w.
    zero_rows : bool array
        Units with w_i. = 0 (take-all units with pi = 1).
    ids : array of int
        Unit ids aligned with the matrix rows.
    """

    matrix: sparse.csr_matrix
    row_sums: np.ndarray
    col_sums: np.ndarray
    total: float
    zero_rows: np.ndarray
    ids: np.ndarray

    @classmethod
    def from_sparse(cls, matrix: sparse.spmatrix, ids: np.ndarray) -> "WeightsMatrix":
        m = sparse.csr_matrix(matrix)
        if m.shape[0] != m.shape[1]:
            raise DomainError("weights matrix must be square")
        if m.nnz and m.data.min() < 0.0:
            raise DomainError("weights must be nonnegative")
        if np.abs(m.diagonal()).max(initial=0.0) > 0.0:
            raise DomainError("weights must have a zero diagonal")
        row_sums = np.asarray(m.sum(axis=1)).ravel()
        col_sums = np.asarray(m.sum(axis=0)).ravel()
        total = float(row_sums.sum())
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size != m.shape[0]:
            raise DomainError("ids must align with the matrix dimension")
        for arr in (row_sums, col_sums):
            arr.setflags(write=False)
        return cls(
            matrix=m,
            row_sums=row_sums,
            col_sums=col_sums,
            total=total,
            zero_rows=row_sums == 0.0,
            ids=ids,
        )

    @property
    def n_units(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    # ---- matrix-free derived operators ------------------------------------

    def apply_w(self, z: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(z, dtype=float)

    def weighted_mean(self, y: np.ndarray) -> float:
        """Row-sum-weighted mean of y (undefined when total = 0)."""
        if self.total == 0.0:
            raise DomainError("weighted mean undefined: total weight is zero")
        return float(self.row_sums @ np.asarray(y, dtype=float) / self.total)

    def local_means(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Neighbourhood means (W z)_i / w_i. and their defined-mask.

        Zero rows have no neighbourhood; their entry is NaN and the mask
        is False there.
        """
        wz = self.apply_w(z)
        defined = ~self.zero_rows
        out = np.full(self.n_units, np.nan)
        out[defined] = wz[defined] / self.row_sums[defined]
        return out, defined

    def grand_local_mean(self, z: np.ndarray) -> float:
        """Row-sum-weighted average of the local means: (1/w) sum_j w_.j z_j."""
        if self.total == 0.0:
            raise DomainError("grand local mean undefined: total weight is zero")
        return float(self.col_sums @ np.asarray(z, dtype=float) / self.total)

    def apply_a(self, z: np.ndarray) -> np.ndarray:
        """Centered local-mean operator A z with the zero-row convention.

        A = D^{-1} W - 1 1^T W / w, where a zero row of D^{-1} W stays a
        zero row.  Such rows carry zero D-weight, so they never contribute
        to the quadratic forms below.
        """
        wz = self.apply_w(z)
        u = np.zeros(self.n_units)
        support = ~self.zero_rows
        u[support] = wz[support] / self.row_sums[support]
        return u - self.grand_local_mean(z)

    def apply_b(self, z: np.ndarray) -> np.ndarray:
        """B z = A^T D (A z), computed without materializing B."""
        u = self.apply_a(z)
        v = self.row_sums * u
        masked = np.zeros(self.n_units)
        support = ~self.zero_rows
        masked[support] = v[support] / self.row_sums[support]
        return self.matrix.T @ masked - self.col_sums * (v.sum() / self.total)

    def quad_d(self, z: np.ndarray) -> float:
        """z^T D z = sum_i w_i. z_i^2."""
        z = np.asarray(z, dtype=float)
        return float(self.row_sums @ (z * z))

    def quad_b(self, z: np.ndarray) -> float:
        """z^T B z = sum_i w_i. (A z)_i^2; nonnegative by construction."""
        u = self.apply_a(z)
        return float(self.row_sums @ (u * u))

    def validate(self) -> None:
        """Recompute the cached aggregates and check consistency to 1e-12."""
        rs = np.asarray(self.matrix.sum(axis=1)).ravel()
        cs = np.asarray(self.matrix.sum(axis=0)).ravel()
        scale = max(1.0, abs(self.total))
        if np.abs(rs - self.row_sums).max(initial=0.0) > _CONSISTENCY_ATOL * scale:
            raise DomainError("cached row sums inconsistent with entries")
        if np.abs(cs - self.col_sums).max(initial=0.0) > _CONSISTENCY_ATOL * scale:
            raise DomainError("cached column sums inconsistent with entries")
        if abs(float(rs.sum()) - self.total) > _CONSISTENCY_ATOL * scale:
            raise DomainError("cached total inconsistent with entries")


def neighbor_counts(pi: np.ndarray, n_units: int) -> np.ndarray:
    """k_i = 1/pi_i - 1, snapped to integers within 1e-9 and capped at N-1."""
    k = 1.0 / np.asarray(pi, dtype=float) - 1.0
    rounded = np.rint(k)
    snap = np.abs(k - rounded) <= 1e-9 * np.maximum(1.0, np.abs(rounded))
    k[snap] = rounded[snap]
    return np.minimum(k, float(n_units - 1))


def build_weights(frame: PopulationFrame) -> WeightsMatrix:
    """Build the inclusion-probability-driven k-nearest-neighbour weights.

    Requires pi on the frame; raises ``DomainError`` otherwise.  Units with
    pi = 1 get an empty row (k_i = 0) and are flagged in ``zero_rows``.
    """
    pi = frame.require_pi()
    n = frame.n_units
    ks = neighbor_counts(pi, n)

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    coords = frame.coords
    ids = frame.ids
    for i in range(n):
        k = float(ks[i])
        if k == 0.0:
            continue
        fl = int(math.floor(k))
        frac = k - fl
        m = fl + (1 if frac > 0.0 else 0)

        d2 = squared_distances(coords, coords[i])
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        order = others[np.lexsort((ids[others], d2[others]))]
        d2s = d2[order]

        pos = 0
        take: list[int] = []
        weights: list[float] = []
        while pos < m:
            ref = d2s[pos]
            end = pos + 1
            ceiling = ref * (1.0 + TIE_RTOL)
            while end < d2s.size and d2s[end] <= ceiling:
                end += 1
            # weight mass the block would get without ties, shared equally
            block_mass = float(min(end, fl) - min(pos, fl))
            if frac > 0.0 and pos <= fl < end:
                block_mass += frac
            share = block_mass / (end - pos)
            take.extend(range(pos, end))
            weights.extend([share] * (end - pos))
            pos = end

        sel = order[take]
        rows.append(np.full(sel.size, i, dtype=np.intp))
        cols.append(sel)
        vals.append(np.asarray(weights))

    if rows:
        matrix = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
    else:
        matrix = sparse.csr_matrix((n, n))
    return WeightsMatrix.from_sparse(matrix, ids)


def dump_triplets(w: WeightsMatrix, target: str | Path | IO[str]) -> None:
    """Debug dump of the matrix as an ``i,j,w`` triplet CSV keyed by unit ids."""
    if hasattr(target, "write"):
        _dump_triplets(w, target)  # type: ignore[arg-type]
        return
    with open(target, "w", encoding="utf-8", newline="") as handle:
        _dump_triplets(w, handle)


def _dump_triplets(w: WeightsMatrix, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["i", "j", "w"])
    coo = w.matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for t in order:
        writer.writerow([int(w.ids[coo.row[t]]), int(w.ids[coo.col[t]]), repr(float(coo.data[t]))])


def load_triplets(source: str | Path | IO[str], frame: PopulationFrame) -> WeightsMatrix:
    """Verbatim triplet import (testing aid); ids must exist in the frame."""
    if hasattr(source, "read"):
        return _load_triplets(source, frame)  # type: ignore[arg-type]
    with open(source, "r", encoding="utf-8", newline="") as handle:
        return _load_triplets(handle, frame)


def _load_triplets(stream: IO[str], frame: PopulationFrame) -> WeightsMatrix:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["i", "j", "w"]:
        raise DomainError("triplet input must start with an 'i,j,w' header")
    rows, cols, vals = [], [], []
    for rec in reader:
        if not rec or all(not c.strip() for c in rec):
            continue
        rows.append(frame.position_of(int(rec[0])))
        cols.append(frame.position_of(int(rec[1])))
        vals.append(float(rec[2]))
    matrix = sparse.csr_matrix(
        (vals, (rows, cols)), shape=(frame.n_units, frame.n_units)
    )
    return WeightsMatrix.from_sparse(matrix, frame.ids)
