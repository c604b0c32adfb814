"""Population data model: planar units, inclusion probabilities, CSV ingestion.

A population frame holds unit ids, planar coordinates and (optionally)
inclusion probabilities pi with 0 < pi_i <= 1.  Frames are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping

import numpy as np

from .errors import DomainError, InfeasibleSampleError, ParseError, SchemaError

logger = logging.getLogger(__name__)

#: relative tolerance on sum(pi) == n when probabilities are attached for a target n
PI_SUM_RTOL = 1e-9

_REQUIRED_COLUMNS = ("id", "x", "y")


@dataclass(frozen=True)
class PopulationFrame:
    """Finite planar population with optional inclusion probabilities.

    Parameters
    ----------
    ids : array of int
        Unique unit identifiers.
    coords : array of shape (N, 2)
        Planar Euclidean coordinates; no projection is applied.
    pi : array of float in (0, 1], optional
        Inclusion probabilities.  ``None`` for bare point patterns; attach
        with :meth:`with_equal_probabilities`, :meth:`with_probabilities`
        or :meth:`with_pps`.
    sizes : array of nonnegative float, optional
        Auxiliary size variable (e.g. employee counts) for PPS probabilities.
    """

    ids: np.ndarray
    coords: np.ndarray
    pi: np.ndarray | None = None
    sizes: np.ndarray | None = None

    def __post_init__(self) -> None:
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if ids.ndim != 1 or ids.size == 0:
            raise DomainError("population must contain at least one unit")
        if coords.shape != (ids.size, 2):
            raise DomainError(f"coords must have shape ({ids.size}, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise DomainError("coordinates must be finite")
        if np.unique(ids).size != ids.size:
            raise DomainError("unit ids must be unique")

        pi = self.pi
        if pi is not None:
            pi = np.ascontiguousarray(pi, dtype=np.float64)
            if pi.shape != (ids.size,):
                raise DomainError("pi must have one entry per unit")
            if not np.all(np.isfinite(pi)) or np.any(pi <= 0.0) or np.any(pi > 1.0):
                raise DomainError("inclusion probabilities must lie in (0, 1]")
            pi.setflags(write=False)

        sizes = self.sizes
        if sizes is not None:
            sizes = np.ascontiguousarray(sizes, dtype=np.float64)
            if sizes.shape != (ids.size,):
                raise DomainError("sizes must have one entry per unit")
            if not np.all(np.isfinite(sizes)) or np.any(sizes < 0.0):
                raise DomainError("sizes must be finite and nonnegative")
            sizes.setflags(write=False)

        ids.setflags(write=False)
        coords.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "_position", {int(u): i for i, u in enumerate(ids)})

    @property
    def n_units(self) -> int:
        return int(self.ids.size)

    @property
    def n_target(self) -> float:
        """Sum of inclusion probabilities (the expected/target sample size)."""
        if self.pi is None:
            raise DomainError("frame has no inclusion probabilities attached")
        return float(self.pi.sum())

    def position_of(self, unit_id: int) -> int:
        """Row index of a unit id; raises ``KeyError`` for unknown ids."""
        return self._position[int(unit_id)]

    def require_pi(self) -> np.ndarray:
        if self.pi is None:
            raise DomainError("operation requires inclusion probabilities; none attached")
        return self.pi

    def with_probabilities(self, pi: Iterable[float]) -> "PopulationFrame":
        """Return a copy with the given probabilities attached verbatim."""
        return PopulationFrame(self.ids, self.coords, np.asarray(pi, dtype=float), self.sizes)

    def with_equal_probabilities(self, n: int) -> "PopulationFrame":
        """Return a copy with pi_i = n / N for a fixed sample size n."""
        n = int(n)
        if n < 1 or n > self.n_units:
            raise InfeasibleSampleError(f"need 1 <= n <= N, got n={n}, N={self.n_units}")
        pi = np.full(self.n_units, n / self.n_units)
        return PopulationFrame(self.ids, self.coords, pi, self.sizes)

    def with_pps(self, n: int) -> "PopulationFrame":
        """Attach size-proportional probabilities for sample size n.

        Units with size 0 would get pi = 0, which no downstream formula
        supports; they are dropped with a logged warning.
        """
        if self.sizes is None:
            raise DomainError("with_pps requires a size variable on the frame")
        keep = self.sizes > 0.0
        dropped = int(np.count_nonzero(~keep))
        if dropped:
            logger.warning("dropping %d zero-size unit(s) before PPS probabilities", dropped)
        if not np.any(keep):
            raise DomainError("all sizes are zero; PPS probabilities undefined")
        sub = PopulationFrame(self.ids[keep], self.coords[keep], None, self.sizes[keep])
        return sub.with_probabilities(pps_probabilities(sub.sizes, n))


def pps_probabilities(sizes: Iterable[float], n: int) -> np.ndarray:
    """Size-proportional inclusion probabilities, capped at 1.

    Computes pi_i = min(1, C v_i / sum(v)) with C fixed so that sum(pi) = n.
    Capping is iterative: each pass fixes the units whose uncapped share
    exceeds 1 and spreads the remaining sample size over the rest, so that
    redistribution cannot silently push a second unit above 1.

    Raises
    ------
    DomainError
        If sizes are invalid or any size is zero (drop such units first,
        e.g. via :meth:`PopulationFrame.with_pps`).
    InfeasibleSampleError
        If n exceeds the number of units.
    """
    v = np.asarray(sizes, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("sizes must be a nonempty 1-d array")
    if not np.all(np.isfinite(v)) or np.any(v < 0.0):
        raise DomainError("sizes must be finite and nonnegative")
    if float(v.sum()) <= 0.0:
        raise DomainError("sum of sizes must be positive")
    n = int(n)
    if n < 1:
        raise DomainError("n must be a positive integer")
    if n > v.size:
        raise InfeasibleSampleError(f"n={n} exceeds population size N={v.size}")
    if np.any(v == 0.0):
        raise DomainError(
            "zero-size units would receive pi = 0, outside (0, 1]; drop them first"
        )

    pi = np.ones(v.size)
    active = np.ones(v.size, dtype=bool)
    remaining = float(n)
    while True:
        share = remaining * v[active] / v[active].sum()
        over = share > 1.0
        if not np.any(over):
            pi[active] = share
            return pi
        idx = np.flatnonzero(active)[over]
        active[idx] = False
        remaining -= idx.size
        # each pass caps fewer units than `remaining`, so remaining stays >= 1
        if not np.any(active):
            return pi


def load_population(
    source: str | Path | IO[str],
    columns: Mapping[str, str] | None = None,
) -> PopulationFrame:
    """Parse a population frame from delimited text.

    Expects a header row and comma-separated columns ``id,x,y`` plus an
    optional ``pi`` or ``size`` column (UTF-8, decimal point).  ``columns``
    maps the logical names to actual header names if they differ.

    Raises
    ------
    SchemaError
        Missing required column (named in the message).
    ParseError
        Non-numeric cell, reported with its line number.
    DomainError
        Probabilities outside (0, 1], duplicate ids, and similar.
    """
    names = {"id": "id", "x": "x", "y": "y", "pi": "pi", "size": "size"}
    if columns:
        names.update(columns)

    if hasattr(source, "read"):
        return _parse_population(source, names)  # type: ignore[arg-type]
    with open(source, "r", encoding="utf-8", newline="") as handle:
        return _parse_population(handle, names)


def _parse_population(stream: IO[str], names: Mapping[str, str]) -> PopulationFrame:
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty input: no header row") from None
    header = [h.strip() for h in header]
    lookup = {h: i for i, h in enumerate(header)}

    for logical in _REQUIRED_COLUMNS:
        if names[logical] not in lookup:
            raise SchemaError(f"missing required column {names[logical]!r}")
    col_id = lookup[names["id"]]
    col_x = lookup[names["x"]]
    col_y = lookup[names["y"]]
    col_pi = lookup.get(names["pi"])
    col_size = lookup.get(names["size"])

    ids: list[int] = []
    xs: list[float] = []
    ys: list[float] = []
    pis: list[float] = []
    sizes: list[float] = []

    def cell(row: list[str], col: int, line: int, kind: str) -> str:
        if col >= len(row):
            raise ParseError(f"line {line}: row too short, missing {kind} value")
        return row[col].strip()

    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ids.append(int(cell(row, col_id, line, "id")))
        except ValueError:
            raise ParseError(f"line {line}: cannot parse id {row[col_id]!r}") from None
        for col, bucket, kind in ((col_x, xs, "x"), (col_y, ys, "y")):
            raw = cell(row, col, line, kind)
            try:
                bucket.append(float(raw))
            except ValueError:
                raise ParseError(f"line {line}: cannot parse {kind} {raw!r}") from None
        if col_pi is not None:
            raw = cell(row, col_pi, line, "pi")
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"line {line}: cannot parse pi {raw!r}") from None
            if not (0.0 < value <= 1.0) or math.isnan(value):
                raise DomainError(f"line {line}: pi={value!r} outside (0, 1]")
            pis.append(value)
        if col_size is not None:
            raw = cell(row, col_size, line, "size")
            try:
                sizes.append(float(raw))
            except ValueError:
                raise ParseError(f"line {line}: cannot parse size {raw!r}") from None

    if not ids:
        raise DomainError("input contains no data rows")
    return PopulationFrame(
        ids=np.array(ids, dtype=np.int64),
        coords=np.column_stack([np.array(xs), np.array(ys)]),
        pi=np.array(pis) if col_pi is not None else None,
        sizes=np.array(sizes) if col_size is not None else None,
    )


def write_population(frame: PopulationFrame, target: str | Path | IO[str]) -> None:
    """Write a frame back out in the CSV layout `load_population` reads."""
    if hasattr(target, "write"):
        _write_population(frame, target)  # type: ignore[arg-type]
        return
    with open(target, "w", encoding="utf-8", newline="") as handle:
        _write_population(frame, handle)


def _write_population(frame: PopulationFrame, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    header = ["id", "x", "y"]
    if frame.pi is not None:
        header.append("pi")
    if frame.sizes is not None:
        header.append("size")
    writer.writerow(header)
    for i in range(frame.n_units):
        row: list[object] = [int(frame.ids[i]), repr(float(frame.coords[i, 0])), repr(float(frame.coords[i, 1]))]
        if frame.pi is not None:
            row.append(repr(float(frame.pi[i])))
        if frame.sizes is not None:
            row.append(repr(float(frame.sizes[i])))
        writer.writerow(row)
