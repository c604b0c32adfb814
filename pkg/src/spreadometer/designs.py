"""Sampling designs: SRS, local pivotal, clustered two-stage, maximum entropy.

All designs are pure functions of (frame, parameters, random generator);
replications parallelize by handing each its own seeded stream (see
:class:`RngStream`).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .errors import ConvergenceError, DomainError, InfeasibleSampleError
from .frame import PopulationFrame
frame_mod = None  # placeholder to keep imports explicit

logger = logging.getLogger(__name__)

#: slack when checking that sum(pi) is an integer sample size
_INTEGER_ATOL = 1e-9


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream: identical (seed, stream) => identical draws."""

    seed: int
    stream: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        key = tuple(int(s) for s in self.stream)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))


@dataclass(frozen=True)
class SampleSelection:
    """Selected unit ids (draw order) plus the 0/1 indicator over the frame."""

    ids: np.ndarray
    indicator: np.ndarray

    def __post_init__(self) -> None:
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        indicator = np.ascontiguousarray(self.indicator, dtype=np.uint8)
        if np.unique(ids).size != ids.size:
            raise DomainError("selected ids must be distinct")
        if not np.all((indicator == 0) | (indicator == 1)):
            raise DomainError("indicator must be 0/1")
        if int(indicator.sum()) != ids.size:
            raise DomainError("indicator and id list disagree on sample size")
        ids.setflags(write=False)
        indicator.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "indicator", indicator)

    @classmethod
    def from_positions(cls, frame: PopulationFrame, positions: Iterable[int]) -> "SampleSelection":
        positions = np.asarray(list(positions), dtype=np.intp)
        indicator = np.zeros(frame.n_units, dtype=np.uint8)
        indicator[positions] = 1
        return cls(ids=frame.ids[positions], indicator=indicator)

    @classmethod
    def from_ids(cls, frame: PopulationFrame, ids: Iterable[int]) -> "SampleSelection":
        return cls.from_positions(frame, [frame.position_of(i) for i in ids])

    @property
    def size(self) -> int:
        return int(self.ids.size)

    def positions_in(self, frame: PopulationFrame) -> np.ndarray:
        return np.array([frame.position_of(i) for i in self.ids], dtype=np.intp)

    def indicator_for(self, frame: PopulationFrame) -> np.ndarray:
        if self.indicator.size != frame.n_units:
            raise DomainError("selection does not match this frame")
        return self.indicator


def srs(frame: PopulationFrame, n: int, rng: np.random.Generator) -> SampleSelection:
    """Simple random sampling without replacement: every size-n subset equiprobable."""
    n = int(n)
    if n < 0 or n > frame.n_units:
        raise InfeasibleSampleError(f"need 0 <= n <= N, got n={n}, N={frame.n_units}")
    positions = rng.choice(frame.n_units, size=n, replace=False)
    return SampleSelection.from_positions(frame, positions)


def lpm(frame: PopulationFrame, rng: np.random.Generator) -> SampleSelection:
    """Local pivotal sampling: spatially spread, respects pi exactly.

    Repeatedly picks a random undecided unit, pairs it with its nearest
    undecided neighbour (distance ties broken uniformly) and moves
    probability mass between the two until one of them is decided:

    * if p_i + p_j <= 1 one unit takes the whole mass, the other drops
      to 0, with probabilities p_i/(p_i+p_j) and p_j/(p_i+p_j);
    * otherwise one unit is fixed at 1 and the other keeps the excess,
      with probabilities (1-p_j)/(2-p_i-p_j) and (1-p_i)/(2-p_i-p_j).

    A non-integer sum(pi) is allowed: the final sample size is then random
    (logged once per draw).
    """
    p = frame.require_pi().astype(float).copy()
    coords = frame.coords
    total = float(p.sum())
    if abs(total - round(total)) > _INTEGER_ATOL:
        logger.info("sum(pi)=%.6f is not an integer; sample size will be random", total)

    undecided = (p > 0.0) & (p < 1.0)
    while True:
        pool = np.flatnonzero(undecided)
        if pool.size == 0:
            break
        if pool.size == 1:
            _finalize_lone_unit(p, int(pool[0]), rng)
            undecided[pool[0]] = False
            break
        i = int(pool[rng.integers(pool.size)])
        d2 = np.square(coords[:, 0] - coords[i, 0]) + np.square(coords[:, 1] - coords[i, 1])
        d2[~undecided] = np.inf
        d2[i] = np.inf
        nearest = np.flatnonzero(d2 == d2.min())
        j = int(nearest[rng.integers(nearest.size)]) if nearest.size > 1 else int(nearest[0])

        pi_, pj_ = p[i], p[j]
        s = pi_ + pj_
        if s <= 1.0:
            if rng.random() < pi_ / s:
                p[i], p[j] = s, 0.0
            else:
                p[i], p[j] = 0.0, s
        else:
            if rng.random() < (1.0 - pj_) / (2.0 - s):
                p[i], p[j] = 1.0, s - 1.0
            else:
                p[i], p[j] = s - 1.0, 1.0
        for t in (i, j):
            if p[t] == 0.0 or p[t] == 1.0:
                undecided[t] = False

    return SampleSelection.from_positions(frame, np.flatnonzero(p == 1.0))


def _finalize_lone_unit(p: np.ndarray, i: int, rng: np.random.Generator) -> None:
    # last undecided unit has no partner: snap float dust, else Bernoulli
    if p[i] >= 1.0 - _INTEGER_ATOL:
        p[i] = 1.0
    elif p[i] <= _INTEGER_ATOL:
        p[i] = 0.0
    else:
        p[i] = 1.0 if rng.random() < p[i] else 0.0


def kclust(
    frame: PopulationFrame,
    n: int,
    k: int,
    grid: int,
    rng: np.random.Generator,
    window: tuple[float, float, float, float] | None = None,
) -> SampleSelection:
    """Two-stage clustered sampling: k random grid cells, then SRS inside.

    The window (x_min, x_max, y_min, y_max) defaults to the coordinate
    bounding box.  When the chosen cells hold fewer than n units, further
    cells are drawn uniformly until the pool is large enough.
    """
    n = int(n)
    if n > frame.n_units:
        raise InfeasibleSampleError(f"population holds {frame.n_units} < n={n} units")
    if grid < 1:
        raise DomainError("grid must be >= 1")
    if not (1 <= k <= grid * grid):
        raise DomainError(f"need 1 <= k <= grid^2, got k={k}, grid={grid}")

    coords = frame.coords
    if window is None:
        x0, x1 = float(coords[:, 0].min()), float(coords[:, 0].max())
        y0, y1 = float(coords[:, 1].min()), float(coords[:, 1].max())
    else:
        x0, x1, y0, y1 = map(float, window)
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    cx = np.clip(((coords[:, 0] - x0) / span_x * grid).astype(int), 0, grid - 1)
    cy = np.clip(((coords[:, 1] - y0) / span_y * grid).astype(int), 0, grid - 1)
    cell = cx * grid + cy

    chosen = np.zeros(grid * grid, dtype=bool)
    first = rng.choice(grid * grid, size=k, replace=False)
    chosen[first] = True
    pool_mask = chosen[cell]
    while int(pool_mask.sum()) < n:
        remaining = np.flatnonzero(~chosen)
        extra = int(remaining[rng.integers(remaining.size)])
        chosen[extra] = True
        pool_mask |= cell == extra

    pool = np.flatnonzero(pool_mask)
    positions = rng.choice(pool, size=n, replace=False)
    return SampleSelection.from_positions(frame, positions)


# ---- maximum entropy (conditional Poisson) sampling ------------------------


def cps_inclusion_from_odds(odds: np.ndarray, n: int) -> np.ndarray:
    """Exact inclusion probabilities of fixed-size conditional Poisson sampling.

    ``odds`` are the Poisson sampling odds p/(1-p); the standard recursion
    over sample sizes 1..n gives the conditional first-order inclusion
    probabilities in O(N n).
    """
    odds = np.asarray(odds, dtype=float)
    if np.any(odds <= 0.0) or not np.all(np.isfinite(odds)):
        raise DomainError("odds must be positive and finite")
    n = int(n)
    if not (1 <= n < odds.size):
        raise DomainError(f"need 1 <= n < {odds.size}, got n={n}")
    pik = np.zeros_like(odds)
    for size in range(1, n + 1):
        t = odds * (1.0 - pik)
        pik = size * t / t.sum()
    return pik


def calibrate_cps_odds(
    target_pi: np.ndarray,
    n: int,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> np.ndarray:
    """Working odds whose conditional Poisson inclusions match ``target_pi``.

    Multiplicative odds fixed point; stops when the worst inclusion error
    is at most ``tol``, raising :class:`ConvergenceError` past
    ``max_iter`` steps.
    """
    target = np.asarray(target_pi, dtype=float)
    if np.any(target <= 0.0) or np.any(target >= 1.0):
        raise DomainError("target probabilities must lie strictly in (0, 1)")
    n = int(n)
    if abs(float(target.sum()) - n) > _INTEGER_ATOL * max(1.0, n):
        raise InfeasibleSampleError("target probabilities must sum to n")
    target_odds = target / (1.0 - target)
    odds = target_odds.copy()
    for _ in range(max_iter):
        pik = cps_inclusion_from_odds(odds, n)
        if float(np.max(np.abs(pik - target))) <= tol:
            return odds
        pik = np.clip(pik, 1e-12, 1.0 - 1e-12)
        odds *= target_odds / (pik / (1.0 - pik))
    raise ConvergenceError(f"odds calibration did not reach {tol} in {max_iter} steps")


def umes(
    frame: PopulationFrame,
    rng: np.random.Generator,
    tol: float = 1e-6,
    max_tries: int = 100_000,
) -> SampleSelection:
    """Fixed-size maximum entropy sampling respecting the frame's pi.

    Take-all units (pi = 1) are always selected; the rest are drawn by
    rejective Poisson sampling with working probabilities calibrated so
    that the size-conditioned inclusion probabilities match pi to ``tol``.
    Requires an integer sum(pi).
    """
    pi = frame.require_pi()
    total = float(pi.sum())
    n = round(total)
    if abs(total - n) > _INTEGER_ATOL * max(1.0, abs(total)):
        raise InfeasibleSampleError(f"sum(pi)={total!r} is not an integer sample size")

    fixed = np.flatnonzero(pi >= 1.0)
    free = np.flatnonzero(pi < 1.0)
    n_free = n - fixed.size
    if free.size == 0 or n_free == 0:
        return SampleSelection.from_positions(frame, fixed)

    odds = calibrate_cps_odds(pi[free], n_free, tol=tol)
    p = odds / (1.0 + odds)
    for _ in range(max_tries):
        draw = rng.random(free.size) < p
        if int(draw.sum()) == n_free:
            positions = np.concatenate([fixed, free[draw]])
            return SampleSelection.from_positions(frame, positions)
    raise ConvergenceError(f"rejective sampling found no size-{n_free} draw in {max_tries} tries")


# ---- sample id CSV round trip ----------------------------------------------


def write_sample_ids(sample: SampleSelection, target: str | Path | IO[str]) -> None:
    """Write the selected ids as a one-column CSV with an ``id`` header."""
    if hasattr(target, "write"):
        _write_ids(sample, target)  # type: ignore[arg-type]
        return
    with open(target, "w", encoding="utf-8", newline="") as handle:
        _write_ids(sample, handle)


def _write_ids(sample: SampleSelection, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["id"])
    for unit in sample.ids:
        writer.writerow([int(unit)])


def read_sample_ids(source: str | Path | IO[str]) -> np.ndarray:
    """Read selected ids from a one-column CSV (header optional)."""
    if hasattr(source, "read"):
        return _read_ids(source)  # type: ignore[arg-type]
    with open(source, "r", encoding="utf-8", newline="") as handle:
        return _read_ids(handle)


def _read_ids(stream: IO[str]) -> np.ndarray:
    ids: list[int] = []
    for row in csv.reader(stream):
        if not row or not row[0].strip():
            continue
        token = row[0].strip()
        if token.lower() == "id":
            continue
        ids.append(int(token))
    return np.asarray(ids, dtype=np.int64)
