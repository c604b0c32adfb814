"""Spatial balance and autocorrelation indices.

Four measures of how a sample spreads over a planar population:

* ``moran_i`` -- the classical global autocorrelation index (unbounded in
  general).
* ``moran_normalized`` -- the bounded variant: the weighted correlation
  between centered values and their neighbourhood means, always in [-1, 1].
* ``spatial_balance_ib`` -- the normalized index evaluated on the 0/1
  sample indicator: -1 means perfect spreading, +1 maximal clustering,
  about 0 a spatially random sample.
* ``spatial_balance_voronoi`` -- the variance of per-polygon inclusion
  probability sums around 1 (0 means perfect balance, unbounded above).

Degenerate inputs raise typed errors instead of returning 0 or NaN so that
simulation averages never silently absorb them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .designs import SampleSelection
from .errors import (
    ConstantIndicatorError,
    ConstantLocalMeansError,
    ConstantValuesError,
    DegenerateStatisticError,
    DomainError,
    ZeroTotalWeightError,
)
from .frame import PopulationFrame
from .spatial import nearest_sample_shares
from .weights import WeightsMatrix

#: b-denominator below this multiple of the d-denominator counts as degenerate
_LOCAL_MEAN_DEGENERACY = 1e-20


@dataclass(frozen=True)
class CenteredValues:
    """Values centered on the weighted mean, with their local means.

    ``local_means`` is NaN where a unit has an empty neighbourhood
    (w_i. = 0); ``defined`` marks the complement.
    """

    z: np.ndarray
    weighted_mean: float
    local_means: np.ndarray
    defined: np.ndarray
    grand_local_mean: float


def center_values(y: np.ndarray, w: WeightsMatrix) -> CenteredValues:
    """Center y on its row-sum-weighted mean and compute neighbourhood means."""
    if w.total == 0.0:
        raise ZeroTotalWeightError("total spatial weight is zero")
    y = np.asarray(y, dtype=float)
    mean = w.weighted_mean(y)
    z = y - mean
    local, defined = w.local_means(z)
    return CenteredValues(
        z=z,
        weighted_mean=mean,
        local_means=local,
        defined=defined,
        grand_local_mean=w.grand_local_mean(z),
    )


def moran_i(y: np.ndarray, w: WeightsMatrix) -> float:
    """Classical global Moran index of spatial autocorrelation.

    N * sum_ij w_ij (y_i - ybar)(y_j - ybar) over the total weight times
    the (unweighted) sum of squared deviations.
    """
    y = np.asarray(y, dtype=float)
    if w.total == 0.0:
        raise ZeroTotalWeightError("total spatial weight is zero")
    if y.size != w.n_units:
        raise DomainError("y must have one value per unit")
    if np.ptp(y) == 0.0:
        raise ConstantValuesError("y is constant; variance term is zero")
    z = y - y.mean()
    num = float(z @ w.apply_w(z))
    return w.n_units * num / (w.total * float(z @ z))


def moran_normalized(y: np.ndarray, w: WeightsMatrix) -> float:
    """Bounded autocorrelation index in [-1, 1].

    The weighted Pearson correlation (weights w_i.) between the centered
    values z_i and their neighbourhood means, over units with a nonempty
    neighbourhood.  Equals z'Wz / sqrt(z'Dz * z'Bz).

    Raises
    ------
    ConstantValuesError
        y constant on the weighted support (z'Dz = 0).
    ConstantLocalMeansError
        All neighbourhood means coincide (z'Bz = 0).
    ZeroTotalWeightError
        The weights matrix is empty.
    """
    y = np.asarray(y, dtype=float)
    if w.total == 0.0:
        raise ZeroTotalWeightError("total spatial weight is zero")
    if y.size != w.n_units:
        raise DomainError("y must have one value per unit")
    support = ~w.zero_rows
    if np.ptp(y[support]) == 0.0:
        raise ConstantValuesError("y is constant on the weighted support")

    c = center_values(y, w)
    u = c.local_means - c.grand_local_mean  # A z on the support
    u[~c.defined] = 0.0
    d2 = w.quad_d(c.z)
    b2 = float(w.row_sums @ (u * u))
    if d2 <= 0.0:
        raise ConstantValuesError("y is constant on the weighted support")
    if b2 <= _LOCAL_MEAN_DEGENERACY * d2:
        raise ConstantLocalMeansError("all neighbourhood means coincide")
    num = float(w.row_sums @ (c.z * u))
    # correlation form; clamp the last few ulps of Cauchy-Schwarz slack
    return float(np.clip(num / np.sqrt(d2 * b2), -1.0, 1.0))


def spatial_balance_ib(
    frame: PopulationFrame, sample: SampleSelection, w: WeightsMatrix
) -> float:
    """Normalized autocorrelation of the sample inclusion indicator.

    Negative values indicate spreading, positive values clustering, values
    near zero a spatially random sample.  The sample must be neither empty
    nor the whole population.
    """
    delta = sample.indicator_for(frame)
    if np.ptp(delta) == 0.0:
        raise ConstantIndicatorError(
            "sample indicator is constant (empty or exhaustive sample)"
        )
    return moran_normalized(delta.astype(float), w)


def spatial_balance_voronoi(
    frame: PopulationFrame, sample: SampleSelection
) -> tuple[float, np.ndarray]:
    """Voronoi spatial balance index and its per-polygon probability sums.

    Every population unit contributes its inclusion probability to the
    nearest sample unit's polygon (split equally on ties); the index is
    the mean squared deviation of those sums from 1.  Returns ``(b, v)``
    with v aligned to the sample's id order; sum(v) equals sum(pi).
    """
    pi = frame.require_pi()
    if sample.size == 0:
        raise DomainError("sample must be nonempty")
    positions = sample.positions_in(frame)
    mask, counts = nearest_sample_shares(frame, positions)
    contrib = pi / counts
    v = mask.T @ contrib
    b = float(np.mean((v - 1.0) ** 2))
    return b, v


@dataclass(frozen=True)
class BalanceReport:
    """All balance measures for one sample, plus diagnostics.

    ``i_m``/``i_b`` are None when degenerate; ``flags`` names each
    degenerate case that occurred.
    """

    b_index: float
    i_m: float | None
    i_b: float | None
    voronoi_sums: np.ndarray
    flags: tuple[str, ...]
    n: int
    n_population: int

    def to_dict(self) -> dict:
        return {
            "b": self.b_index,
            "i_m": self.i_m,
            "i_b": self.i_b,
            "n": self.n,
            "N": self.n_population,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def measure_sample(
    frame: PopulationFrame,
    sample: SampleSelection,
    weights: WeightsMatrix | None = None,
) -> BalanceReport:
    """Compute B, the classical Moran index and the normalized index.

    Builds the weights from the frame when not supplied; pass a prebuilt
    matrix when measuring many samples from the same population.
    """
    from .weights import build_weights  # local import keeps module load light

    if weights is None:
        weights = build_weights(frame)
    b, v = spatial_balance_voronoi(frame, sample)
    flags: list[str] = []
    delta = sample.indicator_for(frame).astype(float)

    i_m: float | None
    try:
        i_m = moran_i(delta, weights)
    except DegenerateStatisticError as err:
        i_m = None
        flags.append(f"i_m:{type(err).__name__}")
    i_b: float | None
    try:
        i_b = spatial_balance_ib(frame, sample, weights)
    except DegenerateStatisticError as err:
        i_b = None
        flags.append(f"i_b:{type(err).__name__}")

    return BalanceReport(
        b_index=b,
        i_m=i_m,
        i_b=i_b,
        voronoi_sums=v,
        flags=tuple(flags),
        n=sample.size,
        n_population=frame.n_units,
    )
