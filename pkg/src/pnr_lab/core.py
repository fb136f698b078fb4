"""Shared domain types and numerical primitives.

Everything downstream (simulation, fitting, discrimination, noise figures)
works in terms of the types defined here.  All types are immutable value
objects: construct, validate once, share freely between threads.

Units: pulse areas are in arbitrary integrator units (ADC-style).  Only
ratios of gain and noise are physical, so no conversion to electrons is
attempted anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Constraint",
    "DetectorModel",
    "Histogram",
    "GaussianPeak",
    "MixtureModel",
    "DecisionScheme",
    "NoiseReport",
    "DegenerateDesignError",
    "gaussian_pdf",
    "gaussian_cdf",
    "linear_fit",
    "substream",
]

_MASK64 = (1 << 64) - 1


class DegenerateDesignError(ValueError):
    """Raised when a regression design matrix has no usable rank."""


# ---------------------------------------------------------------------------
# random number generation contract
# ---------------------------------------------------------------------------

def substream(seed: int, index: int) -> np.random.Generator:
    """Return independent random stream number `index` for a 64-bit seed.

    Streams are derived by counter-based splitting (Philox keyed on
    (seed, index)), so any consumer can draw from stream k without
    generating streams 0..k-1 first.  This is what makes parallel
    simulation reproducible: work split across N workers touches the same
    streams in the same per-chunk order regardless of N.
    """
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    key = np.array([int(seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# numerical primitives
# ---------------------------------------------------------------------------

def gaussian_pdf(x, mean: float, std_dev: float):
    """Normal density; accepts scalars or arrays."""
    if std_dev <= 0:
        raise ValueError(f"std_dev must be > 0, got {std_dev}")
    z = (np.asarray(x, dtype=float) - mean) / std_dev
    out = np.exp(-0.5 * z * z) / (std_dev * math.sqrt(2.0 * math.pi))
    return float(out) if np.isscalar(x) else out


def gaussian_cdf(x, mean: float, std_dev: float):
    """Normal CDF, exact to double precision (well inside the 1e-7 contract).

    +/-inf are legitimate limit inputs and map to 1/0; NaN anywhere is an
    error.  Scalars in, scalar out; arrays in, array out.
    """
    if std_dev <= 0 or not math.isfinite(std_dev):
        raise ValueError(f"std_dev must be finite and > 0, got {std_dev}")
    if not math.isfinite(mean):
        raise ValueError(f"mean must be finite, got {mean}")
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("gaussian_cdf: NaN input")
    out = ndtr((arr - mean) / std_dev)
    return float(out) if np.isscalar(x) else out


def linear_fit(points, weights=None):
    """Weighted least-squares straight line through (x, y) points.

    Parameters
    ----------
    points : sequence of (x, y) pairs or (N, 2) array
    weights : optional per-point weights (>= 0), defaults to uniform

    Returns
    -------
    (slope, intercept, residual) where residual is the weighted sum of
    squared deviations from the fitted line.  Collinear input gives
    residual 0 up to rounding.

    Raises
    ------
    DegenerateDesignError if fewer than two distinct x values are given.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if len(x) < 2 or np.unique(x).size < 2:
        raise DegenerateDesignError("need at least 2 distinct x values for a line fit")
    if weights is None:
        w = np.ones_like(x)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != x.shape:
            raise ValueError("weights must match the number of points")
        if (w < 0).any():
            raise ValueError("weights must be >= 0")
    sw = np.sqrt(w)
    design = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design * sw[:, None], y * sw, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - (slope * x + intercept)
    return slope, intercept, float(np.sum(w * resid * resid))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectorModel:
    """Parametric description of the source + detector + electronics chain.

    The pulse-area observable for a pulse with d surviving detections is
        area = area_offset + d*gain - d^2*saturation_coeff + noise
    with noise variance  electronic_noise_var + [d>0]*extra_per_photon_var
    + d*mult_noise_var.  The quadratic term models gain droop when several
    detections crowd the active area; `cell_count` adds the harder
    dead-spot saturation where coincident detections can be lost outright.

    Filter transmission and the quadratic droop are easy to conflate when
    both are written as a single symbol; here they are separate fields
    (`nd_transmission` lives in the efficiency calculator, never in this
    model) and can never be confused.
    """

    mean_photon_number: float          # Poisson mean per gate (source)
    quantum_efficiency: float          # detection probability per photon
    gain_per_photon: float             # mean area added per detection
    mult_noise_var: float              # per-detection area variance (gain noise)
    electronic_noise_var: float        # zero-photon peak variance
    extra_per_photon_var: float = 0.0  # extra variance whenever >= 1 detection fires
    area_offset: float = 0.0           # integrator pedestal (zero-peak center)
    saturation_coeff: float = 0.0      # quadratic mean droop coefficient
    dark_rate_per_gate: float = 0.0    # mean dark detections per gate
    cell_count: int | None = None      # None = infinite active-area cells

    def __post_init__(self):
        if not 0.0 <= self.quantum_efficiency <= 1.0:
            raise ValueError(f"quantum_efficiency must lie in [0, 1], got {self.quantum_efficiency}")
        if self.mean_photon_number < 0:
            raise ValueError("mean_photon_number must be >= 0")
        if self.gain_per_photon <= 0:
            raise ValueError("gain_per_photon must be > 0")
        for name in ("mult_noise_var", "electronic_noise_var", "extra_per_photon_var"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.dark_rate_per_gate < 0:
            raise ValueError("dark_rate_per_gate must be >= 0")
        if self.cell_count is not None:
            if not isinstance(self.cell_count, (int, np.integer)) or self.cell_count < 1:
                raise ValueError(f"cell_count must be a positive integer or None, got {self.cell_count}")


@dataclass(frozen=True)
class Histogram:
    """Binned pulse-area spectrum, the exchange format between simulator and fitter.

    `counts` covers the bins only; pulses falling outside [edges[0], edges[-1]]
    are tracked in `underflow`/`overflow`, so sum(counts) <= total_pulses.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    total_pulses: int
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or len(edges) < 2:
            raise ValueError("bin_edges must be a 1-D array with at least 2 entries")
        if not np.all(np.diff(edges) > 0):
            raise ValueError("bin_edges must be strictly increasing")
        if counts.shape != (len(edges) - 1,):
            raise ValueError("counts length must be len(bin_edges) - 1")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.floor(counts)):
                raise ValueError("counts must be integers")
            counts = counts.astype(np.int64)
        if (counts < 0).any():
            raise ValueError("counts must be >= 0")
        if counts.sum() > self.total_pulses:
            raise ValueError("sum of counts exceeds total_pulses")
        edges.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


@dataclass(frozen=True)
class GaussianPeak:
    """One photon-number peak: index i, center x_i, width sigma_i, mass fraction."""

    index: int
    mean: float
    std_dev: float
    weight: float

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("peak index must be >= 0")
        if self.std_dev <= 0:
            raise ValueError(f"peak std_dev must be > 0, got {self.std_dev}")
        if self.weight < 0:
            raise ValueError("peak weight must be >= 0")


class Constraint(Enum):
    """Fit constraint regimes for the Gaussian mixture."""

    FREE_WEIGHTS_FREE_SIGMAS = "free"
    POISSON_WEIGHTS = "poisson"
    LINEAR_VARIANCE = "linear_variance"

    @classmethod
    def parse(cls, text: str) -> "Constraint":
        for member in cls:
            if text in (member.value, member.name, member.name.lower()):
                return member
        raise ValueError(
            f"unknown constraint {text!r}; expected one of "
            + ", ".join(m.value for m in cls)
        )


def poisson_weights(mu: float, k: int) -> np.ndarray:
    """Poisson pmf at 0..k-1, renormalized over those k terms."""
    if mu <= 0:
        raise ValueError("poisson mu must be > 0")
    i = np.arange(k)
    logw = -mu + i * math.log(mu) - np.array([math.lgamma(n + 1.0) for n in range(k)])
    w = np.exp(logw - logw.max())
    return w / w.sum()


@dataclass(frozen=True)
class MixtureModel:
    """Ordered Gaussian photon-number peaks plus the ladder that ties their means.

    The mean ladder is x_i = x0 + i*spacing - i^2*sat.  Models produced by
    the fitter always have means derived from the ladder (the exactness
    invariant); models built from externally supplied peak lists keep the
    supplied means authoritative and store the least-squares ladder as a
    description.  `ladder_residual()` reports the difference.
    """

    peaks: tuple
    x0: float
    spacing: float
    sat: float
    constraint_kind: Constraint = Constraint.FREE_WEIGHTS_FREE_SIGMAS
    poisson_mu: float | None = None

    def __post_init__(self):
        peaks = tuple(self.peaks)
        if len(peaks) < 1:
            raise ValueError("MixtureModel needs at least one peak")
        for i, p in enumerate(peaks):
            if not isinstance(p, GaussianPeak):
                raise TypeError("peaks must be GaussianPeak instances")
            if p.index != i:
                raise ValueError("peak indices must be 0..K-1 in order")
        total = sum(p.weight for p in peaks)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"peak weights must sum to 1 within 1e-9, got {total!r}")
        if self.constraint_kind is Constraint.POISSON_WEIGHTS and self.poisson_mu is None:
            raise ValueError("POISSON_WEIGHTS model requires poisson_mu")
        object.__setattr__(self, "peaks", peaks)

    # -- constructors -------------------------------------------------

    @classmethod
    def from_ladder(cls, x0, spacing, sat, std_devs, weights,
                    constraint_kind=Constraint.FREE_WEIGHTS_FREE_SIGMAS,
                    poisson_mu=None) -> "MixtureModel":
        """Build peaks with means exactly on the ladder x0 + i*spacing - i^2*sat."""
        std_devs = np.asarray(std_devs, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if std_devs.shape != weights.shape:
            raise ValueError("std_devs and weights must have the same length")
        k = len(std_devs)
        peaks = tuple(
            GaussianPeak(i, x0 + i * spacing - i * i * sat, float(std_devs[i]), float(weights[i]))
            for i in range(k)
        )
        return cls(peaks, float(x0), float(spacing), float(sat), constraint_kind, poisson_mu)

    @classmethod
    def from_peaks(cls, means, std_devs, weights=None,
                   constraint_kind=Constraint.FREE_WEIGHTS_FREE_SIGMAS,
                   poisson_mu=None) -> "MixtureModel":
        """Build from explicit peak positions (e.g. an external fit table).

        The supplied means are kept as-is; (x0, spacing, sat) are the
        least-squares quadratic-ladder description of them.
        """
        means = np.asarray(means, dtype=float)
        std_devs = np.asarray(std_devs, dtype=float)
        k = len(means)
        if weights is None:
            weights = np.full(k, 1.0 / k)
        weights = np.asarray(weights, dtype=float)
        if not (len(std_devs) == len(weights) == k):
            raise ValueError("means, std_devs and weights must have the same length")
        i = np.arange(k)
        if k >= 3:
            design = np.stack([np.ones(k), i, -(i.astype(float) ** 2)], axis=1)
            coef, *_ = np.linalg.lstsq(design, means, rcond=None)
            x0, spacing, sat = (float(c) for c in coef)
        elif k == 2:
            x0, spacing, sat = float(means[0]), float(means[1] - means[0]), 0.0
        else:
            x0, spacing, sat = float(means[0]), 1.0, 0.0
        peaks = tuple(
            GaussianPeak(n, float(means[n]), float(std_devs[n]), float(weights[n]))
            for n in range(k)
        )
        return cls(peaks, x0, spacing, sat, constraint_kind, poisson_mu)

    # -- views ---------------------------------------------------------

    @property
    def n_peaks(self) -> int:
        return len(self.peaks)

    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.peaks])

    def std_devs(self) -> np.ndarray:
        return np.array([p.std_dev for p in self.peaks])

    def weights(self) -> np.ndarray:
        return np.array([p.weight for p in self.peaks])

    def ladder_means(self) -> np.ndarray:
        i = np.arange(self.n_peaks, dtype=float)
        return self.x0 + i * self.spacing - i * i * self.sat

    def ladder_residual(self) -> float:
        """Max |peak mean - ladder prediction|; 0 for fitter-produced models."""
        return float(np.abs(self.means() - self.ladder_means()).max())

    def density(self, x) -> np.ndarray:
        """Mixture density at x (unit total mass)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p in self.peaks:
            out += p.weight * gaussian_pdf(x, p.mean, p.std_dev)
        return out


@dataclass(frozen=True)
class DecisionScheme:
    """Thresholds t_1..t_{K-1} cutting the area axis into photon-number regions.

    Region i is (t_i, t_{i+1}] with t_0 = -inf and t_K = +inf; a pulse area
    equal to a threshold belongs to the lower region.  `error_per_number[i]`
    is the prior-weighted foreign mass inside region i (see
    discriminate.build_scheme for the exact normalization).
    """

    thresholds: tuple
    priors: tuple
    error_per_number: tuple

    def __post_init__(self):
        thr = tuple(float(t) for t in self.thresholds)
        if any(not math.isfinite(t) for t in thr):
            raise ValueError("thresholds must be finite")
        if any(b <= a for a, b in zip(thr, thr[1:])):
            raise ValueError("thresholds must be strictly increasing")
        pri = tuple(float(p) for p in self.priors)
        if any(p < 0 for p in pri):
            raise ValueError("priors must be >= 0")
        err = tuple(float(e) for e in self.error_per_number)
        if len(pri) != len(thr) + 1 or len(err) != len(thr) + 1:
            raise ValueError("need exactly K-1 thresholds for K classes")
        object.__setattr__(self, "thresholds", thr)
        object.__setattr__(self, "priors", pri)
        object.__setattr__(self, "error_per_number", err)

    @property
    def n_classes(self) -> int:
        return len(self.thresholds) + 1


@dataclass(frozen=True)
class NoiseReport:
    """Variance-law regression output plus the derived figures of merit.

    n_max is stored as +inf when the excess noise factor is <= 1 (noise-free
    gain resolves arbitrarily many photons); `unbounded` makes that explicit.
    """

    sigma_m_sq: float
    sigma_0_sq: float
    enf: float
    n_max: float
    regression_residual: float

    @property
    def unbounded(self) -> bool:
        return not math.isfinite(self.n_max)
