"""Photon-number decision rules from a fitted mixture.

A decision scheme cuts the pulse-area axis at the points where adjacent
photon-number densities intersect; each interval between cuts is the
decision region for one photon number.  From there: per-number error
probabilities, a full confusion matrix, and the binary "exactly one vs
more than one" discriminator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DecisionScheme, MixtureModel, gaussian_cdf, gaussian_pdf

__all__ = [
    "ConfusionMatrix",
    "NoIntersectionError",
    "InvalidModelError",
    "threshold",
    "build_scheme",
    "classify",
    "one_vs_many_error",
    "confusion",
    "scheme_to_json",
    "confusion_to_json",
    "confusion_to_csv",
]

# relative variance difference below which the two-Gaussian intersection is
# taken at its analytic equal-variance limit, the midpoint
_EQUAL_VAR_EPS = 1e-12


class NoIntersectionError(ValueError):
    """The two densities do not cross between their means (pathological overlap)."""


class InvalidModelError(ValueError):
    """The mixture cannot support a decision scheme (e.g. non-increasing means)."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row i, column j: probability of deciding j when the true number is i."""

    matrix: np.ndarray
    priors: tuple

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.abs(m.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValueError("confusion matrix rows must sum to 1 within 1e-9")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "priors", tuple(float(p) for p in self.priors))


def threshold(x_i: float, sigma_i: float, x_next: float, sigma_next: float) -> float:
    """Equal-weight crossing point of two Gaussian densities, between the means.

    Closed form: with dx = x_next - x_i and a = sigma_next^2 - sigma_i^2,

        t = x_i - sigma_i^2*dx/a
                + sigma_i*sigma_next*sqrt(dx^2 - 2*a*ln(sigma_i/sigma_next))/a

    When the variances agree to within ~1e-12 relative the formula is 0/0 and
    the analytic limit, the midpoint, is returned instead.

    Raises NoIntersectionError when no crossing exists strictly between the
    means (one density dominating the whole interval -- extreme width ratio
    at small separation).  A negative radicand would mean the same thing and
    is guarded too, although for distinct variances the radicand is provably
    nonnegative.
    """
    for name, val in (("x_i", x_i), ("sigma_i", sigma_i),
                      ("x_next", x_next), ("sigma_next", sigma_next)):
        if not math.isfinite(val):
            raise ValueError(f"{name} must be finite, got {val}")
    if sigma_i <= 0 or sigma_next <= 0:
        raise ValueError("standard deviations must be > 0")
    if x_next <= x_i:
        raise ValueError(f"x_next must exceed x_i, got {x_i} >= {x_next}")

    var_i, var_n = sigma_i * sigma_i, sigma_next * sigma_next
    a = var_n - var_i
    dx = x_next - x_i
    if abs(a) < _EQUAL_VAR_EPS * var_i:
        return x_i + 0.5 * dx
    radicand = dx * dx - 2.0 * a * math.log(sigma_i / sigma_next)
    if radicand < 0:
        raise NoIntersectionError(
            f"no density intersection for peaks at {x_i} and {x_next} "
            f"(radicand {radicand:.3e})")
    t = x_i + (-var_i * dx + sigma_i * sigma_next * math.sqrt(radicand)) / a
    if not (x_i < t < x_next):
        raise NoIntersectionError(
            f"densities at {x_i} (sigma {sigma_i}) and {x_next} (sigma {sigma_next}) "
            "do not cross between the means; the wider peak dominates the interval")
    return t


def _weighted_intersection(x1, s1, w1, x2, s2, w2) -> float:
    """Crossing of w1*phi1 and w2*phi2 between the means, by bisection."""
    f = lambda x: w1 * gaussian_pdf(x, x1, s1) - w2 * gaussian_pdf(x, x2, s2)
    lo, hi = x1, x2
    flo, fhi = f(lo), f(hi)
    if flo <= 0 or fhi >= 0:
        raise NoIntersectionError(
            f"weighted densities at {x1} and {x2} do not cross between the means")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def build_scheme(model: MixtureModel, priors: str = "equal") -> DecisionScheme:
    """Thresholds plus per-number error probabilities for a mixture.

    priors="equal" uses the closed-form equal-weight intersections (the
    worst case for discrimination); priors="from-weights" finds the
    intersections of the weighted densities numerically.

    error_per_number[i] sums, over every other peak j, the unit-normalized
    mass of peak j inside region i, each term scaled by peak j's prior
    relative to a uniform prior.  With equal priors that reduces to the
    plain foreign-mass sum  sum_{j!=i} integral_region_i phi_j.  All modeled
    peaks contribute, not just neighbors (non-adjacent terms are tiny for
    realistic ladders but cost nothing).
    """
    k = model.n_peaks
    if k < 2:
        raise InvalidModelError("need at least 2 peaks for a decision scheme")
    means = model.means()
    sigmas = model.std_devs()
    if not np.all(np.diff(means) > 0):
        raise InvalidModelError("peak means must be strictly increasing")

    if priors == "equal":
        pri = np.full(k, 1.0 / k)
        cuts = [threshold(means[i], sigmas[i], means[i + 1], sigmas[i + 1])
                for i in range(k - 1)]
    elif priors == "from-weights":
        w = model.weights()
        if (w <= 0).any():
            raise InvalidModelError("from-weights priors require strictly positive weights")
        pri = w / w.sum()
        cuts = [_weighted_intersection(means[i], sigmas[i], pri[i],
                                       means[i + 1], sigmas[i + 1], pri[i + 1])
                for i in range(k - 1)]
    else:
        raise ValueError(f"priors must be 'equal' or 'from-weights', got {priors!r}")

    edges = np.concatenate([[-np.inf], cuts, [np.inf]])
    # mass[j, i]: unit mass of peak j inside region i
    upper = np.stack([gaussian_cdf(edges[1:], means[j], sigmas[j]) for j in range(k)])
    lower = np.stack([gaussian_cdf(edges[:-1], means[j], sigmas[j]) for j in range(k)])
    mass = upper - lower
    rel = pri * k  # prior relative to uniform
    err = [float(np.sum(rel * mass[:, i]) - rel[i] * mass[i, i]) for i in range(k)]
    return DecisionScheme(thresholds=tuple(cuts), priors=tuple(pri),
                          error_per_number=tuple(err))


def classify(area, scheme: DecisionScheme):
    """Photon number decided for a pulse area (scalar or array).

    Region i is (t_i, t_{i+1}] with t_0 = -inf, t_K = +inf: an area exactly
    on a threshold belongs to the lower region.  Total over all real inputs.
    """
    thr = np.asarray(scheme.thresholds)
    idx = np.searchsorted(thr, area, side="left")
    if np.isscalar(area):
        return int(idx)
    return idx.astype(np.int64)


def one_vs_many_error(model: MixtureModel, priors) -> float:
    """Misclassification probability of "exactly one" against "more than one".

    Classes {0}, {1}, {>=2} are formed by collapsing the scheme's regions,
    so the only boundary that matters is the 1-2 threshold.  `priors` is a
    per-photon-number array; the result is the prior-weighted error
    probability restricted to the classes {1} and {>=2}.
    """
    if model.n_peaks < 3:
        raise InvalidModelError("one-vs-many needs peaks 0, 1 and at least one more")
    pri = np.asarray(priors, dtype=float)
    if pri.shape != (model.n_peaks,):
        raise ValueError(f"priors must have length {model.n_peaks}")
    if (pri < 0).any() or pri.sum() <= 0:
        raise ValueError("priors must be nonnegative and not all zero")
    pri = pri / pri.sum()
    scheme = build_scheme(model, "equal")
    cut = scheme.thresholds[1]
    means, sigmas = model.means(), model.std_devs()
    p_one = pri[1]
    p_many = pri[2:].sum()
    if p_one + p_many <= 0:
        raise ValueError("priors give zero mass to both '1' and '>=2'")
    # one-photon pulses leaking above the cut, many-photon pulses below it
    err = p_one * (1.0 - gaussian_cdf(cut, means[1], sigmas[1]))
    err += sum(pri[j] * gaussian_cdf(cut, means[j], sigmas[j])
               for j in range(2, model.n_peaks))
    return float(err / (p_one + p_many))


def confusion(model: MixtureModel, priors) -> ConfusionMatrix:
    """Full decision matrix: entry (i, j) = P(decide j | true i).

    Rows are conditional on the true number, so the priors do not change the
    entries; they are carried along for downstream weighting.
    """
    scheme = build_scheme(model, "equal")
    k = model.n_peaks
    pri = np.asarray(priors, dtype=float)
    if pri.shape != (k,):
        raise ValueError(f"priors must have length {k}")
    edges = np.concatenate([[-np.inf], scheme.thresholds, [np.inf]])
    means, sigmas = model.means(), model.std_devs()
    rows = []
    for i in range(k):
        cdf = gaussian_cdf(edges, means[i], sigmas[i])
        rows.append(cdf[1:] - cdf[:-1])
    return ConfusionMatrix(np.array(rows), tuple(pri))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def scheme_to_json(scheme: DecisionScheme) -> dict:
    return {
        "thresholds": list(scheme.thresholds),
        "priors": list(scheme.priors),
        "error_per_number": list(scheme.error_per_number),
    }


def confusion_to_json(cm: ConfusionMatrix) -> dict:
    return {"matrix": cm.matrix.tolist(), "priors": list(cm.priors)}


def confusion_to_csv(path, cm: ConfusionMatrix) -> None:
    k = cm.matrix.shape[0]
    with open(path, "w") as fh:
        fh.write("# pnr-lab v1\n")
        fh.write("true_n," + ",".join(f"decide_{j}" for j in range(k)) + "\n")
        for i in range(k):
            fh.write(str(i) + "," + ",".join(f"{v:.10g}" for v in cm.matrix[i]) + "\n")
