"""Constrained Gaussian-mixture fitting of pulse-area histograms.

The objective is binned weighted least squares,

    sum_b w_b * (count_b - N * p_model(bin_b))^2,   w_b = 1 / max(count_b, 1),

with the bin probability computed as the Gaussian CDF difference across the
bin (correct for wide bins, unlike a midpoint-density approximation).  The
minimizer is a damped (Levenberg-Marquardt style) iteration: damping scales
x10 on a rejected step and /10 on an accepted one, and a step is never
accepted if it increases the objective.

Three constraint regimes, all sharing the mean ladder x_i = x0 + i*D - i^2*a:

  FREE_WEIGHTS_FREE_SIGMAS : per-peak sigmas free, weights free on the simplex
  POISSON_WEIGHTS          : weights pinned to a renormalized Poisson pmf (mu free)
  LINEAR_VARIANCE          : sigma_i^2 = v_elec + v_0*[i>0] + i*v_M, weights free

Weights live on the simplex via a softmax with the first logit pinned to 0;
sigma-like parameters are log-reparameterized so they stay positive.  Mean
and weight derivatives are analytic; sigma-parameter derivatives use central
finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .core import (Constraint, GaussianPeak, Histogram, MixtureModel,
                   linear_fit, poisson_weights)

__all__ = [
    "FitConfig",
    "FitReport",
    "FitSetupError",
    "fit_spectrum",
    "init_guess",
    "expected_counts",
    "report_to_json",
    "report_from_json",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
_FD_STEP = 1e-6          # central-difference step on log-reparameterized params
_PROMINENCE = 0.02       # a maximum counts only above this fraction of the peak bin
_SMOOTH_BINS = 5


class FitSetupError(ValueError):
    """The histogram or configuration cannot support the requested fit."""


@dataclass(frozen=True)
class FitConfig:
    n_peaks: int | str = "auto"
    constraint: Constraint = Constraint.FREE_WEIGHTS_FREE_SIGMAS
    max_iterations: int = 500
    tolerance: float = 1e-9
    init: MixtureModel | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if isinstance(self.n_peaks, str):
            if self.n_peaks != "auto":
                raise ValueError(f"n_peaks must be an integer >= 2 or 'auto', got {self.n_peaks!r}")
        elif self.n_peaks < 2:
            raise ValueError("n_peaks must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class FitReport:
    model: MixtureModel
    objective: float
    iterations: int
    converged: bool
    per_peak: tuple                      # (mean, std_dev, weight) triples
    warnings: tuple = ()
    objective_trace: tuple = ()          # objective after each accepted step


# ---------------------------------------------------------------------------
# initial guess
# ---------------------------------------------------------------------------

def init_guess(hist: Histogram, n_peaks="auto") -> MixtureModel:
    """Heuristic starting model from the smoothed histogram.

    Prominent local maxima of the 5-bin moving average locate the ladder:
    x0 sits on the first maximum, the spacing is the median gap between
    successive maxima, all sigmas start at spacing/4, and weights are the
    count mass between region midpoints.  With n_peaks="auto" the model gets
    two more peaks than maxima found (weak high-number peaks rarely clear
    the prominence cut).
    """
    counts = hist.counts.astype(float)
    if len(counts) < 3:
        raise FitSetupError("histogram has too few bins for an automatic guess")
    smoothed = np.convolve(counts, np.ones(_SMOOTH_BINS) / _SMOOTH_BINS, mode="same")
    gmax = smoothed.max()
    if gmax <= 0:
        raise FitSetupError("histogram is empty; provide an explicit initial model")
    # Scan runs of equal smoothed counts as single candidates: a symmetric
    # peak can tie two adjacent bins after averaging, and a bin-by-bin
    # strict comparison would drop it entirely.
    prominent = []
    n = len(smoothed)
    a = 0
    while a < n:
        b = a
        while b + 1 < n and smoothed[b + 1] == smoothed[a]:
            b += 1
        run_is_max = (a > 0 and b < n - 1
                      and smoothed[a] > smoothed[a - 1]
                      and smoothed[b] > smoothed[b + 1]
                      and smoothed[a] > _PROMINENCE * gmax)
        if run_is_max:
            prominent.append((a + b) // 2)
        a = b + 1
    prominent = np.asarray(prominent, dtype=int)
    if len(prominent) < 2:
        raise FitSetupError(
            f"found {len(prominent)} prominent maxima; need at least 2 — "
            "provide an explicit initial model")
    centers = hist.centers[prominent]
    x0 = float(centers[0])
    spacing = float(np.median(np.diff(centers)))
    if n_peaks == "auto":
        k = len(prominent) + 2
    else:
        k = int(n_peaks)
        if k < 2:
            raise FitSetupError("n_peaks must be >= 2")

    # mass between midpoints of the guessed ladder -> starting weights
    ladder = x0 + spacing * np.arange(k)
    cuts = np.concatenate([[-np.inf], 0.5 * (ladder[:-1] + ladder[1:]), [np.inf]])
    idx = np.searchsorted(hist.centers, cuts)
    cum = np.concatenate([[0.0], np.cumsum(counts)])
    mass = np.maximum(cum[np.clip(idx[1:], 0, len(counts))] -
                      cum[np.clip(idx[:-1], 0, len(counts))], 0.0)
    weights = np.maximum(mass / max(mass.sum(), 1.0), 1e-6)
    weights /= weights.sum()

    sigmas = np.full(k, spacing / 4.0)
    return MixtureModel.from_ladder(x0, spacing, 0.0, sigmas, weights)


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def _cdf_cols(edges: np.ndarray, means: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """(n_bins, K) matrix of per-peak bin masses via CDF differences."""
    z = (edges[:, None] - means[None, :]) / sigmas[None, :]
    cdf = ndtr(z)
    return cdf[1:, :] - cdf[:-1, :]


def _phi(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / _SQRT2PI


def expected_counts(model: MixtureModel, edges: np.ndarray, total: float):
    """Per-peak and summed expected counts in the given bins.

    Returns (per_peak, total_curve): per_peak has shape (K, n_bins).
    """
    p = _cdf_cols(np.asarray(edges, dtype=float), model.means(), model.std_devs())
    per_peak = (total * model.weights()[None, :] * p).T
    return per_peak, per_peak.sum(axis=0)


# ---------------------------------------------------------------------------
# parameter packing per regime
# ---------------------------------------------------------------------------

class _Problem:
    def __init__(self, hist: Histogram, constraint: Constraint, k: int):
        self.edges = hist.bin_edges
        self.counts = hist.counts.astype(float)
        self.n_total = float(self.counts.sum())
        self.wls = 1.0 / np.maximum(self.counts, 1.0)
        self.constraint = constraint
        self.k = k
        self.idx = np.arange(k, dtype=float)

    # -- layout ---------------------------------------------------------

    def n_params(self) -> int:
        k = self.k
        if self.constraint is Constraint.FREE_WEIGHTS_FREE_SIGMAS:
            return 2 * k + 2
        if self.constraint is Constraint.POISSON_WEIGHTS:
            return k + 4
        return k + 5  # LINEAR_VARIANCE

    def pack(self, model: MixtureModel) -> np.ndarray:
        k = self.k
        head = [model.x0, model.spacing, model.sat]
        w = np.maximum(model.weights(), 1e-12)
        logits = list(np.log(w[1:] / w[0]))
        sig = model.std_devs()
        if self.constraint is Constraint.FREE_WEIGHTS_FREE_SIGMAS:
            return np.array(head + list(np.log(sig)) + logits)
        if self.constraint is Constraint.POISSON_WEIGHTS:
            mu = model.poisson_mu
            if mu is None or mu <= 0:
                mu = max(float(np.sum(model.weights() * self.idx)), 0.1)
            return np.array(head + list(np.log(sig)) + [math.log(mu)])
        # LINEAR_VARIANCE: split the sigma ladder into its three components
        v_elec = sig[0] ** 2
        var_rest = sig[1:] ** 2 - v_elec
        mean_var = float(np.mean(sig**2))
        floor = max(1e-3 * mean_var, 1e-9)
        if k >= 3 and np.unique(self.idx[1:]).size >= 2:
            slope, intercept, _ = linear_fit(np.stack([self.idx[1:], var_rest], axis=1))
        else:
            slope, intercept = floor, floor
        if slope < floor and intercept < floor:
            # Flat sigma ladder (typical of a fresh init): a floor-sized slope
            # leaves the optimizer stranded with everything in the electronic
            # term, so spread the variance evenly across the components.
            mean_i = float(np.mean(self.idx[1:])) if k > 1 else 1.0
            v_elec = mean_var / 3.0
            v_0 = mean_var / 3.0
            v_m = mean_var / (3.0 * max(mean_i, 1.0))
        else:
            v_m = max(slope, floor)
            v_0 = max(intercept, floor)
        return np.array(head + [math.log(v_elec), math.log(v_0), math.log(v_m)] + logits)

    def unpack(self, p: np.ndarray):
        """-> (x0, spacing, sat, sigmas, weights, mu_or_None)"""
        k = self.k
        x0, spacing, sat = p[0], p[1], p[2]
        if self.constraint is Constraint.FREE_WEIGHTS_FREE_SIGMAS:
            sig = _bounded_exp(p[3:3 + k])
            w = _softmax(p[3 + k:])
            return x0, spacing, sat, sig, w, None
        if self.constraint is Constraint.POISSON_WEIGHTS:
            sig = _bounded_exp(p[3:3 + k])
            mu = float(_bounded_exp(np.asarray(p[3 + k])))
            return x0, spacing, sat, sig, poisson_weights(mu, k), mu
        v_elec, v_0, v_m = _bounded_exp(p[3:6])
        sig = np.sqrt(v_elec + np.where(self.idx > 0, v_0, 0.0) + self.idx * v_m)
        w = _softmax(p[6:])
        return x0, spacing, sat, sig, w, None

    def to_model(self, p: np.ndarray) -> MixtureModel:
        x0, spacing, sat, sig, w, mu = self.unpack(p)
        return MixtureModel.from_ladder(
            float(x0), float(spacing), float(sat), sig, w,
            constraint_kind=self.constraint, poisson_mu=mu)

    # -- objective and Jacobian ------------------------------------------

    def counts_model(self, p: np.ndarray):
        x0, spacing, sat, sig, w, mu = self.unpack(p)
        means = x0 + spacing * self.idx - sat * self.idx**2
        pmat = _cdf_cols(self.edges, means, sig)
        m = self.n_total * (pmat @ w)
        return m, pmat, means, sig, w, mu

    def objective(self, p: np.ndarray) -> float:
        m, *_ = self.counts_model(p)
        r = self.counts - m
        return float(np.sum(self.wls * r * r))

    def jacobian(self, p: np.ndarray, pmat, means, sig, w, mu) -> np.ndarray:
        k, n = self.k, len(self.counts)
        cols = np.empty((n, self.n_params()))
        z = (self.edges[:, None] - means[None, :]) / sig[None, :]
        phi = _phi(z)
        # d(bin mass)/d(mean) for each peak
        dpdx = (phi[:-1, :] - phi[1:, :]) / sig[None, :]
        wdpdx = self.n_total * w[None, :] * dpdx
        cols[:, 0] = wdpdx.sum(axis=1)                       # x0
        cols[:, 1] = wdpdx @ self.idx                        # spacing
        cols[:, 2] = wdpdx @ (-self.idx**2)                  # sat
        mix = pmat @ w                                       # per-bin model mass

        if self.constraint in (Constraint.FREE_WEIGHTS_FREE_SIGMAS,
                               Constraint.POISSON_WEIGHTS):
            # finite differences on each log sigma_i: only column i moves
            for i in range(k):
                up = _cdf_col(self.edges, means[i], sig[i] * math.exp(_FD_STEP))
                dn = _cdf_col(self.edges, means[i], sig[i] * math.exp(-_FD_STEP))
                cols[:, 3 + i] = self.n_total * w[i] * (up - dn) / (2.0 * _FD_STEP)
            if self.constraint is Constraint.FREE_WEIGHTS_FREE_SIGMAS:
                for j in range(1, k):
                    cols[:, 3 + k + j - 1] = self.n_total * w[j] * (pmat[:, j] - mix)
            else:
                ibar = float(np.sum(w * self.idx))
                cols[:, 3 + k] = self.n_total * (pmat @ (w * (self.idx - ibar)))
        else:
            # LINEAR_VARIANCE: the three variance components move every sigma
            for j in range(3):
                for sign in (+1, -1):
                    q = p.copy()
                    q[3 + j] += sign * _FD_STEP
                    _, _, _, sig_q, _, _ = self.unpack(q)
                    pm = _cdf_cols(self.edges, means, sig_q) @ w
                    if sign > 0:
                        up = pm
                    else:
                        dn = pm
                cols[:, 3 + j] = self.n_total * (up - dn) / (2.0 * _FD_STEP)
            for j in range(1, k):
                cols[:, 6 + j - 1] = self.n_total * w[j] * (pmat[:, j] - mix)
        return cols


def _cdf_col(edges, mean, sigma):
    c = ndtr((edges - mean) / sigma)
    return c[1:] - c[:-1]


def _softmax(tail_logits: np.ndarray) -> np.ndarray:
    full = np.concatenate([[0.0], tail_logits])
    full = full - full.max()
    e = np.exp(full)
    return e / e.sum()


def _bounded_exp(logp: np.ndarray) -> np.ndarray:
    # Keeps scale parameters finite when a trial step or an unidentifiable
    # (near-zero-weight) peak sends a log parameter running.
    return np.exp(np.clip(logp, -30.0, 30.0))


def _window_excess(means: np.ndarray, edges: np.ndarray) -> float:
    """Distance by which peak centres overshoot the widened data window.

    Zero while every mean lies within one histogram span of the data.
    """
    lo, hi = edges[0], edges[-1]
    span = hi - lo
    return max(0.0, (lo - span) - means.min()) + max(0.0, means.max() - (hi + span))


_WIDTH_SCALES = (1.0, 0.5, 0.25, 0.125, 0.0625, 2.0)


def _best_width_scale(prob: _Problem, p: np.ndarray) -> np.ndarray:
    """Coarse scan over a global peak-width multiplier before iterating.

    The automatic init sets every width to a quarter of the peak spacing;
    when the true peaks are much narrower than that, the damped iteration
    starts in a basin where fattening one component beats narrowing all of
    them.  A few objective evaluations at scaled widths put the start on the
    right side of that ridge.  Ties keep the unscaled start.
    """
    if prob.constraint is Constraint.LINEAR_VARIANCE:
        sl, mult = slice(3, 6), 2.0  # variance parameters: scale by s**2
    else:
        sl, mult = slice(3, 3 + prob.k), 1.0
    best_p, best_obj = p, math.inf
    for s in _WIDTH_SCALES:
        q = p.copy()
        q[sl] = q[sl] + mult * math.log(s)
        o = prob.objective(q)
        if math.isfinite(o) and o < best_obj:
            best_p, best_obj = q, o
    return best_p


# ---------------------------------------------------------------------------
# the damped least-squares loop
# ---------------------------------------------------------------------------

def fit_spectrum(hist: Histogram, cfg: FitConfig) -> FitReport:
    """Fit the histogram under the configured constraint regime.

    Non-convergence is reported, never silently swallowed: the report comes
    back with converged=False after max_iterations (or a dead-end damping
    escalation), and the model is the best point reached.
    """
    if hist.counts.sum() == 0:
        raise FitSetupError("histogram has no counts")
    init = cfg.init
    if init is None:
        init = init_guess(hist, cfg.n_peaks)
    elif isinstance(cfg.n_peaks, int) and cfg.n_peaks != init.n_peaks:
        raise FitSetupError(
            f"n_peaks={cfg.n_peaks} conflicts with explicit init of {init.n_peaks} peaks")
    k = init.n_peaks
    if k < 2:
        raise FitSetupError("need at least 2 peaks to fit")
    prob = _Problem(hist, cfg.constraint, k)
    n_params = prob.n_params()
    nonempty = int((hist.counts > 0).sum())
    if nonempty < 4 * n_params:
        raise FitSetupError(
            f"{nonempty} nonempty bins cannot support {n_params} free parameters "
            f"(need at least {4 * n_params})")

    warnings = []
    p = prob.pack(init)
    if cfg.init is None:
        p = _best_width_scale(prob, p)
    m, pmat, means, sig, w, mu = prob.counts_model(p)
    r = prob.counts - m
    obj = float(np.sum(prob.wls * r * r))
    trace = [obj]

    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        if obj == 0.0:
            converged = True
            break
        jac = prob.jacobian(p, pmat, means, sig, w, mu)
        if iterations == 1:
            sv = np.linalg.svd(jac * np.sqrt(prob.wls)[:, None], compute_uv=False)
            if sv[-1] < 1e-10 * sv[0]:
                warnings.append(
                    "rank_deficient: the data cannot constrain all "
                    f"{n_params} parameters (singular value ratio {sv[-1] / sv[0]:.1e}); "
                    "consider fewer peaks")
        jw = jac * prob.wls[:, None]
        hess = jac.T @ jw
        grad = jw.T @ r
        diag = np.diag(hess).copy()
        diag[diag <= 0] = max(1e-12 * diag.max(), 1e-300)

        accepted = False
        while lam <= 1e12:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_try = p + step
            try:
                m2, pmat2, means2, sig2, w2, mu2 = prob.counts_model(p_try)
            except (FloatingPointError, ValueError, OverflowError):
                lam *= 10.0
                continue
            if _window_excess(means2, prob.edges) > _window_excess(means, prob.edges):
                # A peak centre drifting further than a full histogram width
                # beyond the data is runaway along a near-flat direction, not
                # progress: the data can never pull it back.  Steps that move
                # back toward the window stay allowed.
                lam *= 10.0
                continue
            r2 = prob.counts - m2
            obj2 = float(np.sum(prob.wls * r2 * r2))
            if not math.isfinite(obj2) or obj2 >= obj:
                lam *= 10.0
                continue
            accepted = True
            break
        if not accepted:
            break
        rel_drop = (obj - obj2) / max(obj, 1e-300)
        p, m, pmat, means, sig, w, mu, r, obj = p_try, m2, pmat2, means2, sig2, w2, mu2, r2, obj2
        trace.append(obj)
        lam = max(lam / 10.0, 1e-12)
        if rel_drop < cfg.tolerance:
            converged = True
            break

    model = prob.to_model(p)
    per_peak = tuple((pk.mean, pk.std_dev, pk.weight) for pk in model.peaks)
    return FitReport(model=model, objective=obj, iterations=iterations,
                     converged=converged, per_peak=per_peak,
                     warnings=tuple(warnings), objective_trace=tuple(trace))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def report_to_json(report: FitReport) -> dict:
    model = report.model
    doc = {
        "constraint": model.constraint_kind.value,
        "x0": model.x0,
        "delta": model.spacing,
        "sat": model.sat,
        "peaks": [
            {"i": pk.index, "mean": pk.mean, "std": pk.std_dev, "weight": pk.weight}
            for pk in model.peaks
        ],
        "objective": report.objective,
        "converged": report.converged,
        "iterations": report.iterations,
    }
    if model.poisson_mu is not None:
        doc["mu"] = model.poisson_mu
    if report.warnings:
        doc["warnings"] = list(report.warnings)
    return doc


def report_from_json(doc: dict) -> FitReport:
    """Rebuild a report from its JSON form.

    Peak means in the document are authoritative; the ladder description is
    recomputed, which reproduces the stored (x0, delta, sat) exactly for
    fitter-produced documents and gives the least-squares description for
    hand-written ones.
    """
    try:
        peaks = doc["peaks"]
        means = [pk["mean"] for pk in peaks]
        stds = [pk["std"] for pk in peaks]
        weights = [pk["weight"] for pk in peaks]
        constraint = Constraint.parse(doc["constraint"])
    except (KeyError, TypeError) as exc:
        raise FitSetupError(f"malformed fit report: {exc}") from exc
    if not means:
        raise FitSetupError("malformed fit report: empty peaks list")
    try:
        model = MixtureModel.from_peaks(means, stds, weights, constraint,
                                        poisson_mu=doc.get("mu"))
    except (ValueError, TypeError) as exc:
        raise FitSetupError(f"malformed fit report: {exc}") from exc
    return FitReport(
        model=model,
        objective=float(doc.get("objective", math.nan)),
        iterations=int(doc.get("iterations", 0)),
        converged=bool(doc.get("converged", False)),
        per_peak=tuple((pk.mean, pk.std_dev, pk.weight) for pk in model.peaks),
        warnings=tuple(doc.get("warnings", ())),
    )
