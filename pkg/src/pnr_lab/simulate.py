"""Monte Carlo generation of pulse-area samples and spectra.

The generative chain per gate: Poisson photon arrivals, Bernoulli thinning
by the quantum efficiency, Poisson dark detections, optional dead-cell
saturation, then one Gaussian area draw whose mean and variance follow the
detection count d:

    mean = area_offset + d*gain - d^2*sat
    var  = electronic_noise_var + [d>0]*extra_per_photon_var + d*mult_noise_var

Summing d independent per-detection Gaussian gains and one electronics term
produces exactly this Gaussian, so the sampler draws the aggregate directly;
subpopulation means and variances are identical either way.

Reproducibility: pulses are generated in fixed-size chunks, chunk k always
drawing from `core.substream(seed, k)`, and chunks are concatenated in index
order.  Output is therefore bit-identical no matter how many worker threads
are used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .core import DetectorModel, Histogram, substream

__all__ = [
    "CHUNK_PULSES",
    "SimConfig",
    "PulseRecord",
    "CapacityError",
    "FormatError",
    "sample_pulse",
    "run",
    "histogram_from_areas",
    "write_pulses_csv",
    "read_pulses_csv",
    "write_histogram_csv",
    "read_histogram_csv",
]

CHUNK_PULSES = 8192          # substream granularity; fixed forever for reproducibility
MAX_PULSES = 10_000_000      # storage budget guard (~240 MB of records)
CSV_VERSION = "# pnr-lab v1"

PULSE_DTYPE = np.dtype([
    ("true_incident", np.int64),
    ("true_detected", np.int64),
    ("area", np.float64),
])


class CapacityError(ValueError):
    """n_pulses exceeds the in-memory storage budget."""


class FormatError(ValueError):
    """A CSV file is not in the expected pnr-lab format."""


@dataclass(frozen=True)
class SimConfig:
    model: DetectorModel
    n_pulses: int
    seed: int
    bin_width: float | str = "auto"   # "auto" = gain/12

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if self.n_pulses > MAX_PULSES:
            raise CapacityError(
                f"n_pulses={self.n_pulses} exceeds the storage budget of {MAX_PULSES}")
        if isinstance(self.bin_width, str):
            if self.bin_width != "auto":
                raise ValueError(f"bin_width must be a positive number or 'auto', got {self.bin_width!r}")
        elif self.bin_width <= 0:
            raise ValueError("bin_width must be > 0")

    @property
    def resolved_bin_width(self) -> float:
        if self.bin_width == "auto":
            return self.model.gain_per_photon / 12.0
        return float(self.bin_width)


@dataclass(frozen=True)
class PulseRecord:
    true_incident: int    # photons arriving at the detector
    true_detected: int    # detections that actually fired (dark counts included)
    area: float


def _poisson_inverse(rng: np.random.Generator, mu: float, n: int) -> np.ndarray:
    """Poisson sampling by CDF inversion, truncated at mu + 12*sqrt(mu) + 20.

    The truncation leaves less than 1e-12 of probability mass outside the
    table for any mu, so the bias is far below anything observable.
    Inversion keeps the draw count per pulse fixed at one uniform, which is
    what makes the substream layout stable.
    """
    if mu < 0:
        raise ValueError("poisson mean must be >= 0")
    u = rng.random(n)
    if mu == 0.0:
        return np.zeros(n, dtype=np.int64)
    top = int(mu + 12.0 * math.sqrt(mu) + 20.0)
    k = np.arange(top + 1)
    log_pmf = k * math.log(mu) - mu - gammaln(k + 1.0)
    cdf = np.cumsum(np.exp(log_pmf))
    return np.searchsorted(cdf, u, side="left").astype(np.int64)


def _saturate(rng: np.random.Generator, detections: np.ndarray, cells: int) -> np.ndarray:
    """Dead-cell saturation: each detection claims a uniform random cell,
    and any detection landing on an already-claimed cell is lost."""
    total = int(detections.sum())
    if total == 0:
        return detections
    cell_ids = rng.integers(0, cells, size=total)
    pulse_ids = np.repeat(np.arange(len(detections), dtype=np.int64), detections)
    # one surviving detection per distinct (pulse, cell) pair
    surviving_pairs = np.unique(pulse_ids * cells + cell_ids)
    return np.bincount(surviving_pairs // cells, minlength=len(detections)).astype(np.int64)


def _sample_chunk(model: DetectorModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n pulse records.  RNG call order is part of the format: incident
    Poisson, thinning binomial, dark Poisson, cell assignment, area normal."""
    incident = _poisson_inverse(rng, model.mean_photon_number, n)
    if model.quantum_efficiency == 1.0:
        detected = incident.copy()
    elif model.quantum_efficiency == 0.0:
        detected = np.zeros(n, dtype=np.int64)
    else:
        detected = rng.binomial(incident, model.quantum_efficiency).astype(np.int64)
    if model.dark_rate_per_gate > 0:
        detected = detected + _poisson_inverse(rng, model.dark_rate_per_gate, n)
    if model.cell_count is not None:
        detected = _saturate(rng, detected, model.cell_count)

    d = detected.astype(np.float64)
    mean = model.area_offset + d * model.gain_per_photon - d * d * model.saturation_coeff
    var = (model.electronic_noise_var
           + np.where(detected > 0, model.extra_per_photon_var, 0.0)
           + d * model.mult_noise_var)
    area = mean + np.sqrt(var) * rng.standard_normal(n)

    out = np.empty(n, dtype=PULSE_DTYPE)
    out["true_incident"] = incident
    out["true_detected"] = detected
    out["area"] = area
    return out


def sample_pulse(model: DetectorModel, rng: np.random.Generator) -> PulseRecord:
    """Draw a single pulse from an externally managed random stream."""
    rec = _sample_chunk(model, rng, 1)[0]
    return PulseRecord(int(rec["true_incident"]), int(rec["true_detected"]), float(rec["area"]))


def run(config: SimConfig, workers: int = 1):
    """Generate the full pulse set and its histogram.

    Returns (records, histogram) where records is a structured array with
    fields true_incident/true_detected/area.  Deterministic for a fixed
    seed; `workers` only changes wall-clock time, never the output.
    """
    if config.n_pulses > MAX_PULSES:
        raise CapacityError(
            f"n_pulses={config.n_pulses} exceeds the storage budget of {MAX_PULSES}")
    n_chunks = (config.n_pulses + CHUNK_PULSES - 1) // CHUNK_PULSES

    def one_chunk(k: int) -> np.ndarray:
        size = min(CHUNK_PULSES, config.n_pulses - k * CHUNK_PULSES)
        return _sample_chunk(config.model, substream(config.seed, k), size)

    if workers <= 1 or n_chunks == 1:
        parts = [one_chunk(k) for k in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one_chunk, range(n_chunks)))
    records = np.concatenate(parts)
    hist = histogram_from_areas(records["area"], config.resolved_bin_width)
    return records, hist


def histogram_from_areas(areas: np.ndarray, bin_width: float) -> Histogram:
    """Bin areas on a grid of the given width aligned to multiples of it.

    The grid covers every sample, so underflow/overflow are zero here; they
    exist on the type for histograms read from external files.
    """
    areas = np.asarray(areas, dtype=float)
    if len(areas) == 0:
        raise ValueError("cannot histogram zero pulses")
    if bin_width <= 0:
        raise ValueError("bin_width must be > 0")
    lo = math.floor(areas.min() / bin_width) * bin_width
    n_bins = int(math.floor((areas.max() - lo) / bin_width)) + 1
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(areas, bins=edges)
    return Histogram(edges, counts.astype(np.int64), total_pulses=len(areas))


# ---------------------------------------------------------------------------
# CSV exchange formats (versioned)
# ---------------------------------------------------------------------------

def write_pulses_csv(path, records: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_VERSION + "\n")
        fh.write("true_incident,true_detected,area\n")
        for rec in records:
            # repr() is the shortest string that parses back to the same
            # float, so files round-trip exactly and re-runs are byte-stable
            fh.write(f"{int(rec['true_incident'])},{int(rec['true_detected'])},{float(rec['area'])!r}\n")


def read_pulses_csv(path) -> np.ndarray:
    with open(path) as fh:
        _check_version(fh, path)
        header = fh.readline().strip()
        if header != "true_incident,true_detected,area":
            raise FormatError(f"{path}: unexpected pulse CSV header {header!r}")
        rows = [line.split(",") for line in fh if line.strip()]
    out = np.empty(len(rows), dtype=PULSE_DTYPE)
    for j, row in enumerate(rows):
        if len(row) != 3:
            raise FormatError(f"{path}: bad pulse row {j + 1}")
        out[j] = (int(row[0]), int(row[1]), float(row[2]))
    return out


def write_histogram_csv(path, hist: Histogram) -> None:
    with open(path, "w") as fh:
        fh.write(CSV_VERSION + "\n")
        fh.write(f"# total_pulses={hist.total_pulses} underflow={hist.underflow} "
                 f"overflow={hist.overflow}\n")
        fh.write("bin_left,bin_right,count\n")
        for left, right, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            fh.write(f"{float(left)!r},{float(right)!r},{int(count)}\n")


def read_histogram_csv(path) -> Histogram:
    meta = {"total_pulses": None, "underflow": 0, "overflow": 0}
    with open(path) as fh:
        _check_version(fh, path)
        line = fh.readline()
        while line.startswith("#"):
            for part in line[1:].split():
                if "=" in part:
                    key, _, val = part.partition("=")
                    if key in meta:
                        meta[key] = int(val)
            line = fh.readline()
        if line.strip() != "bin_left,bin_right,count":
            raise FormatError(f"{path}: unexpected histogram CSV header {line.strip()!r}")
        lefts, rights, counts = [], [], []
        for j, raw in enumerate(fh):
            if not raw.strip():
                continue
            row = raw.split(",")
            if len(row) != 3:
                raise FormatError(f"{path}: bad histogram row {j + 1}")
            lefts.append(float(row[0]))
            rights.append(float(row[1]))
            counts.append(int(row[2]))
    if not lefts:
        raise FormatError(f"{path}: histogram has no bins")
    for a, b in zip(rights[:-1], lefts[1:]):
        if abs(a - b) > 1e-9 * max(1.0, abs(a)):
            raise FormatError(f"{path}: bins are not contiguous near {a}")
    edges = np.array(lefts + [rights[-1]])
    counts = np.array(counts, dtype=np.int64)
    total = meta["total_pulses"]
    if total is None:
        total = int(counts.sum()) + meta["underflow"] + meta["overflow"]
    return Histogram(edges, counts, total_pulses=total,
                     underflow=meta["underflow"], overflow=meta["overflow"])


def _check_version(fh, path) -> None:
    first = fh.readline().strip()
    if first != CSV_VERSION:
        raise FormatError(
            f"{path}: missing or unsupported version header (expected {CSV_VERSION!r}, "
            f"got {first!r})")
