"""Decision thresholds, regions, error rates, confusion matrices."""

import json
import math

import numpy as np
import pytest

from pnr_lab import (
    ConfusionMatrix,
    DetectorModel,
    InvalidModelError,
    MixtureModel,
    NoIntersectionError,
    SimConfig,
    build_scheme,
    classify,
    confusion,
    one_vs_many_error,
    run,
    threshold,
)
from pnr_lab.discriminate import confusion_to_csv, confusion_to_json, scheme_to_json

from conftest import REF_SAT, REF_SPACING, REF_X0, law_stds


def bisect_intersection(x1, s1, x2, s2):
    """Crossing of the two log-densities between the means (independent oracle)."""
    def f(x):
        return (-0.5 * ((x - x1) / s1) ** 2 - math.log(s1)) - (
            -0.5 * ((x - x2) / s2) ** 2 - math.log(s2))
    lo, hi = x1, x2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------- threshold

def test_threshold_equal_sigma_is_midpoint():
    assert threshold(0.0, 5.0, 100.0, 5.0) == pytest.approx(50.0, abs=1e-12)


@pytest.mark.parametrize("pair", [(0.0, 10.6, 135.0, 24.8),
                                  (135.0, 24.8, 275.0, 31.7)])
def test_threshold_matches_bisection(pair):
    t = threshold(*pair)
    assert pair[0] < t < pair[2]
    assert t == pytest.approx(bisect_intersection(*pair), abs=1e-6)


def test_threshold_matches_bisection_randomized():
    rng = np.random.default_rng(11)
    for _ in range(300):
        x1 = rng.uniform(-50, 50)
        dx = rng.uniform(5.0, 500.0)
        s1 = rng.uniform(0.5, 0.45 * dx)
        s2 = rng.uniform(0.5, 0.45 * dx)
        try:
            t = threshold(x1, s1, x1 + dx, s2)
        except NoIntersectionError:
            continue
        assert t == pytest.approx(bisect_intersection(x1, s1, x1 + dx, s2),
                                  abs=1e-6)


def test_threshold_scale_invariance():
    t = threshold(0.0, 10.6, 135.0, 24.8)
    for c in (0.01, 3.0, 1e4):
        assert threshold(0.0, c * 10.6, c * 135.0, c * 24.8) == pytest.approx(
            c * t, rel=1e-12)


def test_threshold_no_interior_crossing():
    # sigma ratio 100 at separation 0.5: the wide peak dominates everywhere
    # between the means, so the equal-weight crossing lies outside (x_i, x_next)
    with pytest.raises(NoIntersectionError):
        threshold(0.0, 1.0, 0.5, 100.0)


def test_threshold_input_validation():
    with pytest.raises(ValueError):
        threshold(100.0, 5.0, 0.0, 5.0)  # reversed means
    with pytest.raises(ValueError):
        threshold(0.0, -1.0, 100.0, 5.0)
    with pytest.raises(ValueError):
        threshold(0.0, 5.0, math.inf, 5.0)


# ---------------------------------------------------------------- build_scheme

def test_scheme_thresholds_interleave_means(catalog_model):
    sch = build_scheme(catalog_model, "equal")
    means = catalog_model.means()
    assert len(sch.thresholds) == 6
    for i, t in enumerate(sch.thresholds):
        assert means[i] < t < means[i + 1]
    assert all(a < b for a, b in zip(sch.thresholds, sch.thresholds[1:]))


def test_scheme_well_separated_errors_negligible():
    m = MixtureModel.from_peaks([0.0, 100.0], [5.0, 5.0])  # spacing = 20 sigma
    sch = build_scheme(m, "equal")
    assert all(e < 1e-15 for e in sch.error_per_number)


def test_scheme_middle_peak_has_double_error():
    # spacing 6 sigma: non-adjacent leakage is ~4*Phi(-9) ~ 5e-19, so the
    # two-neighbours-vs-one symmetry holds to 1e-12
    s = 30.0
    m = MixtureModel.from_peaks([0.0, 6 * s, 12 * s], [s, s, s])
    sch = build_scheme(m, "equal")
    e0, e1, e2 = sch.error_per_number
    assert e0 == pytest.approx(e2, abs=1e-15)
    assert e1 == pytest.approx(2 * e0, abs=1e-12)
    assert e0 > 1e-5  # not trivially zero


def test_scheme_from_weights_shifts_cut_toward_light_peak():
    m_eq = MixtureModel.from_peaks([0.0, 100.0], [20.0, 20.0], [0.5, 0.5])
    m_sk = MixtureModel.from_peaks([0.0, 100.0], [20.0, 20.0], [0.9, 0.1])
    t_eq = build_scheme(m_eq, "from-weights").thresholds[0]
    t_sk = build_scheme(m_sk, "from-weights").thresholds[0]
    assert t_eq == pytest.approx(50.0, abs=1e-9)
    assert t_sk > t_eq  # the heavy low peak claims more of the axis


def test_scheme_rejects_bad_inputs(catalog_model):
    with pytest.raises(InvalidModelError):
        build_scheme(MixtureModel.from_peaks([0.0, 100.0, 50.0],
                                             [5.0, 5.0, 5.0]), "equal")
    with pytest.raises(ValueError):
        build_scheme(catalog_model, "bayes")


# ---------------------------------------------------------------- classify

def test_classify_regions_and_tie_break(catalog_model):
    sch = build_scheme(catalog_model, "equal")
    t1 = sch.thresholds[0]
    assert classify(t1 - 1.0, sch) == 0
    assert classify(t1, sch) == 0          # boundary goes to the lower region
    assert classify(np.nextafter(t1, np.inf), sch) == 1
    assert classify(-1e9, sch) == 0
    assert classify(1e9, sch) == 6
    arr = classify(np.array([-50.0, 135.0, 859.0]), sch)
    assert arr.dtype == np.int64 and list(arr) == [0, 1, 6]


def test_classify_monotone(catalog_model):
    sch = build_scheme(catalog_model, "equal")
    x = np.linspace(-100, 1000, 4001)
    d = classify(x, sch)
    assert (np.diff(d) >= 0).all()
    assert set(d) == set(range(7))


def test_classify_against_simulation(ref_detector):
    # simulate, restrict to the 7 modeled photon numbers, decide with the
    # generator's own ladder and the empirical mix, compare the per-region
    # wrong-decision rate against the scheme's prediction
    recs, _ = run(SimConfig(model=ref_detector, n_pulses=100_000, seed=5),
                  workers=4)
    keep = recs["true_detected"] <= 6
    areas, true_d = recs["area"][keep], recs["true_detected"][keep]
    n = len(areas)
    emp = np.bincount(true_d, minlength=7) / n
    gen = MixtureModel.from_ladder(REF_X0, REF_SPACING, REF_SAT, law_stds(7),
                                   weights=emp)
    sch = build_scheme(gen, "from-weights")
    decided = classify(areas, sch)
    for i in range(7):
        rate = np.sum((decided == i) & (true_d != i)) / n
        pred = sch.error_per_number[i] / 7
        se = math.sqrt(max(pred * (1 - pred), 1e-12) / n)
        assert abs(rate - pred) <= 3 * se, f"region {i}: {rate} vs {pred}"


# ---------------------------------------------------------------- one vs many

def test_one_vs_many_catalog(catalog_model):
    err = one_vs_many_error(catalog_model, [0, 0.5, 0.5, 0, 0, 0, 0])
    assert err == pytest.approx(0.0065527842461901705, rel=1e-9)
    assert err <= 0.015


def test_one_vs_many_limits():
    base = one_vs_many_error(
        MixtureModel.from_peaks([0, 135, 270], [15.0, 20.0, 25.0]),
        [0, 0.5, 0.5])
    far = one_vs_many_error(
        MixtureModel.from_peaks([0, 1350, 2700], [15.0, 20.0, 25.0]),
        [0, 0.5, 0.5])
    sharp = one_vs_many_error(
        MixtureModel.from_peaks([0, 135, 270], [1e-3, 1e-3, 1e-3]),
        [0, 0.5, 0.5])
    assert far < base
    assert far < 1e-15
    assert sharp < 1e-15


def test_one_vs_many_validation(catalog_model):
    with pytest.raises(InvalidModelError):
        one_vs_many_error(MixtureModel.from_peaks([0.0, 100.0], [5.0, 5.0]),
                          [0.5, 0.5])
    with pytest.raises(ValueError):
        one_vs_many_error(catalog_model, [0.5, 0.5])  # wrong length
    with pytest.raises(ValueError):
        one_vs_many_error(catalog_model, [1, 0, 0, 0, 0, 0, 0])  # no mass on 1/many


# ---------------------------------------------------------------- confusion

def test_confusion_rows_and_diagonal(catalog_model):
    cm = confusion(catalog_model, np.full(7, 1 / 7))
    assert cm.matrix.shape == (7, 7)
    assert np.allclose(cm.matrix.sum(axis=1), 1.0, atol=1e-9)
    sch = build_scheme(catalog_model, "equal")
    for i in range(7):
        # exact consistency: with equal priors, error_per_number[i] is the
        # off-diagonal mass of column i (foreign density inside region i)
        col_foreign = cm.matrix[:, i].sum() - cm.matrix[i, i]
        assert col_foreign == pytest.approx(sch.error_per_number[i], abs=1e-12)
        # leak-out of a peak tracks foreign leak-in only approximately (the
        # two integrals differ in which density crosses which cut; widening
        # sigmas make the last peak leak out ~3e-3 more than leaks in)
        assert cm.matrix[i, i] >= 1 - sch.error_per_number[i] - 3e-3
        assert cm.matrix[i, i] > 0.9


def test_confusion_matrix_validation():
    bad = np.array([[0.9, 0.2], [0.1, 0.9]])  # rows do not sum to 1
    with pytest.raises(ValueError):
        ConfusionMatrix(bad, (0.5, 0.5))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.ones((2, 3)) / 3, (0.5, 0.5))


# ---------------------------------------------------------------- serializers

def test_scheme_json_round_trip(catalog_model):
    sch = build_scheme(catalog_model, "equal")
    doc = json.loads(json.dumps(scheme_to_json(sch)))
    assert doc["thresholds"] == list(sch.thresholds)
    assert doc["priors"] == list(sch.priors)
    assert doc["error_per_number"] == list(sch.error_per_number)


def test_confusion_serializers(tmp_path, catalog_model):
    cm = confusion(catalog_model, np.full(7, 1 / 7))
    doc = confusion_to_json(cm)
    assert np.allclose(doc["matrix"], cm.matrix)
    path = tmp_path / "confusion.csv"
    confusion_to_csv(path, cm)
    lines = path.read_text().splitlines()
    assert lines[0] == "# pnr-lab v1"
    assert lines[1].split(",")[:2] == ["true_n", "decide_0"]
    body = np.array([[float(v) for v in ln.split(",")[1:]] for ln in lines[2:]])
    assert np.allclose(body, cm.matrix, atol=1e-9)
