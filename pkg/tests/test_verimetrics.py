import csv

import numpy as np
import pytest

from periscope import verimetrics as vm

from oracles import oracle_curve, oracle_eer, oracle_frr_at_far


def make_scores(rng, n=200, m=400, sep=1.0):
    genuine = rng.normal(sep, 1.0, size=n)
    impostor = rng.normal(0.0, 1.0, size=m)
    return genuine, impostor


def test_curve_endpoints_and_monotonicity():
    rng = np.random.default_rng(7)
    gen, imp = make_scores(rng)
    curve = vm.error_curve(gen, imp)
    assert curve.far[0] == 1.0
    assert curve.frr[0] == 0.0
    assert curve.far[-1] == 0.0
    assert curve.frr[-1] == 1.0
    assert np.all(np.diff(curve.thresholds) > 0)
    assert np.all(np.diff(curve.far) <= 0)
    assert np.all(np.diff(curve.frr) >= 0)
    # sentinel sits immediately above the max score
    assert curve.thresholds[-1] == np.nextafter(curve.thresholds[-2], np.inf)


def test_curve_matches_direct_counting():
    rng = np.random.default_rng(11)
    gen, imp = make_scores(rng, n=37, m=53)
    curve = vm.error_curve(gen, imp)
    _, far, frr = oracle_curve(gen, imp)
    # same number of distinct scores, same rates at each (sentinels differ
    # in value but both carry the terminal point)
    assert len(curve.thresholds) == len(far)
    for k in range(len(far)):
        assert curve.far[k] == pytest.approx(float(far[k]), abs=0)
        assert curve.frr[k] == pytest.approx(float(frr[k]), abs=0)


def test_eer_three_by_three_worked_example():
    gen = [0.8, 0.6, 0.4]
    imp = [0.5, 0.3, 0.1]
    res = vm.eer_from_scores(gen, imp)
    assert res.eer == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert res.threshold == pytest.approx(0.5, abs=0)
    assert vm.format_eer_percent(res.eer) == "33.33"


def test_frr_at_far_three_by_three():
    gen = [0.8, 0.6, 0.4]
    imp = [0.5, 0.3, 0.1]
    curve = vm.error_curve(gen, imp)
    # first threshold with FAR strictly below 1/3 is 0.6, where FRR = 1/3
    assert vms_close(vm.frr_at_far(curve, 1.0 / 3.0), 1.0 / 3.0)


def vms_close(a, b):
    return abs(a - b) < 1e-15


def test_separated_scores_give_zero_eer():
    gen = [0.9, 0.8]
    imp = [0.2, 0.1]
    res = vm.eer_from_scores(gen, imp)
    assert res.eer == 0.0
    curve = vm.error_curve(gen, imp)
    assert vm.frr_at_far(curve, 0.5) == 0.0


def test_identical_score_lists():
    scores = [0.1 * k for k in range(1, 11)]
    res = vm.eer_from_scores(scores, scores)
    assert res.eer == pytest.approx(0.5, abs=1e-15)
    curve = vm.error_curve(scores, scores)
    # every sub-sentinel threshold keeps FAR >= 0.1 > 0.05, so the
    # operating point saturates at the curve end
    assert vm.frr_at_far(curve, 0.05) == 1.0


def test_eer_matches_rational_oracle():
    rng = np.random.default_rng(23)
    for trial in range(40):
        n = int(rng.integers(2, 300))
        m = int(rng.integers(2, 300))
        if trial % 2 == 0:
            gen = rng.normal(0.7, 0.4, size=n)
            imp = rng.normal(0.0, 0.5, size=m)
        else:
            gen = rng.uniform(0.2, 1.0, size=n)
            imp = rng.uniform(0.0, 0.8, size=m)
        got = vm.eer_from_scores(gen, imp).eer
        want = oracle_eer(gen, imp)
        assert got == pytest.approx(want, abs=1e-12)


def test_frr_at_far_matches_oracle():
    rng = np.random.default_rng(29)
    for _ in range(25):
        gen = rng.normal(0.8, 0.5, size=int(rng.integers(5, 120)))
        imp = rng.normal(0.0, 0.5, size=int(rng.integers(5, 120)))
        for target in (0.01, 0.1, 0.25):
            got = vm.frr_at_far(vm.error_curve(gen, imp), target)
            assert got == pytest.approx(oracle_frr_at_far(gen, imp, target), abs=0)


def test_frr_at_far_interpolated_between_steps():
    gen = [0.8, 0.6, 0.4]
    imp = [0.5, 0.3, 0.1]
    curve = vm.error_curve(gen, imp)
    # between (far=1/3, frr=1/3) at t=0.5 and (far=0, frr=1/3) at t=0.6
    # the FRR is flat, so interpolation changes nothing here
    assert vm.frr_at_far(curve, 0.2, interpolate=True) == pytest.approx(1.0 / 3.0)
    # a sloped segment: genuine and impostor interleaved
    gen2 = [0.9, 0.5, 0.3]
    imp2 = [0.7, 0.4, 0.2]
    curve2 = vm.error_curve(gen2, imp2)
    stepped = vm.frr_at_far(curve2, 0.5)
    interp = vm.frr_at_far(curve2, 0.5, interpolate=True)
    assert 0.0 <= interp <= stepped


def test_monotone_transform_invariance():
    rng = np.random.default_rng(31)
    for _ in range(20):
        gen, imp = make_scores(rng, n=80, m=130, sep=0.9)
        base = vm.eer_from_scores(gen, imp).eer
        a, b = float(rng.uniform(0.5, 3.0)), float(rng.uniform(-2.0, 2.0))
        affine = vm.eer_from_scores(a * gen + b, a * imp + b).eer
        cubic = vm.eer_from_scores(gen**3 + 2 * gen, imp**3 + 2 * imp).eer
        assert affine == pytest.approx(base, abs=1e-12)
        assert cubic == pytest.approx(base, abs=1e-12)


def test_midpoint_method_picks_nearest_vertex():
    gen = [0.9, 0.7, 0.2]
    imp = [0.6, 0.5, 0.1]
    res = vm.eer_from_scores(gen, imp, method="midpoint")
    curve = vm.error_curve(gen, imp)
    d = np.abs(curve.far - curve.frr)
    k = int(np.argmin(d))
    assert res.eer == pytest.approx(0.5 * (curve.far[k] + curve.frr[k]))


def test_step_lookup_at_arbitrary_thresholds():
    rng = np.random.default_rng(37)
    gen = rng.normal(1.0, 0.5, size=60)
    imp = rng.normal(0.0, 0.5, size=90)
    curve = vm.error_curve(gen, imp)
    for t in rng.uniform(-2.0, 3.0, size=50):
        far_direct = np.mean(imp >= t)
        frr_direct = np.mean(gen < t)
        assert curve.far_at(float(t)) == pytest.approx(far_direct, abs=0)
        assert curve.frr_at(float(t)) == pytest.approx(frr_direct, abs=0)


def test_curve_csv_roundtrip(tmp_path):
    gen = [0.8, 0.6, 0.4]
    imp = [0.5, 0.3, 0.1]
    curve = vm.error_curve(gen, imp)
    path = tmp_path / "curve.csv"
    vm.write_curve_csv(curve, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "far", "frr"]
    assert len(rows) == 1 + len(curve.thresholds)
    for row, t, fa, fr in zip(rows[1:], curve.thresholds, curve.far, curve.frr):
        assert float(row[0]) == t
        assert float(row[1]) == fa
        assert float(row[2]) == fr


def test_empty_and_invalid_inputs():
    with pytest.raises(vm.EmptyScoreListError):
        vm.error_curve([], [0.1])
    with pytest.raises(vm.EmptyScoreListError):
        vm.error_curve([0.1], [])
    with pytest.raises(ValueError):
        vm.error_curve([0.1, np.nan], [0.2])
    with pytest.raises(ValueError):
        vm.eer_from_scores([0.9, 0.1], [0.5, 0.2], method="nope")
