"""Verification error metrics: FAR/FRR curves, EER, and fixed-FAR operating points.

Scores are similarities (higher means more genuine) and a comparison is
accepted iff score >= threshold, ties accepted. All curves are exact step
functions evaluated at every distinct score, with one sentinel threshold
just above the maximum score so the (FAR=0, FRR=1) endpoint is always on
the curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


class EmptyScoreListError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorCurve:
    """FAR/FRR step functions sampled at every distinct score.

    thresholds are strictly increasing; far is non-increasing and frr
    non-decreasing along them. far[0] == 1, frr[0] == 0 and the sentinel
    last row carries far == 0, frr == 1.
    """

    thresholds: np.ndarray
    far: np.ndarray
    frr: np.ndarray

    def far_at(self, threshold: float) -> float:
        """FAR of the accept-if->=threshold rule at an arbitrary threshold."""
        return float(self._step(self.far, threshold))

    def frr_at(self, threshold: float) -> float:
        """FRR of the accept-if->=threshold rule at an arbitrary threshold."""
        return float(self._step(self.frr, threshold))

    def _step(self, values: np.ndarray, threshold: float) -> float:
        # Between two distinct scores the step functions hold the value of
        # the next threshold up: no score lies in the open interval, so
        # counts only change when the threshold crosses a score.
        k = int(np.searchsorted(self.thresholds, threshold, side="left"))
        if k >= len(values):
            k = len(values) - 1
        return float(values[k])


@dataclass(frozen=True)
class EerResult:
    eer: float
    threshold: float
    method: str  # "interpolated" or "midpoint"


def error_curve(genuine, impostor) -> ErrorCurve:
    """Exact FAR/FRR step curves from genuine and impostor score lists.

    No binning: thresholds are the distinct scores plus a sentinel just
    above the maximum. FAR(t) = P(impostor >= t), FRR(t) = P(genuine < t).
    """
    gen = np.asarray(genuine, dtype=np.float64)
    imp = np.asarray(impostor, dtype=np.float64)
    if gen.size == 0 or imp.size == 0:
        raise EmptyScoreListError("both genuine and impostor score lists must be nonempty")
    if not (np.isfinite(gen).all() and np.isfinite(imp).all()):
        raise ValueError("scores must be finite")

    thr = np.unique(np.concatenate([gen, imp]))
    thr = np.append(thr, np.nextafter(thr[-1], np.inf))
    gen_sorted = np.sort(gen)
    imp_sorted = np.sort(imp)
    # of impostors accepted: score >= t
    far = (imp.size - np.searchsorted(imp_sorted, thr, side="left")) / imp.size
    # of genuines rejected: score < t
    frr = np.searchsorted(gen_sorted, thr, side="left") / gen.size
    return ErrorCurve(thresholds=thr, far=far, frr=frr)


def eer(curve: ErrorCurve, method: str = "interpolated") -> EerResult:
    """Equal error rate of a FAR/FRR curve.

    FAR - FRR is non-increasing in the threshold, so it has a single sign
    change. If some threshold achieves FAR == FRR exactly, that point is
    returned. Otherwise the crossing is linearly interpolated between the
    two adjacent thresholds; the interpolated rate depends only on the
    four FAR/FRR values there, which is what makes EER invariant under
    strictly increasing transforms of the scores.
    """
    if method not in ("interpolated", "midpoint"):
        raise ValueError(f"unknown EER method: {method!r}")
    d = curve.far - curve.frr
    k = int(np.argmax(d <= 0.0))  # first index at/after the crossing
    if d[k] == 0.0:
        return EerResult(eer=float(curve.far[k]), threshold=float(curve.thresholds[k]), method=method)
    if method == "midpoint":
        j = k if abs(d[k]) <= abs(d[k - 1]) else k - 1
        value = 0.5 * (curve.far[j] + curve.frr[j])
        return EerResult(eer=float(value), threshold=float(curve.thresholds[j]), method="midpoint")
    s = d[k - 1] / (d[k - 1] - d[k])
    value = curve.far[k - 1] + s * (curve.far[k] - curve.far[k - 1])
    threshold = curve.thresholds[k - 1] + s * (curve.thresholds[k] - curve.thresholds[k - 1])
    return EerResult(eer=float(value), threshold=float(threshold), method="interpolated")


def eer_from_scores(genuine, impostor, method: str = "interpolated") -> EerResult:
    return eer(error_curve(genuine, impostor), method=method)


def frr_at_far(curve: ErrorCurve, far_target: float, interpolate: bool = False) -> float:
    """FRR at the tightest threshold that pushes FAR under the target.

    The operating point is the smallest curve threshold with FAR strictly
    below far_target (the step just past the target; FAR == far_target is
    still attributed to the preceding step). With interpolate=True the FRR
    is read off the (FAR, FRR) segment at FAR == far_target instead.
    Saturates at 1.0 when no threshold qualifies.
    """
    if not (0.0 < far_target < 1.0):
        raise ValueError("far_target must lie strictly between 0 and 1")
    below = np.nonzero(curve.far < far_target)[0]
    if below.size == 0:
        return 1.0
    k = int(below[0])
    if not interpolate or k == 0 or curve.far[k - 1] == curve.far[k]:
        return float(curve.frr[k])
    s = (curve.far[k - 1] - far_target) / (curve.far[k - 1] - curve.far[k])
    return float(curve.frr[k - 1] + s * (curve.frr[k] - curve.frr[k - 1]))


def write_curve_csv(curve: ErrorCurve, path) -> None:
    """Export a curve as CSV columns (threshold, far, frr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "far", "frr"])
        for t, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
            writer.writerow([repr(float(t)), repr(float(fa)), repr(float(fr))])


def format_eer_percent(eer_value: float) -> str:
    """EER as a percentage with two decimals, the convention used in reports."""
    return f"{100.0 * eer_value:.2f}"
