"""
Verification error rates from raw scores
========================================

A verifier emits one similarity score per comparison. Every evaluation
in this toolkit reduces to two score piles: genuine (same identity) and
impostor (different identities). This demo walks the step curve, the
equal error rate, and the operating-point lookup on a six-score example
small enough to check by hand.
"""

import numpy as np

from periscope.verimetrics import (
    eer_from_scores,
    error_curve,
    format_eer_percent,
    frr_at_far,
)

# Three genuine and three impostor scores. At threshold 0.5 exactly one
# genuine falls below (0.4) and exactly one impostor sits above (0.5),
# so FAR = FRR = 1/3 there.
genuine = [0.8, 0.6, 0.4]
impostor = [0.5, 0.3, 0.1]

# The curve enumerates every distinct score as a candidate threshold,
# plus a sentinel above the maximum so it always ends at FAR 0 / FRR 1.
curve = error_curve(genuine, impostor)
print("threshold  FAR     FRR")
for t, fa, fr in zip(curve.thresholds, curve.far, curve.frr):
    print(f"{t:9.2f}  {fa:.4f}  {fr:.4f}")

# The equal error rate is where the two step functions cross. Here the
# crossing happens exactly on a vertex.
result = eer_from_scores(genuine, impostor)
print(f"\nEER = {result.eer:.6f} at threshold {result.threshold:.2f}")
print("as a report percentage:", format_eer_percent(result.eer))

# When the crossing falls between two vertices, the default method
# interpolates along the segment; "midpoint" instead reports the mean
# of FAR and FRR at the nearest vertex. Both agree on clean crossings.
midpoint = eer_from_scores(genuine, impostor, method="midpoint")
print(f"midpoint method agrees: {midpoint.eer:.6f}")

# Security-style operating points read the other way: fix a FAR budget,
# look up the FRR there.
print(f"FRR at FAR <= 1/3: {frr_at_far(curve, 1 / 3):.4f}")

# EER depends only on score order, never on score scale. Any strictly
# increasing transform leaves it untouched.
squashed = eer_from_scores(np.tanh(genuine), np.tanh(impostor))
print(f"after tanh squashing the EER is still {squashed.eer:.6f}")
