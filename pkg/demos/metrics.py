"""
Precision, recall and the summary numbers
=========================================

Detections sorted by score form a ledger of true and false positives. This
script computes AP and the equal error rate for a few small ledgers where the
answers are easy to verify by hand.
"""
import numpy as np

from denserefine.evalkit import PrCurve, accuracy, average_precision, equal_error_rate, match_to_gt

###############################################################################
# TP, FP, TP against two ground-truth boxes: precision 1 at recall 0.5 and
# 2/3 at recall 1, so AP = 0.5 * 1 + 0.5 * 2/3.
curve = PrCurve.from_ledger([1, 0, 1], n_gt=2)
for s, p, r in curve.points():
    print(f"score {s:.0f}: precision {p:.3f}, recall {r:.3f}")
print(f"AP {average_precision(curve):.4f}")

###############################################################################
# A false positive ranked above the only hit. Precision and recall meet at 0.5.
print(f"EER {equal_error_rate(PrCurve.from_ledger([0, 1], n_gt=1)):.3f}")

###############################################################################
# Ledgers come from matching boxes: each detection, best score first, claims
# the unmatched truth it overlaps most, if the IoU reaches 0.5.
gt = np.array([[0, 0, 10, 10], [0, 20, 10, 30]], dtype=float)
dets = np.array([[0, 1, 10, 11], [0, 0, 10, 10], [0, 21, 10, 31]], dtype=float)
print("TP flags:", match_to_gt(dets, [0.9, 0.8, 0.7], gt).astype(int).tolist())

###############################################################################
# Actions are scored by plain accuracy.
print(f"accuracy {accuracy([1, 2, 3, 3], [1, 2, 3, 0]):.2f}")
