"""
Dense proposal maps
===================

Every pixel of a dense map carries a presence probability and four offsets
to the box it belongs to. This walk-through encodes a few boxes, decodes
them back and scores a noisy prediction against the target.
"""
import numpy as np

from denserefine import GroundTruthScene, decode_to_global, detection_loss, encode_ground_truth
from denserefine.densemap import DenseProposalMap, active_set

###############################################################################
# Two overlapping boxes on a small grid. Where they overlap, the box whose top
# edge is lower wins the pixel.
scene = GroundTruthScene((12, 16), np.array([[1.0, 1.0, 8.0, 9.0], [4.0, 6.0, 10.0, 14.0]]))
target = encode_ground_truth(scene)
print("presence map:")
print(target.P.astype(int))

###############################################################################
# Offsets are stored relative to the pixel and divided by the grid size, so
# decoding reproduces each owner's corners exactly.
decoded = decode_to_global(target)
print("box decoded at (5, 7):", decoded[5, 7])
print("box decoded at (2, 2):", decoded[2, 2])

###############################################################################
# A prediction that hedges everywhere (P = 0.5) pays log 2 per pixel in the
# classification term.
hedge = DenseProposalMap(np.full(target.P.shape, 0.5), target.B, target.scale)
print(f"loss of a hedging predictor: {detection_loss(hedge, target):.4f}  (log 2 = {np.log(2):.4f})")

###############################################################################
# Perturb the offsets a little and the regression term picks it up.
rng = np.random.default_rng(0)
noisy = DenseProposalMap(target.P, target.B + rng.normal(0, 0.01, target.B.shape), target.scale)
print(f"loss with offset noise: {detection_loss(noisy, target):.5f}")

###############################################################################
# Thresholding the presence map gives the active set that refinement works on.
act = active_set(target, rho=0.2)
print(f"{len(act.indices)} active locations, first box {act.boxes[0]}")
