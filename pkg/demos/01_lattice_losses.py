"""
Transducer lattices: full-sum loss, gradients and banding
=========================================================

A lattice holds the blank and label log-probabilities of every (frame, label)
state.  The loss sums over all monotone paths; a band keeps only the paths
that emit each label near a given frame.
"""

import numpy as np

from ftilm.lattice import LogProbLattice, brute_force_loss, full_sum_loss, loss_gradients, restricted_full_sum_loss
from ftilm.mwer import BandConfig, band_from_alignment

rng = np.random.default_rng(0)
T, U = 6, 3
lattice = LogProbLattice(np.log(rng.uniform(0.1, 0.9, (T, U + 1))), np.log(rng.uniform(0.1, 0.9, (T, U))))

# the dynamic programme agrees with enumerating every path
print("full-sum loss   ", full_sum_loss(lattice))
print("by enumeration  ", brute_force_loss(lattice))

# gradients are minus the posterior occupancy of each arc
g = loss_gradients(lattice)
print("blank-arc occupancy per frame:", np.round(-g.blank.sum(axis=1), 3))

# narrow the band around an alignment; the loss can only go up
alignment = (1, 2, 4)
for c in range(4):
    mask = band_from_alignment(alignment, BandConfig(c, c), T, U)
    print(f"C={c}: {mask.num_paths():3d} paths, loss {restricted_full_sum_loss(lattice, mask):.4f}")
