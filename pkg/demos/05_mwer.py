"""
Minimum word error rate over an N-best list
===========================================

Hypothesis posteriors combine each hypothesis's log-probability with beta
times its ILM score.  The loss is the expected number of word errors.
"""

import numpy as np

from ftilm.mwer import NBestItem, hypothesis_posteriors, mwer_gradients, mwer_loss, word_edit_distance

ref = "the cat sat".split()
hyps = ["the cat sat", "the cats sat", "a cat", "the cat sat down"]
logp = [-3.1, -2.9, -4.0, -3.5]
ilm = [-6.0, -8.5, -5.0, -9.0]
nbest = [NBestItem(tuple(h.split()), s, l, word_edit_distance(h.split(), ref)) for h, s, l in zip(hyps, logp, ilm)]

for beta in (0.0, 0.6):
    p = hypothesis_posteriors(nbest, beta)
    print(f"beta={beta}: posteriors {np.round(p, 3)}, expected errors {mwer_loss(nbest, beta):.3f}")

# the gradient pushes probability towards hypotheses with fewer errors than average
print("d loss / d log P:", np.round(mwer_gradients(nbest, 0.6), 3))
