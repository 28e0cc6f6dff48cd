"""
Factorized blank and label scores
=================================

The blank probability comes from a sigmoid; the label distribution mixes an
acoustic term with the internal LM.  At decode time alpha scales the ILM
inside the softmax and beta adds it once more outside.
"""

import numpy as np
from scipy.special import log_expit

from ftilm.factorization import FusionWeights, nonblank_scores, nonblank_train_logprobs

rng = np.random.default_rng(1)
V = 6
am, ilm, blank_logit = rng.standard_normal(V), 2 * rng.standard_normal(V), 0.3

# blank plus all labels is a proper distribution during training
train = nonblank_train_logprobs(am, ilm, blank_logit)
print("P(blank) + sum P(label) =", np.exp(log_expit(blank_logit)) + np.exp(train).sum())

# alpha = 1, beta = 0 gives the training scores exactly
print("identical at (1, 0):", np.array_equal(train, nonblank_scores(am, ilm, blank_logit, FusionWeights(1.0, 0.0))))

for w in (FusionWeights(1.0, 0.0), FusionWeights(0.6, 0.6), FusionWeights(1.3, 1.2)):
    s = nonblank_scores(am, ilm, blank_logit, w)
    print(f"alpha={w.alpha}, beta={w.beta}: best label {int(np.argmax(s))}, scores {np.round(s, 2)}")
