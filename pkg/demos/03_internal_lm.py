"""
Pretraining and freezing the internal LM
========================================
"""

import numpy as np

from ftilm.errors import UnsupportedOperationError
from ftilm.ilm import ToyNeuralLM, freeze, perplexity, pretrain

rng = np.random.default_rng(2)
# a tiny corpus: label 0 ends each sentence, and 2 always follows 1
corpus = [[1, 2, 3, 0], [3, 1, 2, 0], [1, 2, 0], [3, 3, 1, 2, 0]] * 20

lm = ToyNeuralLM(4, order=2, embed_dim=8, hidden_dim=16, rng=rng)
print("perplexity before", perplexity(lm, corpus))
res = pretrain(lm, corpus, steps=300, learning_rate=0.5, momentum=0.9)
print("perplexity after ", perplexity(res.lm, corpus))

frozen = freeze(res.lm)
state = frozen.advance(frozen.start_state, 1)
print("P(next | ... 1) =", np.round(np.exp(frozen.logprobs(state)), 3))

# frozen parameters are read-only
try:
    frozen.unfreeze()
except UnsupportedOperationError as exc:
    print("unfreeze refused:", exc)
