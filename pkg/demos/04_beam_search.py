"""
Beam search with the fused decoding score
=========================================

Beam search over random acoustic scores, checked against exhaustive search
over every label sequence.
"""

import numpy as np

from ftilm.decode import ArrayScoreProvider, DecodeConfig, beam_search
from ftilm.factorization import FusionWeights
from ftilm.ilm import FrozenLM, ToyNeuralLM
from ftilm.oracles import exhaustive_search

rng = np.random.default_rng(3)
T, V = 4, 3
provider = ArrayScoreProvider(1.5 * rng.standard_normal((T, V)), 1.5 * rng.standard_normal((T, V)))
ilm = FrozenLM(ToyNeuralLM(V, order=2, embed_dim=3, hidden_dim=4, rng=rng, init_scale=1.5))

for w in (FusionWeights(1.0, 0.0), FusionWeights(0.6, 0.6)):
    cfg = DecodeConfig(beam_size=4, weights=w, max_output_length=3)
    hyps = beam_search(provider, ilm, cfg)
    best = exhaustive_search(provider, ilm, cfg, 3)[0]
    print(f"alpha={w.alpha} beta={w.beta}")
    for h in hyps:
        print(f"   {h.tokens!s:12} score {h.score:8.4f}  frames {h.viterbi_alignment}")
    print("   exhaustive best:", best.tokens)
