"""
End to end on a small synthetic corpus
======================================

Generate data, pretrain the ILM on text, train the factorized transducer,
sweep the decode weights and finetune with MWER.  This uses a reduced
configuration so it finishes in well under a minute; ``ftilm run`` runs the
default one.  At this size the model is undertrained, so the gains seen
with the default configuration need not show up here.
"""

import json

from ftilm.harness import RunConfig, run_pipeline

cfg = RunConfig(n_train=80, n_dev=30, n_adapt=30, n_text=800, lm_steps=100, ft_epochs=6,
                alpha_grid=(0.6, 1.0), beta_grid=(0.0, 0.6), mwer_epochs=1, rare_threshold=0.1)
report = run_pipeline(cfg)

for row in report["sweep"]["rows"]:
    print(f"alpha={row['alpha']} beta={row['beta']}: WER {row['wer']:.3f}  rare-word WER {row['rare_wer']:.3f}"
          + ("  <- best" if row["argmin"] else ""))
print("MWER before", json.dumps(report["mwer"]["before"]))
print("MWER after ", json.dumps(report["mwer"]["after"]))
