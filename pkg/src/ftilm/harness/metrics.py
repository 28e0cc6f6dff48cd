"""Word error rate, rare-word error rate, and the decode-weight sweep."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from ..decode import BASELINE_SHALLOW_FUSION, DecodeConfig, beam_search
from ..errors import InvalidInputError
from ..factorization import FusionWeights
from ..mwer import edit_alignment
from .config import RunConfig
from .data import ToyCorpus, Vocab


@dataclass(frozen=True)
class ErrorCounts:
    edits: int = 0
    ref_words: int = 0
    rare_errors: int = 0
    rare_words: int = 0

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def astuple(self):
        return (self.edits, self.ref_words, self.rare_errors, self.rare_words)

    @property
    def wer(self) -> float:
        return self.edits / self.ref_words if self.ref_words else 0.0

    @property
    def rare_wer(self) -> float:
        return self.rare_errors / self.rare_words if self.rare_words else 0.0


def count_errors(hyp: Sequence[str], ref: Sequence[str], rare) -> ErrorCounts:
    """Edit counts for one utterance.

    A reference word counts as a rare-word error when the backtrace substitutes
    or deletes it.  Insertions have no reference word and only enter the WER.
    """
    ops = edit_alignment(hyp, ref)
    rare_errors = sum(1 for op, _, j in ops if op in ("sub", "del") and ref[j] in rare)
    return ErrorCounts(
        edits=sum(op != "match" for op, _, _ in ops),
        ref_words=len(ref),
        rare_errors=rare_errors,
        rare_words=sum(w in rare for w in ref),
    )


@dataclass
class EvalResult:
    wer: float
    rare_wer: float
    counts: ErrorCounts
    records: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"wer": self.wer, "rare_wer": self.rare_wer, **dict(zip(("edits", "ref_words", "rare_errors", "rare_words"), self.counts.astuple()))}


def score_transcripts(pairs, rare) -> EvalResult:
    """``pairs`` is a sequence of ``(utt_id, hyp_words, ref_words)``."""
    total = ErrorCounts()
    records = []
    for utt_id, hyp, ref in pairs:
        c = count_errors(hyp, ref, rare)
        total = total + c
        records.append({"utt_id": utt_id, "hyp": list(hyp), "ref": list(ref), "edits": c.edits, "rare_errors": c.rare_errors})
    if not records:
        raise InvalidInputError("cannot evaluate an empty split")
    return EvalResult(total.wer, total.rare_wer, total, records)


def decode_words(provider, model, vocab: Vocab, dcfg: DecodeConfig, ext_lm=None) -> list[str]:
    hyps = beam_search(provider, model.ilm, dcfg, ext_lm=ext_lm)
    return vocab.decode(hyps[0].tokens)


def evaluate(model, utterances, vocab: Vocab, dcfg: DecodeConfig, ext_lm=None, providers=None) -> EvalResult:
    """Decode every utterance and score the top hypothesis against its reference.

    ``providers`` may hold precomputed per-utterance score providers so that
    repeated decodes (a weight sweep) skip the network forward pass.
    """
    utterances = list(utterances)
    if not utterances:
        raise InvalidInputError("cannot evaluate an empty split")
    dcfg = _forbid_eos(dcfg, vocab)
    if providers is None:
        providers = [model.provider(u.features) for u in utterances]
    pairs = [(u.utt_id, decode_words(p, model, vocab, dcfg, ext_lm), u.words) for u, p in zip(utterances, providers)]
    return score_transcripts(pairs, vocab.rare)


def _forbid_eos(dcfg: DecodeConfig, vocab: Vocab) -> DecodeConfig:
    if vocab.eos_id in dcfg.forbidden_tokens:
        return dcfg
    return replace(dcfg, forbidden_tokens=tuple(dcfg.forbidden_tokens) + (vocab.eos_id,))


@dataclass
class SweepResult:
    rows: list
    argmin: dict
    baseline: Optional[dict] = None

    def row(self, alpha: float, beta: float) -> dict:
        for r in self.rows:
            if r["alpha"] == alpha and r["beta"] == beta:
                return r
        raise KeyError((alpha, beta))

    def to_dict(self) -> dict:
        return {"rows": self.rows, "argmin": self.argmin, "baseline": self.baseline}


def sweep(model, corpus: ToyCorpus, cfg: RunConfig, split: str = "dev", ext_lm=None) -> SweepResult:
    """Decode ``split`` at every (alpha, beta) grid point.

    The argmin is the row with the lowest WER; ties go to lower rare-word WER,
    then to grid order.  With ``ext_lm`` a shallow-fusion baseline row is added
    outside the grid.
    """
    utts = corpus.split(split)
    providers = [model.provider(u.features) for u in utts]
    rows = []
    for a in cfg.alpha_grid:
        for b in cfg.beta_grid:
            res = evaluate(model, utts, corpus.vocab, cfg.decode_config(FusionWeights(a, b)), providers=providers)
            rows.append({"alpha": a, "beta": b, "wer": res.wer, "rare_wer": res.rare_wer, "argmin": False})
    best = min(range(len(rows)), key=lambda i: (rows[i]["wer"], rows[i]["rare_wer"], i))
    rows[best]["argmin"] = True
    baseline = None
    if ext_lm is not None:
        dcfg = replace(cfg.decode_config(FusionWeights(1.0, 0.0)), mode=BASELINE_SHALLOW_FUSION)
        res = evaluate(model, utts, corpus.vocab, dcfg, ext_lm=ext_lm, providers=providers)
        baseline = {"ext_lm_weight": cfg.ext_lm_weight, "ilm_subtract_weight": cfg.ilm_subtract_weight,
                    "wer": res.wer, "rare_wer": res.rare_wer}
    return SweepResult(rows, dict(rows[best]), baseline)
