"""Frame-synchronous transducer beam search with two-weight ILM fusion.

Non-blank tokens are scored as

    log(1 - P_b) + log_softmax(log P_am + alpha * log P_ilm) + beta * log P_ilm

and blank as ``log P_b``.  Hypotheses that reach the same token sequence are
merged by log-add-exp, while the single best path (and its emission frames)
is carried alongside for alignment-restricted training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np
from scipy.special import log_expit

from .errors import InvalidInputError
from .factorization import DEFAULT_DECODE_WEIGHTS, TRAINING_WEIGHTS, FusionWeights, nonblank_scores
from .ilm import LMInterface

FACTORIZED = "factorized"
BASELINE_SHALLOW_FUSION = "baseline_shallow_fusion"


class ScoreProvider(Protocol):
    """Per-frame access to the factorized network outputs for one utterance."""

    num_frames: int

    def am_logits(self, t: int) -> np.ndarray: ...

    def blank_logit(self, t: int, tokens: tuple) -> float: ...


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 5
    weights: FusionWeights = DEFAULT_DECODE_WEIGHTS
    length_norm: bool = True
    max_symbols_per_frame: int = 5
    mode: str = FACTORIZED
    # Baseline mode: external LM weight and (negative) ILM subtraction weight.
    ext_lm_weight: float = 0.6
    ilm_subtract_weight: float = -0.2
    max_output_length: Optional[int] = None
    forbidden_tokens: tuple = ()

    def __post_init__(self):
        if self.beam_size < 1:
            raise InvalidInputError("beam_size must be >= 1")
        if self.max_symbols_per_frame < 1:
            raise InvalidInputError("max_symbols_per_frame must be >= 1")
        if self.mode not in (FACTORIZED, BASELINE_SHALLOW_FUSION):
            raise InvalidInputError(f"unknown decode mode {self.mode!r}")

    @property
    def alpha(self) -> float:
        return self.weights.alpha

    @property
    def beta(self) -> float:
        return self.weights.beta


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple = ()
    score: float = 0.0
    viterbi_score: float = 0.0
    viterbi_alignment: tuple = ()
    lm_state: tuple = ()
    ilm_logprob_sum: float = 0.0

    def final_score(self, length_norm: bool) -> float:
        return length_normalize(self.score, len(self.tokens)) if length_norm else self.score

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "score": self.score,
            "viterbi_score": self.viterbi_score,
            "viterbi_alignment": list(self.viterbi_alignment),
            "ilm_logprob_sum": self.ilm_logprob_sum,
        }


def length_normalize(score: float, token_count: int) -> float:
    return score / max(1, token_count)


def shallow_fusion_score(base_score, ext_lm_lp, ilm_lp, lambda_ext: float, lambda_ilm: float):
    """Add a weighted external LM score and a weighted (usually negative) ILM score."""
    return base_score + lambda_ext * ext_lm_lp + lambda_ilm * ilm_lp


def _rank_key(h: Hypothesis, length_norm: bool = False):
    return (-h.final_score(length_norm), -h.viterbi_score, h.tokens)


def _merge(pool: dict, hyp: Hypothesis) -> None:
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
        return
    best = hyp if hyp.viterbi_score > old.viterbi_score else old
    pool[hyp.tokens] = replace(
        best,
        score=float(np.logaddexp(old.score, hyp.score)),
    )


def _prune(pool: dict, beam: int) -> list:
    return sorted(pool.values(), key=_rank_key)[:beam]


def token_scores(
    provider: ScoreProvider,
    ilm: LMInterface,
    cfg: DecodeConfig,
    hyp: Hypothesis,
    t: int,
    ext_lm: Optional[LMInterface] = None,
):
    """Return ``(blank_score, label_scores, ilm_logprobs)`` for extending ``hyp`` at frame ``t``."""
    b = provider.blank_logit(t, hyp.tokens)
    ilm_lp = ilm.logprobs(hyp.lm_state[0])
    am = provider.am_logits(t)
    if cfg.mode == FACTORIZED:
        labels = nonblank_scores(am, ilm_lp, b, cfg.weights)
    else:
        base = nonblank_scores(am, ilm_lp, b, TRAINING_WEIGHTS)
        labels = shallow_fusion_score(
            base, ext_lm.logprobs(hyp.lm_state[1]), ilm_lp, cfg.ext_lm_weight, cfg.ilm_subtract_weight
        )
    return float(log_expit(b)), labels, ilm_lp


def beam_search(
    provider: ScoreProvider,
    ilm: LMInterface,
    cfg: DecodeConfig = DecodeConfig(),
    ext_lm: Optional[LMInterface] = None,
) -> list[Hypothesis]:
    """Decode one utterance; returns up to ``beam_size`` hypotheses, best first.

    Within a frame each hypothesis may emit up to ``max_symbols_per_frame``
    labels before the frame-closing blank.  Pruning during the search uses
    raw scores; length normalization (if enabled) applies to the final ranking.
    """
    T = provider.num_frames
    if T < 1:
        raise InvalidInputError("cannot decode zero frames")
    if cfg.mode == BASELINE_SHALLOW_FUSION and ext_lm is None:
        raise InvalidInputError("baseline shallow fusion needs an external LM")
    ext_start = ext_lm.start_state if ext_lm is not None else None
    beam = [Hypothesis(lm_state=(ilm.start_state, ext_start))]
    forbidden = np.array(sorted(cfg.forbidden_tokens), dtype=np.int64)
    max_len = math.inf if cfg.max_output_length is None else cfg.max_output_length
    # Label scores depend on the hypothesis only through its LM states and blank logit.
    memo: dict = {}

    def scores_for(h, t):
        key = (t, h.lm_state, provider.blank_logit(t, h.tokens))
        out = memo.get(key)
        if out is None:
            out = memo[key] = token_scores(provider, ilm, cfg, h, t, ext_lm)
        return out

    for t in range(T):
        closed: dict = {}
        active = beam
        for s in range(cfg.max_symbols_per_frame + 1):
            emitted: dict = {}
            for h in active:
                blank, labels, ilm_lp = scores_for(h, t)
                _merge(closed, replace(h, score=h.score + blank, viterbi_score=h.viterbi_score + blank))
                if s == cfg.max_symbols_per_frame or len(h.tokens) >= max_len:
                    continue
                if len(forbidden):
                    labels = labels.copy()
                    labels[forbidden] = -np.inf
                k = min(cfg.beam_size, int(np.isfinite(labels).sum()))
                # Stable order so equal scores resolve to the lower token id.
                for tok in np.argsort(-labels, kind="stable")[:k]:
                    tok = int(tok)
                    lp = float(labels[tok])
                    ilm_state, ext_state = h.lm_state
                    new_state = (
                        ilm.advance(ilm_state, tok),
                        ext_lm.advance(ext_state, tok) if ext_lm is not None else None,
                    )
                    _merge(
                        emitted,
                        Hypothesis(
                            tokens=h.tokens + (tok,),
                            score=h.score + lp,
                            viterbi_score=h.viterbi_score + lp,
                            viterbi_alignment=h.viterbi_alignment + (t,),
                            lm_state=new_state,
                            ilm_logprob_sum=h.ilm_logprob_sum + float(ilm_lp[tok]),
                        ),
                    )
            active = _prune(emitted, cfg.beam_size)
            if not active:
                break
        beam = _prune(closed, cfg.beam_size)

    return sorted(beam, key=lambda h: _rank_key(h, cfg.length_norm))[: cfg.beam_size]


def nbest_record(utt_id: str, hyps: Sequence[Hypothesis]) -> dict:
    """Machine-readable N-best entry for one utterance."""
    return {"utt_id": utt_id, "nbest": [h.to_record() for h in hyps]}


@dataclass
class ArrayScoreProvider:
    """Score provider backed by dense arrays.

    ``blank_table[t, c]`` is the blank logit at frame ``t`` when the last
    emitted token is ``c`` (``c = start_token`` before any emission), which
    is the stateless blank predictor used by the factorized model.
    """

    am: np.ndarray
    blank_table: np.ndarray
    start_token: int = 0
    num_frames: int = field(init=False)

    def __post_init__(self):
        self.am = np.asarray(self.am, dtype=np.float64)
        self.blank_table = np.asarray(self.blank_table, dtype=np.float64)
        self.num_frames = self.am.shape[0]

    def am_logits(self, t):
        return self.am[t]

    def blank_logit(self, t, tokens):
        return float(self.blank_table[t, tokens[-1] if tokens else self.start_token])

    def blank_logits_for(self, tokens: Sequence[int]) -> np.ndarray:
        """``(T, U + 1)`` blank logits along the label history ``tokens``."""
        last = [self.start_token] + list(tokens)
        return self.blank_table[:, last]
