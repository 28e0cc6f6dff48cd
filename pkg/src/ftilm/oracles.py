"""Independent reference computations used to check the fast paths.

Nothing here shares code with the implementations it checks: decode scores
are recomputed with scalar ``math`` and every alignment is enumerated.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Optional

import numpy as np

from .decode import BASELINE_SHALLOW_FUSION, DecodeConfig, Hypothesis
from .ilm import LMInterface


def _logsumexp(xs) -> float:
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def _log_softmax(xs) -> list:
    z = _logsumexp(xs)
    return [x - z for x in xs]


def _log_sigmoid(x: float) -> float:
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def reference_label_score(am, ilm_lp, blank_logit, token, cfg: DecodeConfig, ext_lp=None) -> float:
    """Scalar re-derivation of the fused non-blank score of ``token``."""
    log_am = _log_softmax(list(am))
    log_ilm = _log_softmax(list(ilm_lp))
    alpha = 1.0 if cfg.mode == BASELINE_SHALLOW_FUSION else cfg.alpha
    inner = _log_softmax([a + alpha * i for a, i in zip(log_am, log_ilm)])
    score = _log_sigmoid(-blank_logit) + inner[token]
    if cfg.mode == BASELINE_SHALLOW_FUSION:
        return score + cfg.ext_lm_weight * ext_lp[token] + cfg.ilm_subtract_weight * log_ilm[token]
    return score + cfg.beta * log_ilm[token]


def _frame_counts(n_tokens: int, T: int, cap: int):
    for counts in itertools.product(range(min(cap, n_tokens) + 1), repeat=T):
        if sum(counts) == n_tokens:
            yield counts


def exhaustive_search(
    provider,
    ilm: LMInterface,
    cfg: DecodeConfig,
    max_len: int,
    ext_lm: Optional[LMInterface] = None,
) -> list[Hypothesis]:
    """Score every label sequence up to ``max_len`` by summing over all its alignments.

    Returns every sequence with non-zero mass, ranked with the same rule as
    the beam search.
    """
    T = provider.num_frames
    V = len(provider.am_logits(0))
    allowed = [k for k in range(V) if k not in set(cfg.forbidden_tokens)]
    out = []
    for n in range(max_len + 1):
        for seq in itertools.product(allowed, repeat=n):
            ilm_rows, ext_rows = [], []
            state = ilm.start_state
            ext_state = ext_lm.start_state if ext_lm is not None else None
            for u in range(n + 1):
                ilm_rows.append(list(ilm.logprobs(state)))
                ext_rows.append(list(ext_lm.logprobs(ext_state)) if ext_lm is not None else None)
                if u < n:
                    state = ilm.advance(state, seq[u])
                    if ext_lm is not None:
                        ext_state = ext_lm.advance(ext_state, seq[u])
            path_scores, path_frames = [], []
            for counts in _frame_counts(n, T, cfg.max_symbols_per_frame):
                total, u, frames = 0.0, 0, []
                for t, c in enumerate(counts):
                    am = provider.am_logits(t)
                    for _ in range(c):
                        b = provider.blank_logit(t, tuple(seq[:u]))
                        total += reference_label_score(am, ilm_rows[u], b, seq[u], cfg, ext_rows[u])
                        frames.append(t)
                        u += 1
                    total += _log_sigmoid(provider.blank_logit(t, tuple(seq[:u])))
                path_scores.append(total)
                path_frames.append(tuple(frames))
            if not path_scores:
                continue
            best = int(np.argmax(path_scores))
            ilm_sum = sum(ilm_rows[u][seq[u]] for u in range(n))
            out.append(
                Hypothesis(
                    tokens=tuple(seq),
                    score=_logsumexp(path_scores),
                    viterbi_score=path_scores[best],
                    viterbi_alignment=path_frames[best],
                    ilm_logprob_sum=ilm_sum,
                )
            )
    out.sort(key=lambda h: (-h.final_score(cfg.length_norm), -h.viterbi_score, h.tokens))
    return out


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
