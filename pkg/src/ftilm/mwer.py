"""Expected word-error training over N-best lists, and alignment bands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.special import softmax

from .errors import DegenerateInputError, InvalidInputError
from .lattice import BandMask

# Default tolerance around a decoded alignment, in frames.
DEFAULT_CONTEXT = 15
DEFAULT_LAMBDA_RNNT = 0.1


@dataclass(frozen=True)
class BandConfig:
    left_context: int = DEFAULT_CONTEXT
    right_context: int = DEFAULT_CONTEXT

    def __post_init__(self):
        if self.left_context < 0 or self.right_context < 0:
            raise InvalidInputError("band contexts must be non-negative")


@dataclass(frozen=True)
class NBestItem:
    tokens: tuple
    full_sum_logprob: float
    ilm_logprob_sum: float
    word_errors: int


def word_edit_distance(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def edit_alignment(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> list[tuple[str, int | None, int | None]]:
    """Minimum-cost edit script as ``(op, hyp_index, ref_index)`` tuples.

    ``op`` is one of ``"match"``, ``"sub"``, ``"del"`` (reference word missing
    from the hypothesis) or ``"ins"``.  Backtrace ties prefer the diagonal,
    then deletion, then insertion.
    """
    n, m = len(hyp), len(ref)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]))
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (hyp[i - 1] != ref[j - 1]):
            ops.append(("match" if hyp[i - 1] == ref[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif j > 0 and d[i, j] == d[i, j - 1] + 1:
            ops.append(("del", None, j - 1))
            j -= 1
        else:
            ops.append(("ins", i - 1, None))
            i -= 1
    ops.reverse()
    return ops


def _fused_scores(nbest: Sequence[NBestItem], beta: float) -> np.ndarray:
    if len(nbest) == 0:
        raise InvalidInputError("N-best list is empty")
    scores = np.array([it.full_sum_logprob + beta * it.ilm_logprob_sum for it in nbest], dtype=np.float64)
    if np.isnan(scores).any() or not np.isfinite(scores).any():
        raise DegenerateInputError("every hypothesis has -inf score")
    return scores


def hypothesis_posteriors(nbest: Sequence[NBestItem], beta: float) -> np.ndarray:
    """Renormalized hypothesis probabilities over the N-best list."""
    return softmax(_fused_scores(nbest, beta))


def mwer_loss(nbest: Sequence[NBestItem], beta: float) -> float:
    """Expected number of word errors under the renormalized N-best posterior.

    Scores are not length-normalized.
    """
    post = hypothesis_posteriors(nbest, beta)
    errors = np.array([it.word_errors for it in nbest], dtype=np.float64)
    return float(post @ errors)


def mwer_gradients(nbest: Sequence[NBestItem], beta: float) -> np.ndarray:
    """Gradient of :func:`mwer_loss` w.r.t. each ``full_sum_logprob``."""
    post = hypothesis_posteriors(nbest, beta)
    errors = np.array([it.word_errors for it in nbest], dtype=np.float64)
    return post * (errors - post @ errors)


def combined_loss(mwer: float, rnnt: float, lambda_rnnt: float = DEFAULT_LAMBDA_RNNT) -> float:
    if lambda_rnnt < 0:
        raise InvalidInputError("lambda_rnnt must be non-negative")
    return mwer + lambda_rnnt * rnnt


def band_from_alignment(alignment: Sequence[int], C: BandConfig, T: int, U: int) -> BandMask:
    """Lattice states reachable when every token ``u`` is emitted within
    ``[a_u - left_context, a_u + right_context]``.

    Row ``u`` (``u`` tokens emitted) spans frames from the earliest emission
    of token ``u`` to the latest emission of token ``u + 1``; the first row
    starts at frame 0 and the last row ends at frame ``T - 1``.  Cells that
    cannot lie on a complete path are pruned.
    """
    a = [int(x) for x in alignment]
    if len(a) != U:
        raise InvalidInputError(f"alignment has {len(a)} frames, expected {U}")
    if any(x < 0 or x >= T for x in a) or any(x > y for x, y in zip(a, a[1:])):
        raise InvalidInputError("alignment must be non-decreasing frames in [0, T)")
    valid = np.zeros((T, U + 1), dtype=bool)
    for u in range(U + 1):
        lo = 0 if u == 0 else max(0, a[u - 1] - C.left_context)
        hi = T - 1 if u == U else min(T - 1, a[u] + C.right_context)
        valid[lo:hi + 1, u] = True
    return BandMask(_prune_unreachable(valid))


def _prune_unreachable(valid: np.ndarray) -> np.ndarray:
    T, U1 = valid.shape
    fwd = np.zeros_like(valid)
    for t in range(T):
        for u in range(U1):
            if valid[t, u]:
                fwd[t, u] = (t == 0 and u == 0) or (t > 0 and fwd[t - 1, u]) or (u > 0 and fwd[t, u - 1])
    bwd = np.zeros_like(valid)
    for t in range(T - 1, -1, -1):
        for u in range(U1 - 1, -1, -1):
            if valid[t, u]:
                bwd[t, u] = (
                    (t == T - 1 and u == U1 - 1)
                    or (t < T - 1 and bwd[t + 1, u])
                    or (u < U1 - 1 and bwd[t, u + 1])
                )
    return fwd & bwd
