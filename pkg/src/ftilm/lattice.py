"""Log-domain transducer alignment lattice.

A lattice over ``T`` frames and a target of ``U`` tokens has states ``(t, u)``
with ``t in [0, T)`` and ``u in [0, U]``.  From state ``(t, u)`` a path either
emits blank and moves to ``(t + 1, u)`` or emits target token ``u + 1`` and
moves to ``(t, u + 1)``.  Every complete path starts at ``(0, 0)`` and ends
with a blank emitted at ``(T - 1, U)``.

All scores are natural-log probabilities.  Gradients are taken with respect to
the per-cell log-probabilities, so the same lattice code serves any source of
scores (the factorized joiner chains them back to logits).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, InvalidMaskError, PathCountError

NEG_INF = -np.inf

# Entries produced by log-sigmoid / log-softmax may round a hair above zero.
_POSITIVE_SLACK = 1e-12


@dataclass(frozen=True)
class LogProbLattice:
    """Per-cell blank and target-label log-probabilities.

    Attributes:
      blank_lp: ``(T, U + 1)`` array, log-probability of blank at ``(t, u)``.
      label_lp: ``(T, U)`` array, log-probability of emitting target token
        ``u + 1`` at ``(t, u)``.
    """

    blank_lp: np.ndarray
    label_lp: np.ndarray

    def __post_init__(self):
        blank = np.asarray(self.blank_lp, dtype=np.float64)
        label = np.asarray(self.label_lp, dtype=np.float64)
        if blank.ndim != 2 or label.ndim != 2:
            raise InvalidInputError("blank_lp and label_lp must be 2-D arrays")
        T, U1 = blank.shape
        if T == 0:
            raise InvalidInputError("lattice must have at least one frame")
        if U1 == 0 or label.shape != (T, U1 - 1):
            raise InvalidInputError(
                f"label_lp shape {label.shape} does not match blank_lp shape {blank.shape}"
            )
        if np.isnan(blank).any() or np.isnan(label).any():
            raise InvalidInputError("lattice contains NaN")
        if (blank > _POSITIVE_SLACK).any() or (label > _POSITIVE_SLACK).any():
            raise InvalidInputError("log-probabilities must be <= 0")
        blank.setflags(write=False)
        label.setflags(write=False)
        object.__setattr__(self, "blank_lp", blank)
        object.__setattr__(self, "label_lp", label)

    @property
    def T(self) -> int:
        return self.blank_lp.shape[0]

    @property
    def U(self) -> int:
        return self.label_lp.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.T, self.U


class BandMask:
    """Boolean validity mask over the ``(T, U + 1)`` lattice states.

    A mask is rejected at construction unless at least one complete path from
    ``(0, 0)`` to ``(T - 1, U)`` stays entirely inside it.
    """

    def __init__(self, valid):
        valid = np.array(valid, dtype=bool)
        if valid.ndim != 2 or valid.shape[0] == 0 or valid.shape[1] == 0:
            raise InvalidInputError(f"mask must be a non-empty 2-D array, got {valid.shape}")
        valid.setflags(write=False)
        self.valid = valid
        if self.num_paths() == 0:
            raise InvalidMaskError("mask admits no path from (0, 0) to (T-1, U)")

    @classmethod
    def full(cls, T: int, U: int) -> "BandMask":
        return cls(np.ones((T, U + 1), dtype=bool))

    @property
    def T(self) -> int:
        return self.valid.shape[0]

    @property
    def U(self) -> int:
        return self.valid.shape[1] - 1

    def num_paths(self) -> int:
        return count_paths(self.T, self.U, self.valid)

    def num_cells(self) -> int:
        return int(self.valid.sum())

    def contains_alignment(self, frames: Sequence[int]) -> bool:
        """True if the path emitting token ``u + 1`` at ``frames[u]`` is inside the mask."""
        return all(self.valid[t, u] for t, u in alignment_states(frames, self.T))

    def __eq__(self, other):
        return isinstance(other, BandMask) and np.array_equal(self.valid, other.valid)

    def __repr__(self):
        return f"BandMask(T={self.T}, U={self.U}, cells={self.num_cells()})"


@dataclass(frozen=True)
class LatticeGradients:
    """Loss value and its gradients with respect to the lattice entries.

    ``no_path`` is set when the loss is infinite; the gradients are then zero.
    """

    loss: float
    blank: np.ndarray
    label: np.ndarray
    no_path: bool = False


def count_paths(T: int, U: int, valid: Optional[np.ndarray] = None) -> int:
    """Exact number of complete paths, optionally restricted to ``valid`` states."""
    ways = [[0] * (U + 1) for _ in range(T)]
    for t in range(T):
        for u in range(U + 1):
            if valid is not None and not valid[t, u]:
                continue
            if t == 0 and u == 0:
                ways[t][u] = 1
                continue
            n = 0
            if t > 0:
                n += ways[t - 1][u]
            if u > 0:
                n += ways[t][u - 1]
            ways[t][u] = n
    return ways[T - 1][U]


def alignment_states(frames: Sequence[int], T: int) -> Iterator[tuple[int, int]]:
    """Yield the states visited by the path whose token ``u + 1`` is emitted at ``frames[u]``."""
    t, u = 0, 0
    for frame in frames:
        while t < frame:
            yield t, u
            t += 1
        yield t, u
        u += 1
    while t < T:
        yield t, u
        t += 1


def _forward(blank: np.ndarray, label: np.ndarray, valid: Optional[np.ndarray]) -> np.ndarray:
    T, U1 = blank.shape
    U = U1 - 1
    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    if valid is not None and not valid[0, 0]:
        alpha[0, 0] = NEG_INF
    # Cells on one anti-diagonal depend only on the previous diagonal.
    for d in range(1, T + U):
        t = np.arange(max(0, d - U), min(T - 1, d) + 1)
        u = d - t
        a = np.full(t.shape, NEG_INF)
        m = t > 0
        a[m] = alpha[t[m] - 1, u[m]] + blank[t[m] - 1, u[m]]
        m = u > 0
        a[m] = np.logaddexp(a[m], alpha[t[m], u[m] - 1] + label[t[m], u[m] - 1])
        if valid is not None:
            a[~valid[t, u]] = NEG_INF
        alpha[t, u] = a
    return alpha


def _backward(blank: np.ndarray, label: np.ndarray, valid: Optional[np.ndarray]) -> np.ndarray:
    T, U1 = blank.shape
    U = U1 - 1
    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    if valid is not None and not valid[T - 1, U]:
        beta[T - 1, U] = NEG_INF
    for d in range(T + U - 2, -1, -1):
        t = np.arange(max(0, d - U), min(T - 1, d) + 1)
        u = d - t
        b = np.full(t.shape, NEG_INF)
        m = t < T - 1
        b[m] = blank[t[m], u[m]] + beta[t[m] + 1, u[m]]
        m = u < U
        b[m] = np.logaddexp(b[m], label[t[m], u[m]] + beta[t[m], u[m] + 1])
        if valid is not None:
            b[~valid[t, u]] = NEG_INF
        beta[t, u] = b
    return beta


def forward_variables(lattice: LogProbLattice, mask: Optional[BandMask] = None) -> np.ndarray:
    """Log forward variables: total log-probability of reaching each state."""
    return _forward(lattice.blank_lp, lattice.label_lp, _mask_array(lattice, mask))


def backward_variables(lattice: LogProbLattice, mask: Optional[BandMask] = None) -> np.ndarray:
    """Log backward variables: log-probability of completing from each state, own emission included."""
    return _backward(lattice.blank_lp, lattice.label_lp, _mask_array(lattice, mask))


def _mask_array(lattice: LogProbLattice, mask: Optional[BandMask]) -> Optional[np.ndarray]:
    if mask is None:
        return None
    if mask.valid.shape != lattice.blank_lp.shape:
        raise InvalidInputError(
            f"mask shape {mask.valid.shape} does not match lattice states {lattice.blank_lp.shape}"
        )
    return mask.valid


def _total_logprob(lattice: LogProbLattice, valid: Optional[np.ndarray]) -> float:
    alpha = _forward(lattice.blank_lp, lattice.label_lp, valid)
    return float(alpha[-1, -1] + lattice.blank_lp[-1, -1])


def full_sum_loss(lattice: LogProbLattice) -> float:
    """Negative log of the total probability over all alignments, in nats.

    Returns ``inf`` when no path carries probability mass.
    """
    return -_total_logprob(lattice, None)


def restricted_full_sum_loss(lattice: LogProbLattice, mask: BandMask) -> float:
    """Full-sum loss over only the paths that stay inside ``mask``."""
    return -_total_logprob(lattice, _mask_array(lattice, mask))


def _gradients(lattice: LogProbLattice, valid: Optional[np.ndarray]) -> LatticeGradients:
    blank, label = lattice.blank_lp, lattice.label_lp
    T, U = lattice.shape
    alpha = _forward(blank, label, valid)
    logp = alpha[-1, -1] + blank[-1, -1]
    if not np.isfinite(logp):
        return LatticeGradients(
            loss=math.inf,
            blank=np.zeros_like(blank),
            label=np.zeros_like(label),
            no_path=True,
        )
    beta = _backward(blank, label, valid)
    # Continuation after a blank at (t, u): beta at (t + 1, u), or the empty
    # continuation once the terminal blank at (T - 1, U) is consumed.
    after_blank = np.full((T, U + 1), NEG_INF)
    after_blank[:-1] = beta[1:]
    after_blank[-1, -1] = 0.0
    grad_blank = -np.exp(alpha + blank + after_blank - logp)
    grad_label = -np.exp(alpha[:, :-1] + label + beta[:, 1:] - logp)
    return LatticeGradients(loss=float(-logp), blank=grad_blank, label=grad_label)


def loss_gradients(lattice: LogProbLattice) -> LatticeGradients:
    """Full-sum loss and its gradient w.r.t. every blank and label log-probability.

    The gradient on an entry is minus the posterior occupancy of that arc.
    """
    return _gradients(lattice, None)


def restricted_loss_gradients(lattice: LogProbLattice, mask: BandMask) -> LatticeGradients:
    """Banded counterpart of :func:`loss_gradients`; arcs leaving the mask get zero gradient."""
    return _gradients(lattice, _mask_array(lattice, mask))


def iter_alignments(T: int, U: int) -> Iterator[tuple[int, ...]]:
    """Yield every alignment as the non-decreasing tuple of label emission frames."""

    def rec(prefix, lo):
        if len(prefix) == U:
            yield tuple(prefix)
            return
        for t in range(lo, T):
            prefix.append(t)
            yield from rec(prefix, t)
            prefix.pop()

    yield from rec([], 0)


def alignment_logprob(lattice: LogProbLattice, frames: Sequence[int]) -> float:
    """Log-probability of the single path given by its label emission frames."""
    total = 0.0
    T = lattice.T
    t, u = 0, 0
    for frame in frames:
        while t < frame:
            total += lattice.blank_lp[t, u]
            t += 1
        total += lattice.label_lp[t, u]
        u += 1
    while t < T:
        total += lattice.blank_lp[t, u]
        t += 1
    return float(total)


def brute_force_loss(
    lattice: LogProbLattice,
    mask: Optional[BandMask] = None,
    max_paths: int = 10**6,
) -> float:
    """Full-sum loss by explicit enumeration of every alignment.

    Testing oracle for :func:`full_sum_loss`.  With ``mask`` only alignments
    whose states all lie inside the mask are summed.
    """
    T, U = lattice.shape
    n = math.comb(T - 1 + U, U)
    if n > max_paths:
        raise PathCountError(f"{n} paths exceeds the enumeration guard of {max_paths}")
    scores = []
    for frames in iter_alignments(T, U):
        if mask is not None and not mask.contains_alignment(frames):
            continue
        scores.append(alignment_logprob(lattice, frames))
    if not scores:
        return math.inf
    return -float(np.logaddexp.reduce(scores))
