"""Oracle and gradient checks, runnable from the CLI.

Each check returns a :class:`CheckResult` holding the worst observed
deviation and the tolerance it was held to.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit

from ..decode import ArrayScoreProvider, DecodeConfig, beam_search
from ..factorization import FusionWeights, TRAINING_WEIGHTS, nonblank_scores, nonblank_train_logprobs
from ..ilm import FrozenLM, ToyNeuralLM
from ..lattice import (
    BandMask,
    LogProbLattice,
    alignment_logprob,
    brute_force_loss,
    full_sum_loss,
    loss_gradients,
    restricted_full_sum_loss,
)
from ..mwer import BandConfig, NBestItem, band_from_alignment, mwer_gradients, mwer_loss
from ..oracles import central_difference, exhaustive_search, reference_label_score, relative_error
from .model import ToyFTModel

BEAM_ORACLE_WEIGHTS = (FusionWeights(1.0, 0.0), FusionWeights(0.6, 0.6), FusionWeights(1.0, 0.2))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.value:.3g} vs tol {self.tolerance:.3g}{extra}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "tolerance": self.tolerance, "detail": self.detail}


def _result(name, value, tol, detail=""):
    return CheckResult(name, bool(value <= tol), float(value), float(tol), detail)


def random_lattice(rng, T, U, low=0.05, high=0.95) -> LogProbLattice:
    return LogProbLattice(np.log(rng.uniform(low, high, (T, U + 1))), np.log(rng.uniform(low, high, (T, U))))


def check_lattice_oracle(n=200, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        lat = random_lattice(rng, int(rng.integers(1, 6)), int(rng.integers(0, 5)))
        worst = max(worst, abs(full_sum_loss(lat) - brute_force_loss(lat)))
    return _result("lattice oracle", worst, 1e-10, f"{n} lattices, T<=5, U<=4")


def check_normalization(n=1000, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        V = int(rng.integers(2, 20))
        am, ilm, b = 3 * rng.standard_normal(V), 3 * rng.standard_normal(V), 4 * rng.standard_normal()
        total = np.exp(log_expit(b)) + np.exp(nonblank_train_logprobs(am, ilm, b)).sum()
        worst = max(worst, abs(total - 1.0))
    return _result("blank/non-blank normalization", worst, 1e-12, f"{n} cells")


def check_reduction_identity(n=1000, seed=0) -> CheckResult:
    """Decode scores at (alpha=1, beta=0) must equal the training scores bit for bit;
    the scalar re-derivation is held to 1e-12."""
    rng = np.random.default_rng(seed)
    mismatches, worst_ref = 0, 0.0
    cfg = DecodeConfig(weights=TRAINING_WEIGHTS)
    for _ in range(n):
        V = int(rng.integers(2, 12))
        am, ilm, b = 3 * rng.standard_normal(V), 3 * rng.standard_normal(V), 4 * rng.standard_normal()
        train = nonblank_train_logprobs(am, ilm, b)
        decode = nonblank_scores(am, ilm, b, FusionWeights(1.0, 0.0))
        mismatches += int(np.count_nonzero(train != decode))
        ref = np.array([reference_label_score(am, ilm, b, k, cfg) for k in range(V)])
        worst_ref = max(worst_ref, float(np.max(np.abs(ref - train))))
    ok = mismatches == 0 and worst_ref <= 1e-12
    return CheckResult("reduction identity", ok, float(mismatches), 0.0,
                       f"{n} cells, all tokens; scalar reference max dev {worst_ref:.2e}")


def check_band(seed=0, n=50) -> CheckResult:
    rng = np.random.default_rng(seed)
    problems = []
    worst = 0.0
    for _ in range(n):
        T, U = int(rng.integers(1, 9)), int(rng.integers(0, 4))
        lat = random_lattice(rng, T, U)
        a = tuple(sorted(int(x) for x in rng.integers(0, T, size=U)))
        full = band_from_alignment(a, BandConfig(T, T), T, U)
        if full != BandMask.full(T, U) or restricted_full_sum_loss(lat, full) != full_sum_loss(lat):
            problems.append("full band differs from dense")
        losses = [restricted_full_sum_loss(lat, band_from_alignment(a, BandConfig(c, c), T, U)) for c in range(T + 1)]
        if any(x < y - 1e-12 for x, y in zip(losses, losses[1:])):
            problems.append("loss decreased when narrowing")
        single = -alignment_logprob(lat, a)
        worst = max(worst, abs(losses[0] - single))
        c = int(rng.integers(0, 3))
        mask = band_from_alignment(a, BandConfig(c, c), T, U)
        worst = max(worst, abs(restricted_full_sum_loss(lat, mask) - brute_force_loss(lat, mask)))
    ok = not problems and worst <= 1e-10
    return CheckResult("band correctness", ok, worst, 1e-10, "; ".join(sorted(set(problems))) or f"{n} lattices, T<=8, U<=3")


def tiny_instance(seed, T, V, scale=1.5):
    rng = np.random.default_rng(seed)
    provider = ArrayScoreProvider(scale * rng.standard_normal((T, V)), scale * rng.standard_normal((T, V)))
    lm = FrozenLM(ToyNeuralLM(V, order=2, embed_dim=3, hidden_dim=4, rng=rng, init_scale=1.5))
    return provider, lm


def check_beam_oracle(seeds=2, length_norm=False) -> CheckResult:
    failures, count = 0, 0
    for w in BEAM_ORACLE_WEIGHTS:
        for T, V, seed in itertools.product(range(1, 5), range(1, 4), range(seeds)):
            provider, lm = tiny_instance(1000 * seed + 10 * T + V, T, V)
            cfg = DecodeConfig(beam_size=13, weights=w, length_norm=length_norm, max_output_length=2)
            got = beam_search(provider, lm, cfg)[0]
            want = exhaustive_search(provider, lm, cfg, 2)[0]
            count += 1
            if got.tokens != want.tokens or abs(got.score - want.score) > 1e-9:
                failures += 1
    return CheckResult("beam search oracle", failures == 0, float(failures), 0.0,
                       f"{count} instances, T<=4, U<=2, V<=3, 3 weight pairs, length_norm={length_norm}")


def check_mwer_properties(n=1000, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    bound_viol, shift_dev = 0, 0.0
    for _ in range(n):
        k = int(rng.integers(1, 9))
        s, ilm, r = 5 * rng.standard_normal(k), 5 * rng.standard_normal(k), rng.integers(0, 8, size=k)
        beta, shift = float(rng.uniform(0, 1.5)), float(rng.uniform(-100, 100))
        items = [NBestItem((i,), s[i], ilm[i], int(r[i])) for i in range(k)]
        loss = mwer_loss(items, beta)
        if not r.min() - 1e-12 <= loss <= r.max() + 1e-12:
            bound_viol += 1
        shifted = [NBestItem(it.tokens, it.full_sum_logprob + shift, it.ilm_logprob_sum, it.word_errors) for it in items]
        shift_dev = max(shift_dev, abs(mwer_loss(shifted, beta) - loss))
    ok = bound_viol == 0 and shift_dev <= 1e-9
    return CheckResult("MWER bounds and shift invariance", ok, shift_dev, 1e-9,
                       f"{n} lists, {bound_viol} bound violations")


# gradient checks

def gradcheck_lattice(seed=0, n=5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        lat = random_lattice(rng, int(rng.integers(2, 6)), int(rng.integers(1, 4)))
        g = loss_gradients(lat)
        fb = central_difference(lambda x: full_sum_loss(LogProbLattice(x, lat.label_lp)), lat.blank_lp)
        fl = central_difference(lambda x: full_sum_loss(LogProbLattice(lat.blank_lp, x)), lat.label_lp)
        worst = max(worst, relative_error(g.blank, fb, 1e-6), relative_error(g.label, fl, 1e-6))
    return worst


def gradcheck_ilm(seed=0) -> float:
    rng = np.random.default_rng(seed)
    lm = ToyNeuralLM(6, order=2, embed_dim=3, hidden_dim=5, rng=rng, init_scale=0.5)
    corpus = [list(rng.integers(1, 6, size=int(rng.integers(1, 6)))) + [0] for _ in range(6)]
    ctx, tgt = lm.examples(corpus)
    _, grads = lm.loss_and_grads(ctx, tgt)
    analytic = np.concatenate([np.ravel(grads[k]) for k in lm.param_names])

    def f(flat):
        probe = lm.copy()
        probe.set_flat(flat)
        return probe.loss_and_grads(ctx, tgt)[0]

    return relative_error(analytic, central_difference(f, lm.get_flat()), 1e-6)


def tiny_model(seed=0, V=5, F=3) -> ToyFTModel:
    rng = np.random.default_rng(seed)
    ilm = FrozenLM(ToyNeuralLM(V, order=2, embed_dim=3, hidden_dim=4, rng=rng, init_scale=0.5))
    return ToyFTModel(ilm, F, window=1, hidden_dim=4, blank_embed_dim=3, rng=rng, init_scale=0.5)


def _flat_grads(model, grads):
    return np.concatenate([np.ravel(grads[k]) for k in model.param_names])


def gradcheck_ft(seed=0, weights=TRAINING_WEIGHTS, banded=False) -> float:
    """End-to-end check of the transducer loss through encoder and blank predictor."""
    model = tiny_model(seed)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((6, model.feature_dim))
    tokens = [1, 3, 2]
    mask = band_from_alignment((1, 2, 4), BandConfig(1, 1), 6, 3) if banded else None
    _, grads = model.sequence_loss_grads(model.forward(x), tokens, mask=mask, weights=weights)

    def f(flat):
        probe = model.copy()
        probe.set_flat(flat)
        return probe.sequence_loss_grads(probe.forward(x), tokens, mask=mask, weights=weights)[0]

    return relative_error(_flat_grads(model, grads), central_difference(f, model.get_flat()), 1e-6)


def gradcheck_mwer(seed=0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        k = int(rng.integers(2, 7))
        s, ilm, r = rng.standard_normal(k), rng.standard_normal(k), rng.integers(0, 5, size=k)
        beta = float(rng.uniform(0, 1))
        g = mwer_gradients([NBestItem((i,), s[i], ilm[i], int(r[i])) for i in range(k)], beta)
        fd = central_difference(lambda x: mwer_loss([NBestItem((i,), x[i], ilm[i], int(r[i])) for i in range(k)], beta), s)
        worst = max(worst, relative_error(g, fd, 1e-6))
    return worst


def gradcheck_mwer_model(seed=0) -> float:
    """Chain rule from the MWER loss through banded hypothesis scores to model parameters."""
    from .config import RunConfig
    from .data import Utterance, Vocab
    from .train import mwer_utterance

    model = tiny_model(seed)
    rng = np.random.default_rng(seed + 2)
    vocab = Vocab(("</s>", "a", "b", "c", "d"))
    utt = Utterance("u", rng.standard_normal((6, model.feature_dim)), ["a", "c", "b"], [1, 2, 4])
    cfg = RunConfig(left_context=1, right_context=1, beam_size=4)
    w = FusionWeights(0.6, 0.6)
    m, rnnt, grads = mwer_utterance(model, utt, vocab, cfg, w)

    def f(flat):
        probe = model.copy()
        probe.set_flat(flat)
        m2, r2, _ = mwer_utterance(probe, utt, vocab, cfg, w)
        return m2 + cfg.lambda_rnnt * r2

    return relative_error(_flat_grads(model, grads), central_difference(f, model.get_flat()), 1e-6)


def gradient_checks(seed=0) -> list[CheckResult]:
    return [
        _result("lattice gradients", gradcheck_lattice(seed), 1e-4),
        _result("ILM gradients", gradcheck_ilm(seed), 1e-4),
        _result("end-to-end transducer gradients", gradcheck_ft(seed), 1e-4),
        _result("end-to-end banded transducer gradients", gradcheck_ft(seed, FusionWeights(0.6, 0.0), banded=True), 1e-4),
        _result("MWER score gradients", gradcheck_mwer(seed), 1e-6),
        _result("end-to-end MWER gradients", gradcheck_mwer_model(seed), 1e-4),
    ]


def oracle_checks(seed=0) -> list[CheckResult]:
    return [
        check_lattice_oracle(seed=seed),
        check_normalization(seed=seed),
        check_reduction_identity(seed=seed),
        check_band(seed=seed),
        check_beam_oracle(length_norm=False),
        check_beam_oracle(length_norm=True),
        check_mwer_properties(seed=seed),
    ]
