"""Acceptance suite: one test and one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the criterion lines are
repeated in the terminal summary.
"""

import time

import pytest

from ftilm.harness.checks import (
    check_band,
    check_beam_oracle,
    check_lattice_oracle,
    check_mwer_properties,
    check_normalization,
    check_reduction_identity,
    gradient_checks,
)
from ftilm.harness.config import RunConfig
from ftilm.harness.pipeline import RARE_GAIN_TARGET, run_pipeline

from conftest import ACCEPTANCE_LINES


def report(number, title, passed, detail, seconds):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number} ({title}): {detail} [{seconds:.1f} s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t


def test_criterion_01_lattice_oracle():
    res, secs = timed(check_lattice_oracle, n=200)
    ok = res.passed and secs < 10
    assert report(1, "lattice oracle equivalence", ok, f"max |dense - brute force| = {res.value:.2e} nats over 200 lattices", secs)


def test_criterion_02_gradients():
    results, secs = timed(gradient_checks)
    ok = all(r.passed for r in results) and secs < 60
    detail = "; ".join(f"{r.name} {r.value:.1e} (tol {r.tolerance:.0e})" for r in results)
    assert report(2, "gradient suite", ok, detail, secs)


def test_criterion_03_normalization():
    res, secs = timed(check_normalization, n=1000)
    assert report(3, "blank/non-blank normalization", res.passed, f"max |sum - 1| = {res.value:.2e} on 1000 cells", secs)


def test_criterion_04_reduction_identity():
    res, secs = timed(check_reduction_identity, n=1000)
    assert report(4, "reduction identity", res.passed, f"{int(res.value)} mismatching scores; {res.detail}", secs)


def test_criterion_05_band():
    res, secs = timed(check_band, n=100)
    assert report(5, "band correctness", res.passed, f"max deviation {res.value:.2e}; {res.detail}", secs)


def test_criterion_06_beam_oracle():
    t = time.perf_counter()
    results = [check_beam_oracle(seeds=3, length_norm=ln) for ln in (False, True)]
    secs = time.perf_counter() - t
    ok = all(r.passed for r in results)
    detail = "; ".join(f"{int(r.value)} mismatches ({r.detail})" for r in results)
    assert report(6, "beam search oracle", ok, detail, secs)


@pytest.fixture(scope="module")
def default_run():
    return timed(run_pipeline, RunConfig())


def test_criterion_07_sweep_mirror(default_run):
    rep, secs = default_run
    std, best = rep["sweep"]["standard"], rep["sweep"]["argmin"]
    gain = rep["sweep"]["rare_wer_relative_gain"]
    ok = best["wer"] < std["wer"] and gain >= RARE_GAIN_TARGET and secs < 600
    detail = (f"WER {best['wer']:.4f} at (alpha={best['alpha']}, beta={best['beta']}) vs {std['wer']:.4f} at (1, 0); "
              f"rare-word WER {best['rare_wer']:.4f} vs {std['rare_wer']:.4f} ({100 * gain:.1f}% relative)")
    assert report(7, "decode-weight sweep", ok, detail, secs)


def test_criterion_08_mwer_mirror(default_run):
    rep, secs = default_run
    b, a = rep["mwer"]["before"], rep["mwer"]["after"]
    ok = a["wer"] <= b["wer"] and a["rare_wer"] < b["rare_wer"] and rep["checks"]["ilm_frozen"] and secs < 900
    detail = f"dev WER {b['wer']:.4f} -> {a['wer']:.4f}; rare-word WER {b['rare_wer']:.4f} -> {a['rare_wer']:.4f}"
    assert report(8, "ILM-aware MWER finetuning", ok, detail, secs)


def test_criterion_09_mwer_properties():
    res, secs = timed(check_mwer_properties, n=1000)
    assert report(9, "MWER bounds and shift invariance", res.passed,
                  f"max shift deviation {res.value:.2e}; {res.detail}", secs)


def test_criterion_10_determinism(default_run):
    first, _ = default_run
    second, secs = timed(run_pipeline, RunConfig())
    ok = first == second
    assert report(10, "determinism", ok, "two default pipeline runs produce identical reports" if ok
                  else "reports differ", secs)
