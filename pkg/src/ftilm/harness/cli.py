"""Command-line entry point.

Every subcommand accepts ``--config FILE`` (``key = value`` lines), ``--seed``
and one ``--<field>`` flag per run-configuration field.  Results are printed
as JSON.  The exit status is 0 when the command succeeded and every check it
ran passed, 1 when a check failed, and 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import fields
from pathlib import Path

from ..decode import beam_search, nbest_record
from ..errors import InvalidInputError, TrainingDivergedError
from ..ilm import FrozenLM, ToyNeuralLM
from .checks import gradient_checks, oracle_checks
from .config import RunConfig, load_config
from .data import ToyCorpus, gen_data
from .metrics import evaluate, sweep
from .model import ToyFTModel
from .pipeline import run_pipeline
from .train import init_model, mwer_finetune, pretrain_ilm, train_ft

log = logging.getLogger("ftilm")


def _config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration")
    group.add_argument("--config", type=Path, help="plain-text key = value configuration file")
    hints = typing.get_type_hints(RunConfig)
    for f in fields(RunConfig):
        kind = hints[f.name]
        metavar = "A,B,..." if kind is tuple else kind.__name__.upper()
        # Values stay strings here and are typed by the config parser.
        group.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar=metavar, default=None)


def _cfg(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, **overrides)


def _emit(obj, out: Path | None = None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=False)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    print(text)


def _load_ilm(path) -> FrozenLM:
    return FrozenLM(ToyNeuralLM.load(path))


def cmd_gen_data(args, cfg):
    corpus = gen_data(cfg)
    corpus.save(args.out)
    _emit({"out": str(args.out), "splits": {k: len(v) for k, v in corpus.splits.items()}, "text": len(corpus.text)})
    return 0


def cmd_pretrain_ilm(args, cfg):
    corpus = ToyCorpus.load(args.data)
    ilm, losses = pretrain_ilm(corpus, cfg)
    ilm.save(args.out)
    _emit({"out": str(args.out), "loss_first": losses[0] if losses else None,
           "loss_last": losses[-1] if losses else None, "param_hash": ilm.param_hash()})
    return 0


def cmd_train(args, cfg):
    corpus = ToyCorpus.load(args.data)
    ilm = _load_ilm(args.ilm)
    before = ilm.param_hash()
    res = train_ft(init_model(ilm, cfg), corpus, cfg)
    res.model.save(args.out)
    frozen = res.model.ilm.param_hash() == before
    _emit({"out": str(args.out), "losses": res.losses, "ilm_frozen": frozen})
    return 0 if frozen else 1


def cmd_sweep(args, cfg):
    corpus = ToyCorpus.load(args.data)
    model = ToyFTModel.load(args.model)
    table = sweep(model, corpus, cfg, split=args.split)
    _emit(table.to_dict(), args.out)
    return 0


def cmd_decode(args, cfg):
    corpus = ToyCorpus.load(args.data)
    model = ToyFTModel.load(args.model)
    dcfg = cfg.decode_config(forbidden=(corpus.vocab.eos_id,))
    lines = []
    for u in corpus.split(args.split):
        rec = nbest_record(u.utt_id, beam_search(model.provider(u.features), model.ilm, dcfg))
        for h in rec["nbest"]:
            h["words"] = corpus.vocab.decode(h["tokens"])
        lines.append(json.dumps(rec))
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_mwer_finetune(args, cfg):
    corpus = ToyCorpus.load(args.data)
    model = ToyFTModel.load(args.model)
    before = model.ilm.param_hash()
    res = mwer_finetune(model, corpus, cfg, cfg.weights)
    res.model.save(args.out)
    checks = {
        "wer_not_increased": res.after["wer"] <= res.before["wer"],
        "ilm_frozen": res.model.ilm.param_hash() == before,
    }
    _emit({"out": str(args.out), "before": res.before, "after": res.after, "skipped": res.skipped,
           "batch_mwer": res.batch_mwer, "checks": checks})
    return 0 if all(checks.values()) else 1


def cmd_evaluate(args, cfg):
    corpus = ToyCorpus.load(args.data)
    model = ToyFTModel.load(args.model)
    res = evaluate(model, corpus.split(args.split), corpus.vocab, cfg.decode_config())
    out = res.summary()
    if args.records:
        out["records"] = res.records
    _emit(out, args.out)
    return 0


def _run_checks(results, out):
    for r in results:
        print(r.line(), file=sys.stderr)
    _emit({"checks": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}, out)
    return 0 if all(r.passed for r in results) else 1


def cmd_gradcheck(args, cfg):
    return _run_checks(gradient_checks(cfg.seed), args.out)


def cmd_oracle_check(args, cfg):
    return _run_checks(oracle_checks(cfg.seed), args.out)


def cmd_run(args, cfg):
    report = run_pipeline(cfg, workdir=args.workdir, shallow_fusion=args.shallow_fusion)
    _emit({k: report[k] for k in ("data", "sweep", "mwer", "checks", "passed") if k in report}, args.out)
    return 0 if report["passed"] else 1


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the synthetic corpus"),
    "pretrain-ilm": (cmd_pretrain_ilm, "pretrain the internal LM on the text corpus"),
    "train": (cmd_train, "train the factorized transducer with the ILM frozen"),
    "sweep": (cmd_sweep, "decode over the alpha/beta grid"),
    "decode": (cmd_decode, "write N-best lists as JSON lines"),
    "mwer-finetune": (cmd_mwer_finetune, "ILM-aware MWER finetuning"),
    "evaluate": (cmd_evaluate, "WER and rare-word WER of one split"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient checks"),
    "oracle-check": (cmd_oracle_check, "brute-force oracle checks"),
    "run": (cmd_run, "every stage end to end"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftilm", description="Factorized transducer with an internal LM (toy scale).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = {}
    for name, (_, help_text) in COMMANDS.items():
        p[name] = sub.add_parser(name, help=help_text)
        _config_flags(p[name])
        p[name].add_argument("--out", type=Path, default=None, help="output path")
    p["gen-data"].set_defaults(out=Path("data"))
    p["pretrain-ilm"].set_defaults(out=Path("ilm.npz"))
    p["train"].set_defaults(out=Path("model.npz"))
    p["mwer-finetune"].set_defaults(out=Path("model_mwer.npz"))
    for name in ("pretrain-ilm", "train", "sweep", "decode", "mwer-finetune", "evaluate"):
        p[name].add_argument("--data", type=Path, required=True, help="corpus directory from gen-data")
    p["train"].add_argument("--ilm", type=Path, required=True, help="checkpoint from pretrain-ilm")
    for name in ("sweep", "decode", "mwer-finetune", "evaluate"):
        p[name].add_argument("--model", type=Path, required=True, help="transducer checkpoint")
    for name in ("sweep", "decode", "evaluate"):
        p[name].add_argument("--split", default="dev")
    p["evaluate"].add_argument("--records", action="store_true", help="include per-utterance records")
    p["run"].add_argument("--workdir", type=Path, default=None, help="also save corpus, checkpoints and report here")
    p["run"].add_argument("--shallow-fusion", action="store_true", help="add an external-LM shallow-fusion baseline row")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _cfg(args)
        return COMMANDS[args.command][0](args, cfg)
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
