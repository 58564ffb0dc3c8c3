"""Command-line entry point: ``seqdvc <subcommand> --config run.json --out DIR``.

Every subcommand writes ``run.json`` into its output directory with the
resolved configuration, the seed, file format versions and SHA-256 digests of
every input it read. Failures print one JSON object on stderr and exit
nonzero (2 for configuration or input errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import numerics
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("seqdvc")

SUBCOMMANDS = ("gen-data", "train-cpt", "pretrain", "finetune-ed", "finetune-ec", "infer", "evaluate", "audit")


class InputError(RuntimeError):
    pass


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory plus provenance bookkeeping for one subcommand."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.inputs: dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def input(self, key: str, required: bool = True):
        value = self.cfg.data.get(key)
        if value is None:
            if required:
                raise InputError(f"data.{key} is required for {self.command}")
            return None
        path = Path(value)
        if not path.is_file():
            raise InputError(f"data.{key}: file not found: {value}")
        self.inputs[key] = _digest(path)
        return path

    def extra_input(self, label: str, path: Path) -> Path:
        if not path.is_file():
            raise InputError(f"{label}: file not found: {path}")
        self.inputs[label] = _digest(path)
        return path

    def finish(self, outputs: list[str]) -> None:
        from .data.formats import FORMAT_VERSION
        from .metrics import EVAL_FORMAT_VERSION

        doc = {
            "command": self.command,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "format_versions": {
                "data": FORMAT_VERSION,
                "checkpoint": numerics.CHECKPOINT_FORMAT_VERSION,
                "eval_report": EVAL_FORMAT_VERSION,
            },
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(outputs),
        }
        (self.out / "run.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
        (self.out / "config.json").write_text(self.cfg.to_json())


# --- shared loading -------------------------------------------------------------

def _records(run: Run, split: str):
    from .data.formats import load_dense_dataset

    return load_dense_dataset(run.input(f"{split}_annotations"), run.input(f"{split}_features"))


def _maybe_augment(run: Run, records):
    path = run.input("cpt_checkpoint", required=False)
    if path is None:
        return records
    from .concept_features import augment_records, load_tagger

    tagger, _ = load_tagger(path)
    return augment_records(records, tagger)


def _clip_records(run: Run):
    path = run.input("clip_annotations", required=False)
    if path is None:
        return []
    from .data.formats import ingest_clip_corpus

    return ingest_clip_corpus(path, run.input("clip_features"))


def _vocab(run: Run, sentences, near=None):
    from .data.tokenizer import Vocab

    path = run.input("vocab", required=False)
    if path is None and near is not None and (Path(near).parent / "vocab.json").is_file():
        path = run.extra_input("vocab", Path(near).parent / "vocab.json")
    if path is not None:
        return Vocab.load(path)
    return Vocab.build(sentences, min_freq=run.cfg.data.get("vocab_min_freq", 1))


def _load_model(run: Run, key: str, required: bool = True):
    from .pretraining import load_model

    path = run.input(key, required=required)
    if path is None:
        return None, None
    model, _ = load_model(path)
    return model, path


def _fresh_model(cfg: RunConfig, feature_dim: int, vocab_size: int):
    from .model import DenseCaptioner

    numerics.seed_everything(cfg.seed)
    return DenseCaptioner(cfg.model_config(feature_dim=feature_dim, vocab_size=vocab_size))


def _check_compatible(model, records, vocab):
    dim = records[0].features.shape[1]
    if model.config.feature_dim != dim:
        raise InputError(f"checkpoint expects {model.config.feature_dim}-d features, data has {dim}")
    if model.config.vocab_size != len(vocab):
        raise InputError(f"checkpoint vocabulary size {model.config.vocab_size} != vocab.json size {len(vocab)}")


# --- subcommands ----------------------------------------------------------------

def cmd_gen_data(run: Run) -> list[str]:
    from .data.synthetic import generate_synthetic_corpus, split_records, write_dataset

    spec = run.cfg.synthetic_spec()
    records = generate_synthetic_corpus(spec)
    n_heldout = run.cfg.data.get("n_heldout", 0)
    outputs = []
    if n_heldout:
        train, held = split_records(records, n_heldout)
        write_dataset(held, run.out / "heldout", spec)
        outputs += ["heldout/annotations.json", "heldout/features.bin", "heldout/synthetic_spec.json"]
    else:
        train = records
    write_dataset(train, run.out / "train", spec)
    outputs += ["train/annotations.json", "train/features.bin", "train/synthetic_spec.json"]
    return outputs


def cmd_train_cpt(run: Run) -> list[str]:
    from .concept_features import build_concept_vocab, save_tagger, train_cpt

    records = _records(run, "train")
    vocab = build_concept_vocab(records, run.cfg.eval_value("cpt_concepts"))
    cfg = run.cfg.cpt_config()
    tagger = train_cpt(records, vocab, cfg)
    save_tagger(run.out / "tagger.npz", tagger, vocab, cfg)
    return ["tagger.npz"]


def cmd_pretrain(run: Run) -> list[str]:
    from .batching import prepare
    from .pretraining import pretrain, save_model

    records = _maybe_augment(run, _records(run, "train"))
    clips = _maybe_augment(run, _clip_records(run))
    pool = records + clips
    vocab = _vocab(run, [s for r in pool for s in r.sentences])
    model = _fresh_model(run.cfg, pool[0].features.shape[1], len(vocab))
    videos = prepare(pool, vocab, model.config)
    cfg = run.cfg.train_config()

    def checkpoint(step):
        save_model(run.out / f"model_step{step}.npz", model, {"step": step})

    result = pretrain(model, videos, cfg, len(vocab), on_checkpoint=checkpoint)
    save_model(run.out / "model.npz", model, {"stage": "pretrain", "steps": cfg.steps})
    vocab.save(run.out / "vocab.json")
    result.write_csv(run.out / "losses.csv")
    return ["losses.csv", "model.npz", "vocab.json"]


def _finetune(run: Run, which: str) -> list[str]:
    from .batching import prepare
    from .generation import finetune_ec, finetune_ed
    from .pretraining import save_model

    records = _maybe_augment(run, _records(run, "train"))
    init, init_path = _load_model(run, "init_checkpoint", required=False)
    vocab = _vocab(run, [s for r in records for s in r.sentences], near=init_path)
    if init is None:
        model = _fresh_model(run.cfg, records[0].features.shape[1], len(vocab))
    else:
        model = init
        _check_compatible(model, records, vocab)
    videos = prepare(records, vocab, model.config)
    cfg = run.cfg.finetune_config()
    result = (finetune_ed if which == "ed" else finetune_ec)(model, videos, cfg)
    save_model(run.out / "model.npz", model, {"stage": f"finetune-{which}", "steps": cfg.steps})
    vocab.save(run.out / "vocab.json")
    result.write_csv(run.out / "losses.csv")
    return ["losses.csv", "model.npz", "vocab.json"]


def cmd_infer(run: Run) -> list[str]:
    from .batching import prepare
    from .data.formats import write_submission
    from .generation import predict_submission

    records = _maybe_augment(run, _records(run, "eval"))
    ed, _ = _load_model(run, "ed_checkpoint")
    ec, ec_path = _load_model(run, "ec_checkpoint")
    vocab = _vocab(run, [], near=ec_path)
    _check_compatible(ec, records, vocab)
    if ed.config.feature_dim != ec.config.feature_dim:
        raise InputError("event and caption checkpoints disagree on feature size")
    videos = prepare(records, vocab, ec.config)
    results = predict_submission(ed, ec, videos, vocab, run.cfg.decode_config())
    write_submission(run.out / "submission.json", results)
    return ["submission.json"]


def _references(run: Run):
    from .data.formats import load_references

    refs = [load_references(run.input("eval_annotations"))]
    for k, p in enumerate(run.cfg.data.get("extra_references", [])):
        refs.append(load_references(run.extra_input(f"extra_references[{k}]", Path(p))))
    return refs


def cmd_evaluate(run: Run) -> list[str]:
    from .data.formats import read_submission
    from .metrics import dumps_report, evaluate

    refs = _references(run)
    sub = read_submission(run.input("submission"))
    report = evaluate(
        sub,
        refs,
        thresholds=tuple(run.cfg.eval_value("thresholds")),
        caption_tiou=run.cfg.eval_value("caption_tiou"),
        inner_metric=run.cfg.eval_value("inner_metric"),
    )
    (run.out / "eval_report.json").write_text(dumps_report(report))
    return ["eval_report.json"]


def cmd_audit(run: Run, operations) -> list[str]:
    from .data.formats import read_submission, write_submission
    from .robustness import PerturbConfig, audit, audit_inputs

    refs = _references(run)
    path = run.input("submission", required=False)
    outputs = []
    if path is None:
        # no submission given: build the first-event-is-best synthetic one
        sub, refs = audit_inputs(refs[0], seed=run.cfg.seed)
        write_submission(run.out / "audit_submission.json", sub)
        outputs.append("audit_submission.json")
    else:
        sub = read_submission(path)
    pcfg = PerturbConfig(
        p_increase=run.cfg.eval_value("p_increase"),
        p_reduce=run.cfg.eval_value("p_reduce"),
        seeds=list(run.cfg.eval_value("audit_seeds")),
    )
    report = audit(
        sub,
        refs,
        pcfg,
        operations=operations,
        caption_tiou=run.cfg.eval_value("caption_tiou"),
        inner_metric=run.cfg.eval_value("inner_metric"),
    )
    (run.out / "audit.csv").write_text(report.to_csv())
    (run.out / "audit.json").write_text(report.to_json())
    return outputs + ["audit.csv", "audit.json"]


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .robustness import OPERATIONS

    parser = argparse.ArgumentParser(prog="seqdvc", description="Dense video captioning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="run configuration JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="K=V",
                       help="override a config value, e.g. train.steps=200 (repeatable)")
        p.add_argument("--seed", type=int, help="run seed (overrides the config)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        if name == "audit":
            p.add_argument("--operation", choices=OPERATIONS + ("all",), default="all")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    from .data.formats import SchemaError
    from .pretraining import NonFiniteLoss
    from .robustness import OPERATIONS

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=os.environ.get("SEQDVC_LOG", "WARNING").upper(), format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        run = Run(args.command, cfg, args.out)
        if args.command == "audit":
            ops = OPERATIONS if args.operation == "all" else (args.operation,)
            outputs = cmd_audit(run, ops)
        else:
            handler = {
                "gen-data": cmd_gen_data,
                "train-cpt": cmd_train_cpt,
                "pretrain": cmd_pretrain,
                "finetune-ed": lambda r: _finetune(r, "ed"),
                "finetune-ec": lambda r: _finetune(r, "ec"),
                "infer": cmd_infer,
                "evaluate": cmd_evaluate,
            }[args.command]
            outputs = handler(run)
        run.finish(outputs)
    except (ConfigError, InputError, SchemaError) as exc:
        return _fail(type(exc).__name__, str(exc), 2)
    except NonFiniteLoss as exc:
        return _fail("NonFiniteLoss", str(exc), 1)
    except Exception as exc:  # noqa: BLE001 - every failure must surface as JSON
        log.debug("failure", exc_info=True)
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps({"command": args.command, "out": str(args.out), "outputs": sorted(outputs)}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
