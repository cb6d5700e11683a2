"""Command-line entry points for the full pipeline.

Every subcommand accepts ``--config FILE`` (JSON whose keys are the flag
names with dashes replaced by underscores); explicitly passed flags override
config values, which override built-in defaults.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import synthetic
from .corpus import (
    CorpusError,
    EnrichmentTable,
    balance_and_split,
    enrich_interests,
    ingest_enron_dir,
    load_generic_corpus,
    load_split_manifest,
    write_generic_corpus,
)
from .edits import POSITIONS, simulate_edits, suggest_edits
from .encoders import EncoderConfig
from .explain import explain
from .parsing import dump_parses, load_parses, sentences_for
from .protonet import load_checkpoint
from .training import (
    Hyperparams,
    SearchSpace,
    ablation_run,
    balance_and_split as _split,
    build_model,
    component_toggles,
    default_ablation_toggles,
    evaluate,
    random_search,
    run_training,
    train,
)

log = logging.getLogger(__name__)


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file with flag defaults")


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Overlay config-file values onto flags the user left at their defaults."""
    if not getattr(args, "config", None):
        return args
    doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key, value in doc.items():
        if not hasattr(args, key):
            raise SystemExit(f"config key {key!r} does not match any flag")
        if getattr(args, key) == parser.get_default(key):
            setattr(args, key, value)
    return args


def _add_hyperparam_flags(parser: argparse.ArgumentParser) -> None:
    hp = Hyperparams()
    parser.add_argument("--epochs", type=int, default=hp.epochs)
    parser.add_argument("--seed", type=int, default=hp.seed)
    parser.add_argument("--batch-size", type=int, default=hp.batch_size)
    parser.add_argument("--learning-rate", type=float, default=hp.learning_rate)
    parser.add_argument("--positive-class-weight", type=float, default=hp.positive_class_weight)
    parser.add_argument("--j", type=int, default=hp.j)
    parser.add_argument("--k", type=int, default=hp.k)
    parser.add_argument("--m", type=int, default=hp.m)
    parser.add_argument("--theta", type=float, default=hp.theta)
    parser.add_argument("--alpha", type=float, default=hp.alpha)
    parser.add_argument("--beta", type=float, default=hp.beta)
    parser.add_argument("--gamma", type=float, default=hp.gamma)
    parser.add_argument("--delta", type=float, default=hp.delta)
    parser.add_argument("--lambda1", type=float, default=hp.lambda1)
    parser.add_argument("--lambda2", type=float, default=hp.lambda2)
    parser.add_argument("--weight-decay", type=float, default=hp.weight_decay)
    parser.add_argument("--projection-period", type=int, default=hp.projection_period)
    parser.add_argument("--patience", type=int, default=hp.early_stopping_patience)


def _add_encoder_flags(parser: argparse.ArgumentParser) -> None:
    enc = EncoderConfig()
    parser.add_argument("--text-encoder", choices=["tiny-trainable", "pretrained-transformer"],
                        default=enc.text_encoder_kind)
    parser.add_argument("--graph-encoder", choices=["gcn-style", "gat-style"],
                        default=enc.graph_encoder_kind)
    parser.add_argument("--d", type=int, default=enc.d)
    parser.add_argument("--vocab-size", type=int, default=enc.vocab_size)
    parser.add_argument("--max-document-tokens", type=int, default=enc.max_document_tokens)
    parser.add_argument("--max-sentence-tokens", type=int, default=enc.max_sentence_tokens)
    parser.add_argument("--pretrained-name", default=enc.pretrained_name)
    parser.add_argument("--components", default="SCOE", help="subset of SCOE fed to the document encoder")


def _hp_from_args(args: argparse.Namespace) -> Hyperparams:
    return Hyperparams(
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        positive_class_weight=args.positive_class_weight,
        j=args.j, k=args.k, m=args.m,
        theta=args.theta,
        alpha=args.alpha, beta=args.beta, gamma=args.gamma, delta=args.delta,
        lambda1=args.lambda1, lambda2=args.lambda2,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        seed=args.seed,
        projection_period=args.projection_period,
        early_stopping_patience=args.patience,
    )


def _encoder_from_args(args: argparse.Namespace) -> EncoderConfig:
    return EncoderConfig(
        text_encoder_kind=args.text_encoder,
        graph_encoder_kind=args.graph_encoder,
        d=args.d,
        vocab_size=args.vocab_size,
        max_document_tokens=args.max_document_tokens,
        max_sentence_tokens=args.max_sentence_tokens,
        pretrained_name=args.pretrained_name,
    )


def _load_corpus_and_parses(args: argparse.Namespace):
    emails = load_generic_corpus(args.corpus)
    parses = {}
    if getattr(args, "parses", None):
        parses = load_parses(args.parses, known_ids={le.email.id for le in emails})
    return emails, parses


def _read_email_json(path: Path):
    doc = json.loads(path.read_text(encoding="utf-8"))
    return corpus_mod.Email(
        id=doc.get("id", "input"),
        subject=doc.get("subject", ""),
        body=doc["body"],
        recipient_org=doc.get("recipient_org"),
        interests=doc.get("interests"),
    )


# -- subcommands -------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    if bool(args.raw_dir) == bool(args.generic):
        print("ingest: pass exactly one of --raw-dir or --generic", file=sys.stderr)
        return 2
    if args.raw_dir:
        emails = ingest_enron_dir(args.raw_dir)
    else:
        emails = load_generic_corpus(args.generic)
    if args.interests:
        table = EnrichmentTable.from_file(args.interests)
        emails = [
            dataclasses.replace(le, email=enrich_interests(le.email, table)) for le in emails
        ]
    write_generic_corpus(emails, args.out)
    counts = {0: 0, 1: 0}
    for le in emails:
        counts[le.label] += 1
    print(f"wrote {len(emails)} emails to {args.out} (response={counts[1]}, no-response={counts[0]})")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    out = synthetic.write_dataset(
        args.out,
        synthetic.GeneratorConfig(
            n_emails=args.n, positive_fraction=args.positive_fraction, seed=args.seed
        ),
    )
    print(f"wrote synthetic dataset to {out}")
    return 0


def cmd_parse_prep(args: argparse.Namespace) -> int:
    emails = load_generic_corpus(args.corpus)
    if args.emit:
        with open(args.emit, "w", encoding="utf-8") as fh:
            for le in emails:
                for i, sentence in enumerate(sentences_for(le.email.id, le.email.body, {})):
                    fh.write(f"{le.email.id}\t{i}\t{sentence}\n")
        print(f"emitted sentences for external parsing to {args.emit}")
        return 0
    if args.import_parses:
        known = {le.email.id for le in emails}
        parses = load_parses(args.import_parses, known_ids=known)
        Path(args.out).write_text(dump_parses(parses), encoding="utf-8")
        print(f"validated {len(parses)} parse blocks into {args.out}")
        return 0
    print("parse-prep: pass --emit or --import-parses", file=sys.stderr)
    return 2


def cmd_train(args: argparse.Namespace) -> int:
    emails, parses = _load_corpus_and_parses(args)
    hp = _hp_from_args(args)
    overrides = {"components": args.components}
    run = run_training(
        emails, parses, hp, args.out,
        encoder=_encoder_from_args(args), model_overrides=overrides,
    )
    print(f"run directory: {run.out_dir}")
    if run.history.epochs:
        print(f"best val weighted F1: {run.history.best_val_weighted_f1():.4f}")
    if run.test_metrics:
        print(f"test weighted F1: {run.test_metrics.weighted_f1:.4f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    bundle = load_checkpoint(args.checkpoint)
    emails, parses = _load_corpus_and_parses(args)
    if args.manifest:
        split = load_split_manifest(args.manifest, emails)
        emails = split.split(args.split)
    metrics = evaluate(bundle.model, emails, parses)
    report = json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    emails, parses = _load_corpus_and_parses(args)
    encoder = _encoder_from_args(args)
    base = _hp_from_args(args)

    def evaluate_fn(hp: Hyperparams) -> float:
        split = _split(emails, hp.seed)
        model = build_model(hp, encoder=encoder)
        model, _ = train(model, split, hp, parses)
        return evaluate(model, split.val, parses).weighted_f1

    best, leaderboard = random_search(SearchSpace(), args.budget, args.seed, evaluate_fn, base=base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "best": dataclasses.asdict(best),
        "leaderboard": [
            {"hyperparams": dataclasses.asdict(hp), "val_weighted_f1": score}
            for hp, score in leaderboard
        ],
    }
    (out / "leaderboard.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"best val weighted F1 {leaderboard[0][1]:.4f}; leaderboard at {out / 'leaderboard.json'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    emails, parses = _load_corpus_and_parses(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    toggles = default_ablation_toggles()
    if args.component_subsets:
        toggles += component_toggles(args.component_subsets.split(","))
    report = ablation_run(
        emails, parses, toggles, seeds, _hp_from_args(args), encoder=_encoder_from_args(args)
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(report.render_text(), encoding="utf-8")
    (out / "ablation.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(report.render_text(), end="")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    bundle = load_checkpoint(args.checkpoint)
    email = _read_email_json(args.input)
    parses = dict(bundle.parses)
    if args.parses:
        parses.update(load_parses(args.parses))
    report = explain(bundle.model, email, parses, top_n=args.top_n)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.render_text(), end="")
    return 0


def cmd_suggest(args: argparse.Namespace) -> int:
    bundle = load_checkpoint(args.checkpoint)
    email = _read_email_json(args.input)
    parses = dict(bundle.parses)
    if args.parses:
        parses.update(load_parses(args.parses))
    sources = {le.email.id: le for le in bundle.sources}
    suggestions = suggest_edits(
        bundle.model, email, parses, args.position, sources,
        seed=args.seed, topic_threshold=args.topic_threshold,
    )
    doc = {"position": args.position, "suggestions": [s.to_dict() for s in suggestions]}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_simulate_edits(args: argparse.Namespace) -> int:
    bundle = load_checkpoint(args.checkpoint)
    emails, parses = _load_corpus_and_parses(args)
    merged = dict(bundle.parses)
    merged.update(parses)
    sources = {le.email.id: le for le in bundle.sources}
    seeds = [int(s) for s in args.seeds.split(",")]
    positions = args.positions.split(",")
    report = simulate_edits(
        bundle.model, emails, merged, positions, seeds, sources,
        topic_threshold=args.topic_threshold,
    )
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    print(report.render_text(), end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import os

    from .service import serve

    checkpoint = os.environ.get("PROTOMAIL_CHECKPOINT") or args.checkpoint
    if not checkpoint:
        print("serve: pass --checkpoint or set PROTOMAIL_CHECKPOINT", file=sys.stderr)
        return 2
    serve(checkpoint, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protomail", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a corpus store from raw mail or a generic file")
    p.add_argument("--raw-dir", type=Path, help="maildir-style directory of raw messages")
    p.add_argument("--generic", type=Path, help="line-delimited generic corpus file")
    p.add_argument("--interests", type=Path, help="organization-interest table (JSON)")
    p.add_argument("--out", type=Path, required=True)
    _add_config_flag(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate the planted-trigger synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    _add_config_flag(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parse-prep", help="emit sentences for external parsing / import parse files")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--emit", type=Path, help="write id<TAB>index<TAB>sentence lines here")
    p.add_argument("--import-parses", type=Path, help="CoNLL-U subset file to validate and import")
    p.add_argument("--out", type=Path, help="validated parse file destination")
    _add_config_flag(p)
    p.set_defaults(func=cmd_parse_prep)

    p = sub.add_parser("train", help="balance/split a corpus and train a model")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_hyperparam_flags(p)
    _add_encoder_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a corpus or split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--manifest", type=Path, help="split manifest for exact replay")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", type=Path)
    _add_config_flag(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_hyperparam_flags(p)
    _add_encoder_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("ablate", help="component/view ablation grid")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--component-subsets", default="", help="comma-separated SCOE subsets, e.g. S,C,SC")
    p.add_argument("--out", type=Path, required=True)
    _add_hyperparam_flags(p)
    _add_encoder_flags(p)
    _add_config_flag(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("explain", help="prototype-evidence report for one email")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True, help="JSON email file")
    p.add_argument("--parses", type=Path)
    p.add_argument("--top-n", type=int, default=3)
    p.add_argument("--out", type=Path)
    _add_config_flag(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("suggest", help="prototype-based edit suggestions for one email")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--position", choices=list(POSITIONS), default="main")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topic-threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    _add_config_flag(p)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("simulate-edits", help="flip-ratio simulation over predicted negatives")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--parses", type=Path)
    p.add_argument("--positions", default="subject,opening,main,closing")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--topic-threshold", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    _add_config_flag(p)
    p.set_defaults(func=cmd_simulate_edits)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="checkpoint directory (PROTOMAIL_CHECKPOINT overrides)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _add_config_flag(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    for sub_action in parser._subparsers._group_actions:  # resolve the active subparser
        if args.command in getattr(sub_action, "choices", {}):
            args = _apply_config(args, sub_action.choices[args.command])
    try:
        return args.func(args)
    except (CorpusError, FileNotFoundError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
