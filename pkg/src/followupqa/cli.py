"""Command-line entry point.

Stage graph: prepare -> train-extractor -> train-qg -> weak-label ->
train-followup -> build-controller-data -> train-controller -> evaluation
(eval-oracle, eval-full, followup-quality). Every stage reads and writes
plain files, so runs are resumable and reproducible; checkpoint manifests
record the config hash that produced them.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import metrics, pipeline
from .config import ConfigError, RunConfig, load_config
from .controller import (
    RelevanceController,
    build_controller_dataset,
    read_triples,
    write_triples,
)
from .corpus import (
    CorpusError,
    filter_two_hop_bridge,
    load_hotpotqa,
    load_squad,
    read_bridge_examples,
    write_bridge_examples,
)
from .extractor import SingleHopExtractor
from .followupgen import (
    FollowupGenerator,
    read_generated_followups,
    write_generated_followups,
)
from .qgweak import QuestionGenerator, read_weak_labels, weak_label_followups, write_weak_labels

log = logging.getLogger(__name__)

CHECKPOINT_ROOT_ENV = "FOLLOWUPQA_CHECKPOINTS"


def _checkpoint_path(arg: str) -> Path:
    root = os.environ.get(CHECKPOINT_ROOT_ENV)
    path = Path(arg)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _require_file(path, hint: str = "") -> Path:
    path = Path(path)
    if not path.exists():
        suffix = f" ({hint})" if hint else ""
        raise FileNotFoundError(f"missing input artifact: {path}{suffix}")
    return path


def _require_checkpoint(arg: str, stage: str) -> Path:
    path = _checkpoint_path(arg)
    _require_file(path / "manifest.json", f"run {stage} first")
    return path


def _extractor_from_config(c: RunConfig) -> SingleHopExtractor:
    return SingleHopExtractor(
        backend=c.extractor_backend,
        vocab_size=c.vocab_size,
        embed_dim=c.embed_dim,
        hidden_dim=c.hidden_dim,
        max_input_tokens=c.max_source_tokens,
        max_question_tokens=c.max_question_tokens,
        window_stride=c.window_stride,
        max_answer_tokens=c.max_answer_tokens,
        null_threshold=c.null_threshold,
        learning_rate=c.learning_rate,
        batch_size=c.batch_size,
        max_steps=c.max_steps,
        dev_fraction=c.dev_fraction,
        seed=c.seed,
    )


def _qg_from_config(c: RunConfig) -> QuestionGenerator:
    return QuestionGenerator(
        vocab_size=c.vocab_size,
        embed_dim=c.embed_dim,
        hidden_dim=c.hidden_dim,
        beam_size=c.beam_size,
        max_source_tokens=c.max_source_tokens,
        max_output_tokens=c.max_output_tokens,
        coverage=c.coverage,
        learning_rate=c.learning_rate,
        batch_size=c.batch_size,
        max_steps=c.max_steps,
        dev_fraction=c.dev_fraction,
        seed=c.seed,
    )


def _followup_from_config(c: RunConfig) -> FollowupGenerator:
    return FollowupGenerator(
        vocab_size=c.vocab_size,
        embed_dim=c.embed_dim,
        hidden_dim=c.hidden_dim,
        beam_size=c.beam_size,
        max_source_tokens=c.max_source_tokens,
        max_output_tokens=c.max_output_tokens,
        coverage=c.coverage,
        learning_rate=c.learning_rate,
        batch_size=c.batch_size,
        max_steps=c.max_steps,
        dev_fraction=c.dev_fraction,
        seed=c.seed,
    )


def _controller_from_config(c: RunConfig) -> RelevanceController:
    return RelevanceController(
        backend=c.controller_backend,
        vocab_size=c.vocab_size,
        embed_dim=c.embed_dim,
        hidden_dim=c.hidden_dim,
        max_input_tokens=c.max_source_tokens,
        max_question_tokens=c.max_question_tokens,
        class_weights=c.class_weights,
        downsample_negatives=c.downsample_negatives,
        learning_rate=c.learning_rate,
        batch_size=c.batch_size,
        max_steps=c.max_steps,
        dev_fraction=c.dev_fraction,
        seed=c.seed,
    )


# ----------------------------------------------------------------- stages


def cmd_prepare(args, config: RunConfig) -> int:
    records = load_hotpotqa(_require_file(args.hotpotqa))
    examples = filter_two_hop_bridge(records)
    write_bridge_examples(examples, args.out)
    print(f"prepare: kept {len(examples)} of {len(records)} records -> {args.out}")
    return 0


def cmd_train_extractor(args, config: RunConfig) -> int:
    examples = load_squad(_require_file(args.squad))
    model = _extractor_from_config(config).fit(examples)
    model.save(_checkpoint_path(args.out), extra={"config_hash": config.hash()})
    dev_em = model.report_.get("dev_em")
    dev_f1 = model.report_.get("dev_f1")
    dev = f" dev EM {dev_em:.3f} F1 {dev_f1:.3f}" if dev_em is not None else ""
    print(f"train-extractor: {model.steps_} steps on {len(examples)} examples{dev} -> {args.out}")
    return 0


def cmd_train_qg(args, config: RunConfig) -> int:
    examples = load_squad(_require_file(args.squad))
    model = _qg_from_config(config).fit(examples)
    model.save(_checkpoint_path(args.out), extra={"config_hash": config.hash()})
    ppl = model.report_.get("dev_perplexity")
    dev = f" dev ppl {ppl:.2f}" if ppl else ""
    print(f"train-qg: {model.steps_} steps on {len(examples)} examples{dev} -> {args.out}")
    return 0


def cmd_weak_label(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    model = QuestionGenerator.load(_require_checkpoint(args.qg, "train-qg"))
    labels = weak_label_followups(model, examples)
    write_weak_labels(labels, args.out)
    print(f"weak-label: {len(labels)} followup labels -> {args.out}")
    return 0


def cmd_train_followup(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    labels = read_weak_labels(_require_file(args.weak, "run weak-label first"))
    by_id = {lab.example_id: lab for lab in labels}
    missing = [ex.id for ex in examples if ex.id not in by_id]
    if missing:
        raise ValueError(f"{len(missing)} examples lack weak labels (first: {missing[0]!r})")
    aligned = [by_id[ex.id] for ex in examples]
    model = _followup_from_config(config).fit(examples, aligned)
    model.save(_checkpoint_path(args.out), extra={"config_hash": config.hash()})
    ppl = model.report_.get("dev_perplexity")
    dev = f" dev ppl {ppl:.2f}" if ppl else ""
    print(f"train-followup: {model.steps_} steps on {len(examples)} pairs{dev} -> {args.out}")
    return 0


def cmd_build_controller_data(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    extractor = SingleHopExtractor.load(_require_checkpoint(args.extractor, "train-extractor"))
    triples = build_controller_dataset(examples, extractor)
    write_triples(triples, args.out)
    histogram = {}
    for t in triples:
        histogram[t.label] = histogram.get(t.label, 0) + 1
    print(f"build-controller-data: {len(triples)} triples {histogram} -> {args.out}")
    return 0


def cmd_train_controller(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    triples = read_triples(_require_file(args.triples, "run build-controller-data first"), examples)
    model = _controller_from_config(config).fit(triples)
    model.save(_checkpoint_path(args.out), extra={"config_hash": config.hash()})
    acc = model.report_.get("dev_accuracy_per_class", {})
    acc_txt = " ".join(f"{k}={v:.2f}" for k, v in acc.items())
    print(f"train-controller: {model.steps_} steps on {len(triples)} triples dev acc {acc_txt} -> {args.out}")
    return 0


def cmd_generate_followups(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    model = FollowupGenerator.load(_require_checkpoint(args.followup, "train-followup"))
    pairs = [(ex.id, model.generate(ex.q1, ex.p1_hat)) for ex in examples]
    write_generated_followups(pairs, args.out)
    print(f"generate-followups: {len(pairs)} questions -> {args.out}")
    return 0


def cmd_eval_oracle(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    extractor = SingleHopExtractor.load(_require_checkpoint(args.extractor, "train-extractor"))
    followup = None
    if args.variant in ("trained_q2", "q1_else_q2"):
        if not args.followup:
            raise ValueError(f"variant {args.variant} requires --followup")
        followup = FollowupGenerator.load(_require_checkpoint(args.followup, "train-followup"))
    models = pipeline.PipelineModels(extractor=extractor, followup=followup)
    answers = [pipeline.run_oracle(ex, args.variant, models) for ex in examples]
    if args.predictions:
        pipeline.write_predictions(answers, args.predictions)
    if args.traces:
        pipeline.write_traces([a.trace for a in answers], args.traces)
    report = metrics.evaluate({a.example_id: a.answer for a in answers}, examples, args.variant)
    print(metrics.format_report_table([("Oracle setting", [report])]))
    if args.out:
        metrics.write_reports([report], args.out)
    return 0


def cmd_eval_full(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    extractor = SingleHopExtractor.load(_require_checkpoint(args.extractor, "train-extractor"))
    controller = RelevanceController.load(_require_checkpoint(args.controller, "train-controller"))
    followup = None
    if args.hops == 2:
        if not args.followup:
            raise ValueError("two-hop evaluation requires --followup")
        followup = FollowupGenerator.load(_require_checkpoint(args.followup, "train-followup"))
    models = pipeline.PipelineModels(extractor=extractor, followup=followup, controller=controller)
    answers = [pipeline.run_full(ex, models, hops=args.hops) for ex in examples]
    if args.predictions:
        pipeline.write_predictions(answers, args.predictions)
    if args.traces:
        pipeline.write_traces([a.trace for a in answers], args.traces)
    variant = "one_hop" if args.hops == 1 else "two_hop"
    report = metrics.evaluate({a.example_id: a.answer for a in answers}, examples, variant)
    n_followups = sum(len(a.trace.followups) for a in answers)
    hop1 = sum(1 for a in answers for e in a.trace.extractions if e.hop == 1)
    hop2 = sum(1 for a in answers for e in a.trace.extractions if e.hop == 2)
    print(metrics.format_report_table([("Full system", [report])]))
    print(f"requests: {n_followups} followups, {hop1} hop-1 extractions, {hop2} hop-2 extractions")
    if args.out:
        metrics.write_reports([report], args.out)
    return 0


def cmd_followup_quality(args, config: RunConfig) -> int:
    examples = read_bridge_examples(_require_file(args.examples, "run prepare first"))
    followups = read_generated_followups(_require_file(args.followups, "run generate-followups first"))
    extractor = SingleHopExtractor.load(_require_checkpoint(args.extractor, "train-extractor"))
    controller = RelevanceController.load(_require_checkpoint(args.controller, "train-controller"))
    report = metrics.followup_quality(examples, followups, extractor, controller)
    print(
        "followup-quality: answerability {:.3f} (strict {:.3f}) recognition {:.3f} rejection {:.3f} n={}".format(
            report.answerability,
            report.answerability_strict,
            report.recognition,
            report.rejection,
            report.count,
        )
    )
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="followupqa",
        description="Two-hop question answering with generated followup questions.",
    )
    parser.add_argument("--config", default=None, help="flat key = value config file")
    parser.add_argument("--profile", default="desk", choices=["desk", "full"], help="default config profile")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    parser.add_argument("-v", "--verbose", action="store_true", help="INFO-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter HotpotQA into two-hop bridge examples")
    p.add_argument("--hotpotqa", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-extractor", help="train and freeze the single-hop extractor")
    p.add_argument("--squad", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_extractor)

    p = sub.add_parser("train-qg", help="train the weak-label question generator")
    p.add_argument("--squad", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_qg)

    p = sub.add_parser("weak-label", help="generate weak followup labels")
    p.add_argument("--examples", required=True)
    p.add_argument("--qg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weak_label)

    p = sub.add_parser("train-followup", help="train the followup generator on weak labels")
    p.add_argument("--examples", required=True)
    p.add_argument("--weak", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_followup)

    p = sub.add_parser("build-controller-data", help="construct controller training triples")
    p.add_argument("--examples", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_controller_data)

    p = sub.add_parser("train-controller", help="train the ternary relevance controller")
    p.add_argument("--examples", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_controller)

    p = sub.add_parser("generate-followups", help="write (id, followup question) lines")
    p.add_argument("--examples", required=True)
    p.add_argument("--followup", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_followups)

    p = sub.add_parser("eval-oracle", help="oracle-setting evaluation")
    p.add_argument("--variant", required=True, choices=list(pipeline.ORACLE_VARIANTS))
    p.add_argument("--examples", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--followup", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--traces", default=None)
    p.add_argument("--out", default=None, help="machine-readable report path")
    p.set_defaults(func=cmd_eval_oracle)

    p = sub.add_parser("eval-full", help="full-system evaluation over provided premises")
    p.add_argument("--hops", type=int, default=2, choices=[1, 2])
    p.add_argument("--examples", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--controller", required=True)
    p.add_argument("--followup", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--traces", default=None)
    p.add_argument("--out", default=None, help="machine-readable report path")
    p.set_defaults(func=cmd_eval_full)

    p = sub.add_parser("followup-quality", help="desiderata rates for generated followups")
    p.add_argument("--examples", required=True)
    p.add_argument("--followups", required=True)
    p.add_argument("--extractor", required=True)
    p.add_argument("--controller", required=True)
    p.set_defaults(func=cmd_followup_quality)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, value = item.partition("=")
            overrides[key.strip()] = value.strip()
        config = load_config(args.config, args.profile, overrides)
        return args.func(args, config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
