"""Acceptance suite: one test per criterion, summarized pass/fail by the
conftest terminal hook.

Criteria that need trained models share session-scoped estimators trained
on the synthetic micro-corpus (200 two-hop questions, ~100-word
vocabulary, tiny from-scratch backends). The official-dataset filter
check runs only when the HotpotQA files are provided via environment
variables, since they cannot be fetched inside the build sandbox.
"""

import json
import os
import random
import re
import string
from collections import Counter

import pytest
import torch

from followupqa import synth
from followupqa.cli import main as cli_main
from followupqa.controller import RelevanceController, build_controller_dataset
from followupqa.corpus import (
    BridgeExample,
    Premise,
    filter_two_hop_bridge,
    load_hotpotqa,
    load_squad,
    read_bridge_examples,
)
from followupqa.extractor import SingleHopExtractor
from followupqa.followupgen import FollowupGenerator
from followupqa.metrics import evaluate, exact_match, f1
from followupqa.pipeline import PipelineModels, replay_trace, run_full, run_oracle
from followupqa.qgweak import QuestionGenerator, weak_label_followups
from followupqa.seq2seq import (
    PointerGeneratorNet,
    collate,
    copy_mixture,
    make_row,
    sequence_nll,
)
from followupqa.textproc import build_vocab, encode_source
from stubs import ScriptedExtractor, span_for

TRAIN_QUESTIONS = 200
DEV_QUESTIONS = 100
SEED = 13


# --------------------------------------------------------------- fixtures


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    paths = synth.write_corpus(root, num_train=TRAIN_QUESTIONS, num_dev=DEV_QUESTIONS, seed=SEED)
    filtered_train = root / "train.filtered.jsonl"
    filtered_dev = root / "dev.filtered.jsonl"
    assert cli_main(["prepare", "--hotpotqa", str(paths["hotpot_train"]), "--out", str(filtered_train)]) == 0
    assert cli_main(["prepare", "--hotpotqa", str(paths["hotpot_dev"]), "--out", str(filtered_dev)]) == 0
    return {
        "train": read_bridge_examples(filtered_train),
        "dev": read_bridge_examples(filtered_dev),
        "squad": load_squad(paths["squad_train"]),
    }


@pytest.fixture(scope="session")
def extractor(corpus):
    return SingleHopExtractor(max_steps=1600, seed=SEED).fit(corpus["squad"])


@pytest.fixture(scope="session")
def followup_generator(corpus):
    qg = QuestionGenerator(max_steps=1200, learning_rate=2e-3, seed=SEED).fit(corpus["squad"])
    weak = weak_label_followups(qg, corpus["train"])
    return FollowupGenerator(max_steps=1600, learning_rate=2e-3, seed=SEED).fit(corpus["train"], weak)


@pytest.fixture(scope="session")
def controller(corpus, extractor):
    triples = build_controller_dataset(corpus["train"], extractor)
    return RelevanceController(max_steps=1600, seed=SEED).fit(triples)


@pytest.fixture(scope="session")
def models(extractor, followup_generator, controller):
    return PipelineModels(extractor=extractor, followup=followup_generator, controller=controller)


@pytest.fixture(scope="session")
def dev_oracle_answers(corpus, models):
    return {
        variant: [run_oracle(ex, variant, models) for ex in corpus["dev"]]
        for variant in ("q2_equals_q1", "q1_else_q2", "trained_q2")
    }


@pytest.fixture(scope="session")
def dev_full_answers(corpus, models):
    return {hops: [run_full(ex, models, hops=hops) for ex in corpus["dev"]] for hops in (1, 2)}


# ---------------------------------------------------- criterion 1: filter


@pytest.mark.parametrize(
    "env_var,expected",
    [("HOTPOTQA_TRAIN_JSON", 38806), ("HOTPOTQA_DEV_JSON", 3214)],
)
def test_criterion_1_official_filter_counts(env_var, expected):
    """Filtering official HotpotQA yields the documented counts within 1%."""
    path = os.environ.get(env_var)
    if not path:
        pytest.skip(
            f"official HotpotQA file not available in this environment; "
            f"set {env_var} to the official json to run this criterion"
        )
    kept = filter_two_hop_bridge(load_hotpotqa(path))
    assert abs(len(kept) - expected) <= round(0.01 * expected), (
        f"filter kept {len(kept)}, expected {expected} within 1%"
    )


# --------------------------------------------------- criterion 2: metrics


def _reference_normalize(s):
    # independent scorer following the public SQuAD convention
    s = s.lower()
    s = "".join(ch for ch in s if ch not in set(string.punctuation))
    s = re.sub(r"\b(a|an|the)\b", " ", s)
    return " ".join(s.split())


def _reference_em(prediction, truth):
    return float(_reference_normalize(prediction) == _reference_normalize(truth))


def _reference_f1(prediction, truth):
    pred_tokens = _reference_normalize(prediction).split()
    truth_tokens = _reference_normalize(truth).split()
    if len(pred_tokens) == 0 or len(truth_tokens) == 0:
        return float(pred_tokens == truth_tokens)
    common = Counter(pred_tokens) & Counter(truth_tokens)
    num_same = sum(common.values())
    if num_same == 0:
        return 0.0
    precision = 1.0 * num_same / len(pred_tokens)
    recall = 1.0 * num_same / len(truth_tokens)
    return (2 * precision * recall) / (precision + recall)


METRIC_CASES = [
    ("Summerlin, Nevada", "Summerlin"),
    ("The Russian Civil War", "October 1922"),
    ("1993", "1957"),
    ("Sean Yseult", "Sean Yseult."),
    ("October 1922", "October 1922"),
    ("", "October 1922"),
    ("", ""),
    ("a an the", "an"),
    ("U.S. soldier", "US soldier!"),
    ("dog dog cat", "dog cat cat"),
]


def test_criterion_2_metric_oracle():
    """exact_match/f1 agree with an official-style scorer to 1e-9."""
    assert len(METRIC_CASES) == 10
    for pred, gold in METRIC_CASES:
        assert abs(exact_match(pred, gold) - _reference_em(pred, gold)) < 1e-9, (pred, gold)
        assert abs(f1(pred, gold) - _reference_f1(pred, gold)) < 1e-9, (pred, gold)
    assert abs(f1("Summerlin, Nevada", "Summerlin") - 2 / 3) < 1e-9


# --------------------------------------- criterion 3: pointer-gen math


def test_criterion_3_pointer_generator_math():
    """Mixture normalization on 1000 random decode steps, exact degenerate
    gates, and a finite-difference gradient check on a tiny model."""
    vocab = build_vocab([["tok%d" % i for i in range(12)]], max_size=17)

    # 1000 random decode steps sum to one within 1e-6
    steps_checked = 0
    for trial in range(10):
        torch.manual_seed(300 + trial)
        net = PointerGeneratorNet(vocab.size, embed_dim=12, hidden_dim=10, coverage=bool(trial % 2))
        g = torch.Generator().manual_seed(trial)
        ids = torch.randint(5, vocab.size, (10, 7), generator=g)
        ext = ids.clone()
        ids[:, 2] = 1  # an UNK position
        ext[:, 2] = vocab.size
        from followupqa.seq2seq import EncodedBatch

        batch = EncodedBatch(ids, torch.zeros_like(ids), ext, torch.ones_like(ids, dtype=torch.bool), 1)
        enc, state = net.encode(batch)
        with torch.no_grad():
            for _ in range(10):
                out, state = net.step(state, enc)
                assert torch.all((out.mixture.sum(dim=1) - 1.0).abs() < 1e-6)
                steps_checked += out.mixture.shape[0]
                state = state.with_prev_token(out.vocab_dist.argmax(dim=1))
    assert steps_checked >= 1000

    # degenerate gates are exact
    vocab_dist = torch.softmax(torch.randn(4, vocab.size), dim=1)
    attention = torch.softmax(torch.randn(4, 6), dim=1)
    ext = torch.randint(0, vocab.size + 2, (4, 6))
    open_gate = copy_mixture(vocab_dist, attention, torch.ones(4, 1), ext, 2)
    assert torch.equal(open_gate[:, : vocab.size], vocab_dist)
    one_hot_attention = torch.zeros(1, 6)
    one_hot_attention[0, 4] = 1.0
    closed = copy_mixture(
        torch.softmax(torch.randn(1, vocab.size), dim=1),
        one_hot_attention,
        torch.zeros(1, 1),
        torch.full((1, 6), vocab.size + 1),
        2,
    )
    expected = torch.zeros(1, vocab.size + 2)
    expected[0, vocab.size + 1] = 1.0
    assert torch.equal(closed, expected)

    # finite-difference gradient check, all parameter groups
    torch.manual_seed(17)
    net = PointerGeneratorNet(vocab.size, embed_dim=6, hidden_dim=8, coverage=True).double()
    source = encode_source(["tok1", "zzz", "tok3", "tok4"], vocab)
    rows = [make_row(source, (0, 1, 0, 0), ["zzz", "tok3", "tok5"], vocab, 6)]
    batch, tgt_in, tgt_out, tgt_mask = collate(rows)

    def loss_fn():
        loss, _ = sequence_nll(net, batch, tgt_in, tgt_out, tgt_mask, coverage_weight=0.5)
        return loss

    loss_fn().backward()
    eps = 1e-5
    for name, param in net.named_parameters():
        flat = param.data.view(-1)
        for k in range(min(flat.numel(), 3)):
            orig = float(flat[k])
            with torch.no_grad():
                flat[k] = orig + eps
                up = float(loss_fn())
                flat[k] = orig - eps
                down = float(loss_fn())
                flat[k] = orig
            fd = (up - down) / (2 * eps)
            an = float(param.grad.view(-1)[k])
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom < 1e-4, f"{name}[{k}]: fd={fd} analytic={an}"


# --------------------------------------- criterion 4: controller rules


def test_criterion_4_controller_dataset_rules():
    """build_controller_dataset reproduces the triple-construction rules on
    a five-example fixture with a scripted extractor."""
    examples = []
    for i in range(5):
        p1 = Premise(f"band-{i}", (f"Singer {i} leads Band {i}.",))
        p2 = Premise(f"person-{i}", (f"Singer {i} was born in City{i}.",))
        distractors = tuple(Premise(f"x-{i}-{j}", (f"Noise {j}.",)) for j in range(8))
        examples.append(
            BridgeExample(f"e{i}", f"who leads Band {i}?", f"City{i}", p1, p2, distractors)
        )
    table = {}
    answered = {0, 2, 3}  # extractor overlaps the gold answer only here
    for i in sorted(answered):
        ex = examples[i]
        table[(ex.q1, ex.p2_hat.title)] = span_for(ex.p2_hat, ex.answer)
    triples = build_controller_dataset(examples, ScriptedExtractor(table))
    assert len(triples) == 5 * 10
    for i, ex in enumerate(examples):
        mine = {t.premise.title: t.label for t in triples if t.example_id == ex.id}
        assert mine[ex.p1_hat.title] == "Intermediate"
        assert mine[ex.p2_hat.title] == ("Final" if i in answered else "Irrel")
        assert all(mine[d.title] == "Irrel" for d in ex.distractors)
        labels = [t.label for t in triples if t.example_id == ex.id]
        assert labels.count("Intermediate") == 1
        assert labels.count("Final") == (1 if i in answered else 0)


# --------------------------------------- criterion 5: fallback dominance


def test_criterion_5_fallback_dominance(corpus, dev_oracle_answers):
    """q1_else_q2 dominates q2_equals_q1 pointwise, on the trained dev run
    and on randomized fixtures."""
    by_id = {ex.id: ex for ex in corpus["dev"]}
    baseline = {a.example_id: a.answer for a in dev_oracle_answers["q2_equals_q1"]}
    fallback = {a.example_id: a.answer for a in dev_oracle_answers["q1_else_q2"]}
    for ex_id, ex in by_id.items():
        assert exact_match(fallback[ex_id], ex.answer) >= exact_match(baseline[ex_id], ex.answer)
        assert f1(fallback[ex_id], ex.answer) >= f1(baseline[ex_id], ex.answer)
    base_report = evaluate(baseline, corpus["dev"], "q2_equals_q1")
    fall_report = evaluate(fallback, corpus["dev"], "q1_else_q2")
    assert fall_report.em >= base_report.em
    assert fall_report.f1 >= base_report.f1

    # randomized fixtures: scripted extractors with arbitrary null patterns
    from stubs import ScriptedFollowup
    from followupqa.extractor import SpanPrediction

    rng = random.Random(SEED)
    for trial in range(100):
        p1 = Premise("b", ("Lead singer sentence.",))
        p2 = Premise("p", (f"Born in Place{trial}.",))
        ex = BridgeExample(f"r{trial}", "original question?", f"Place{trial}", p1, p2, ())
        q2 = "rewritten question?"
        table = {}
        if rng.random() < 0.6:
            text = rng.choice([ex.answer, "garbage text"])
            table[(ex.q1, "p")] = (
                span_for(p2, text) if text == ex.answer else SpanPrediction(text, 0, 1, 1.0, False)
            )
        if rng.random() < 0.6:
            text = rng.choice([ex.answer, "junk"])
            table[(q2, "p")] = (
                span_for(p2, text) if text == ex.answer else SpanPrediction(text, 0, 1, 1.0, False)
            )
        m = PipelineModels(
            extractor=ScriptedExtractor(table), followup=ScriptedFollowup({(ex.q1, "b"): q2})
        )
        base = run_oracle(ex, "q2_equals_q1", m).answer
        fall = run_oracle(ex, "q1_else_q2", m).answer
        assert exact_match(fall, ex.answer) >= exact_match(base, ex.answer)
        assert f1(fall, ex.answer) >= f1(base, ex.answer)


# --------------------------------- criterion 6: synthetic end-to-end


def test_criterion_6_synthetic_end_to_end(corpus, models):
    """Oracle trained_q2 reaches >= 90% EM on the memorized micro-corpus."""
    answers = [run_oracle(ex, "trained_q2", models) for ex in corpus["train"]]
    report = evaluate({a.example_id: a.answer for a in answers}, corpus["train"], "trained_q2")
    assert report.count == TRAIN_QUESTIONS
    assert report.em >= 90.0, f"trained_q2 EM {report.em:.1f} < 90"


# --------------------------------- criterion 7: directional checks


def test_criterion_7_directional_checks(corpus, dev_oracle_answers, dev_full_answers):
    """Desk-scale substitute for the reported full-size numbers: the
    two-hop system beats the one-hop baseline by >= 2 EM, and the fallback
    oracle beats the no-rewrite oracle by >= 4 F1."""
    dev = corpus["dev"]
    one = evaluate({a.example_id: a.answer for a in dev_full_answers[1]}, dev, "one_hop")
    two = evaluate({a.example_id: a.answer for a in dev_full_answers[2]}, dev, "two_hop")
    assert two.em - one.em >= 2.0, f"two-hop {two.em:.1f} vs one-hop {one.em:.1f}"

    baseline = evaluate(
        {a.example_id: a.answer for a in dev_oracle_answers["q2_equals_q1"]}, dev, "q2_equals_q1"
    )
    fallback = evaluate(
        {a.example_id: a.answer for a in dev_oracle_answers["q1_else_q2"]}, dev, "q1_else_q2"
    )
    assert fallback.f1 - baseline.f1 >= 4.0, (
        f"q1_else_q2 F1 {fallback.f1:.1f} vs q2_equals_q1 F1 {baseline.f1:.1f}"
    )


# --------------------------------- criterion 8: interpretability audit


def test_criterion_8_trace_replay(corpus, models, dev_full_answers):
    """Every emitted answer's trace replays to the same answer on 100
    random dev examples."""
    by_id = {ex.id: ex for ex in corpus["dev"]}
    answers = dev_full_answers[2]
    rng = random.Random(SEED)
    picked = rng.sample(answers, min(100, len(answers)))
    for predicted in picked:
        result = replay_trace(predicted.trace, by_id[predicted.example_id], models)
        assert result.matches, (predicted.example_id, result.mismatches)
        assert result.answer == predicted.answer


# ------------------------------------------- supporting sanity check


def test_followup_quality_answerability_on_trained_models(corpus, models):
    """Followups from the overfit generator stay answerable against the
    gold answer-bearing premise."""
    from followupqa.metrics import followup_quality

    subset = corpus["train"][:50]
    followups = {ex.id: models.followup.generate(ex.q1, ex.p1_hat) for ex in subset}
    report = followup_quality(subset, followups, models.extractor, models.controller)
    assert report.answerability >= 0.9
    assert 0.0 <= report.rejection <= 1.0 and 0.0 <= report.recognition <= 1.0
