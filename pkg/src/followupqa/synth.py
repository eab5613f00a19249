"""Synthetic two-hop micro-corpus.

Generates a small closed world of bands, lead singers, and birth cities,
then writes HotpotQA-format bridge questions ("In what city was the lead
singer of X born?") and a SQuAD-2.0-format single-hop corpus over the same
facts (answerable templates plus mismatched and original-question
impossibles). The composed two-hop mapping is learnable by memorization
with tiny models, which makes end-to-end pipeline behavior testable on a
laptop in minutes.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import dataclass
from pathlib import Path

FIRST_NAMES = (
    "alice brian clara derek elena felix grace henry "
    "irene jonas karen louis mara nolan olga pedro quinn rosa"
).split()
LAST_NAMES = (
    "reed cole hayes monroe walsh finch sloan drake "
    "pierce ramos stone tate vance webb yule ash dunn"
).split()
ADJECTIVES = (
    "crimson silver golden violet emerald amber cobalt scarlet "
    "ivory onyx coral indigo jade ruby topaz slate umber zinc"
).split()
NOUNS = (
    "foxes owls wolves ravens tigers falcons bears lions "
    "otters herons badgers lynxes moles storks cranes weasels hawks"
).split()
CITIES = (
    "karaton velmora brintola quathis merdale sorvino "
    "taldora ullvik pavetta zenara fornell ryeport"
).split()

FORM_B_FRACTION = 0.35
IMPOSSIBLE_PER_ENTITY = 1
ORIGINAL_IMPOSSIBLE_FRACTION = 0.5
NUM_DISTRACTORS = 8


def _title(words: str) -> str:
    return " ".join(w.capitalize() for w in words.split())


@dataclass(frozen=True)
class Fact:
    """One band / lead singer / birth city chain."""

    band: str
    person: str
    city: str

    @property
    def band_title(self) -> str:
        return _title(self.band)

    @property
    def person_title(self) -> str:
        return _title(self.person)

    @property
    def band_sentence(self) -> str:
        return f"{self.person_title} is the lead singer of {self.band_title}."

    @property
    def person_sentence(self) -> str:
        return f"{self.person_title} was born in {_title(self.city)}."

    def question(self, form_b: bool) -> str:
        if form_b:
            return (
                f"In what city was {self.person_title}, "
                f"the lead singer of {self.band_title}, born?"
            )
        return f"In what city was the lead singer of {self.band_title} born?"

    @property
    def answer(self) -> str:
        return _title(self.city)


@dataclass(frozen=True)
class World:
    facts: tuple[Fact, ...]


def build_world(num_facts: int, seed: int) -> World:
    """A functional world: each band has exactly one singer, each person
    one birth city; vocabulary stays near 100 distinct words."""
    max_facts = min(len(FIRST_NAMES) * len(LAST_NAMES), len(ADJECTIVES) * len(NOUNS))
    if num_facts > max_facts:
        raise ValueError(f"at most {max_facts} facts available, requested {num_facts}")
    rng = random.Random(seed)
    people = [f"{f} {l}" for f in FIRST_NAMES for l in LAST_NAMES]
    bands = [f"{a} {n}" for a in ADJECTIVES for n in NOUNS]
    rng.shuffle(people)
    rng.shuffle(bands)
    facts = tuple(
        Fact(band=bands[i], person=people[i], city=rng.choice(CITIES)) for i in range(num_facts)
    )
    return World(facts)


def _hotpot_entry(world: World, index: int, example_id: str, rng: random.Random, form_b: bool) -> dict:
    fact = world.facts[index]
    others = [i for i in range(len(world.facts)) if i != index]
    rng.shuffle(others)
    pages = [
        (fact.band_title, [fact.band_sentence]),
        (fact.person_title, [fact.person_sentence]),
    ]
    for j in others[: NUM_DISTRACTORS // 2]:
        pages.append((world.facts[j].band_title, [world.facts[j].band_sentence]))
    for j in others[NUM_DISTRACTORS // 2 : NUM_DISTRACTORS]:
        pages.append((world.facts[j].person_title, [world.facts[j].person_sentence]))
    rng.shuffle(pages)
    return {
        "_id": example_id,
        "question": fact.question(form_b),
        "answer": fact.answer,
        "type": "bridge",
        "supporting_facts": [[fact.band_title, 0], [fact.person_title, 0]],
        "context": [[title, sentences] for title, sentences in pages],
    }


def hotpot_entries(world: World, start: int, count: int, id_prefix: str, seed: int) -> list[dict]:
    rng = random.Random(seed)
    entries = []
    for i in range(start, start + count):
        form_b = rng.random() < FORM_B_FRACTION
        entries.append(_hotpot_entry(world, i, f"{id_prefix}-{i:04d}", rng, form_b))
    return entries


def _qa(qid: str, question: str, context: str, answer: str | None) -> dict:
    if answer is None:
        return {"id": qid, "question": question, "answers": [], "is_impossible": True}
    start = context.index(answer)
    return {
        "id": qid,
        "question": question,
        "answers": [{"text": answer, "answer_start": start}],
        "is_impossible": False,
    }


def squad_data(world: World, seed: int) -> dict:
    """Single-hop corpus over the world's pages.

    Answerable templates teach span extraction; mismatched-entity and
    original-two-hop questions over the person page teach the null answer,
    so the extractor only answers when the questioned entity is present.
    """
    rng = random.Random(seed)
    paragraphs = []
    n = len(world.facts)
    for i, fact in enumerate(world.facts):
        other = world.facts[(i + 1 + rng.randrange(n - 1)) % n] if n > 1 else fact
        band_qas = [
            _qa(f"sq-band-{i}", f"Who is the lead singer of {fact.band_title}?", fact.band_sentence, fact.person_title),
        ]
        for k in range(IMPOSSIBLE_PER_ENTITY):
            if other is not fact:
                band_qas.append(
                    _qa(f"sq-band-imp-{i}-{k}", f"Who is the lead singer of {other.band_title}?", fact.band_sentence, None)
                )
        person_qas = [
            _qa(f"sq-born-{i}", f"Where was {fact.person_title} born?", fact.person_sentence, fact.answer),
            _qa(f"sq-city-{i}", f"In what city was {fact.person_title} born?", fact.person_sentence, fact.answer),
            _qa(
                f"sq-full-{i}",
                fact.question(form_b=True),
                fact.person_sentence,
                fact.answer,
            ),
        ]
        for k in range(IMPOSSIBLE_PER_ENTITY):
            if other is not fact:
                person_qas.append(
                    _qa(f"sq-born-imp-{i}-{k}", f"Where was {other.person_title} born?", fact.person_sentence, None)
                )
        if rng.random() < ORIGINAL_IMPOSSIBLE_FRACTION:
            person_qas.append(
                _qa(f"sq-orig-imp-{i}", fact.question(form_b=False), fact.person_sentence, None)
            )
        paragraphs.append({"context": fact.band_sentence, "qas": band_qas})
        paragraphs.append({"context": fact.person_sentence, "qas": person_qas})
    return {"version": "v2.0-synth", "data": [{"title": "synthetic-world", "paragraphs": paragraphs}]}


def write_corpus(out_dir, num_train: int = 200, num_dev: int = 40, seed: int = 13) -> dict[str, Path]:
    """Write hotpot_train.json, hotpot_dev.json, and squad_train.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    world = build_world(num_train + num_dev, seed)
    paths = {
        "hotpot_train": out_dir / "hotpot_train.json",
        "hotpot_dev": out_dir / "hotpot_dev.json",
        "squad_train": out_dir / "squad_train.json",
    }
    with open(paths["hotpot_train"], "w", encoding="utf-8") as f:
        json.dump(hotpot_entries(world, 0, num_train, "synth-train", seed + 1), f, indent=1)
    with open(paths["hotpot_dev"], "w", encoding="utf-8") as f:
        json.dump(hotpot_entries(world, num_train, num_dev, "synth-dev", seed + 2), f, indent=1)
    with open(paths["squad_train"], "w", encoding="utf-8") as f:
        json.dump(squad_data(world, seed + 3), f, indent=1)
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate the synthetic two-hop micro-corpus.")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--num-train", type=int, default=200)
    parser.add_argument("--num-dev", type=int, default=40)
    parser.add_argument("--seed", type=int, default=13)
    args = parser.parse_args(argv)
    paths = write_corpus(args.out_dir, args.num_train, args.num_dev, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
