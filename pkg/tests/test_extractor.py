import pytest
from sklearn.exceptions import NotFittedError

from followupqa.corpus import Premise, SquadExample
from followupqa.extractor import FrozenModelError, SingleHopExtractor

PEOPLE = [
    ("alice reed", "karaton"),
    ("brian cole", "velmora"),
    ("clara hayes", "brintola"),
    ("derek walsh", "quathis"),
    ("elena finch", "merdale"),
    ("felix sloan", "sorvino"),
    ("grace drake", "taldora"),
    ("henry quinn", "ullvik"),
]


def _title(words):
    return " ".join(w.capitalize() for w in words.split())


def sentence(person, city):
    return f"{_title(person)} was born in {_title(city)}."


def question(person):
    return f"Where was {_title(person)} born?"


N_TRAINED = 5  # entities 0..4 appear in training; every pair is duplicated


def _sentences(indices):
    return " ".join(sentence(*PEOPLE[j]) for j in indices)


def templated_squad():
    """20 templated QA pairs, each duplicated so a held-out dev copy always
    has a trained twin; memorization is the point. Contexts hold three
    sentences with the answer slot varying so extraction is not tied to
    one absolute offset."""
    examples = []
    for r in range(2):
        for i, (person, city) in enumerate(PEOPLE[:N_TRAINED]):
            fillers = [(i + 1) % N_TRAINED, (i + 2) % N_TRAINED]
            slots = [fillers[0], i, fillers[1]] if r == 0 else [i, fillers[0], fillers[1]]
            ctx = _sentences(slots)
            examples.append(
                SquadExample(f"a{r}-{i}", question(person), ctx, _title(city), ctx.index(_title(city)), False)
            )
        for i in range(N_TRAINED):
            asked = PEOPLE[(i + 1) % N_TRAINED][0]
            ctx = _sentences([i, (i + 2) % N_TRAINED, (i + 3) % N_TRAINED])
            examples.append(SquadExample(f"imp{r}-{i}", question(asked), ctx, "", -1, True))
    assert len(examples) == 20
    return examples


def tiny_extractor(**overrides):
    params = dict(
        backend="transformer",
        embed_dim=32,
        hidden_dim=32,
        max_steps=600,
        batch_size=16,
        learning_rate=2e-3,
        dev_fraction=0.15,
        seed=13,
    )
    params.update(overrides)
    return SingleHopExtractor(**params)


@pytest.fixture(scope="module")
def overfit_model():
    return tiny_extractor().fit(templated_squad())


class TestFitContracts:
    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            tiny_extractor().fit([])

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="unknown encoder backend"):
            tiny_extractor(backend="nope", max_steps=5).fit(templated_squad())

    def test_refits_are_refused(self, overfit_model):
        with pytest.raises(FrozenModelError):
            overfit_model.fit(templated_squad())

    def test_predict_requires_fit(self):
        with pytest.raises(NotFittedError):
            tiny_extractor().predict("Where?", Premise("t", ("text",)))

    def test_overfit_dev_em(self, overfit_model):
        assert overfit_model.report_["dev_em"] >= 0.9
        assert overfit_model.frozen_ is True


class TestPredict:
    def test_extracts_known_answer(self, overfit_model):
        person, city = PEOPLE[0]
        premise = Premise(_title(person), (sentence(person, city),))
        pred = overfit_model.predict(question(person), premise)
        assert not pred.is_null
        assert pred.text == _title(city)

    def test_offsets_match_text(self, overfit_model):
        for person, city in PEOPLE[:N_TRAINED]:
            premise = Premise(_title(person), (sentence(person, city),))
            pred = overfit_model.predict(question(person), premise)
            if not pred.is_null:
                assert premise.paragraph_text[pred.start : pred.end] == pred.text

    def test_empty_premise_is_null(self, overfit_model):
        pred = overfit_model.predict("Where was anyone born?", Premise("empty", ("",)))
        assert pred.is_null and pred.text == ""

    def test_empty_question_rejected(self, overfit_model):
        with pytest.raises(ValueError):
            overfit_model.predict("", Premise("t", ("text",)))

    def test_deterministic(self, overfit_model):
        person, city = PEOPLE[2]
        premise = Premise(_title(person), (sentence(person, city),))
        a = overfit_model.predict(question(person), premise)
        b = overfit_model.predict(question(person), premise)
        assert a == b

    def test_confidences_rank_premises(self, overfit_model):
        person, _ = PEOPLE[1]
        matched = Premise("m", (_sentences([1, 2, 3]),))
        mismatched = Premise("x", (_sentences([0, 2, 3]),))
        conf_match = overfit_model.predict(question(person), matched).confidence
        conf_miss = overfit_model.predict(question(person), mismatched).confidence
        assert conf_match > conf_miss

    def test_null_threshold_monotone(self, overfit_model):
        person, city = PEOPLE[3]
        premise = Premise(_title(person), (sentence(person, city),))
        saved = overfit_model.null_threshold
        try:
            previous_null = False
            for tau in (-1e6, -1.0, 0.0, 1.0, 1e6):
                overfit_model.null_threshold = tau
                is_null = overfit_model.predict(question(person), premise).is_null
                assert previous_null <= is_null  # once null, stays null as tau rises
                previous_null = is_null
            assert previous_null  # at tau = 1e6 everything is null
        finally:
            overfit_model.null_threshold = saved


def all_pairs_squad():
    """Single-sentence contexts covering every (question, page) pairing, so
    a model trained here discriminates any one-sentence window exactly."""
    examples = []
    for i, (person, city) in enumerate(PEOPLE[:N_TRAINED]):
        ctx = sentence(person, city)
        for r in range(2):
            examples.append(
                SquadExample(f"wa{r}-{i}", question(person), ctx, _title(city), ctx.index(_title(city)), False)
            )
        for j in range(N_TRAINED):
            if j != i:
                examples.append(SquadExample(f"wi-{i}-{j}", question(PEOPLE[j][0]), ctx, "", -1, True))
    return examples


@pytest.fixture(scope="module")
def window_model():
    # one-sentence windows: max_input = question(6) + specials(3) + width(7)
    return tiny_extractor(max_input_tokens=16, window_stride=7, max_steps=500).fit(all_pairs_squad())


def long_premise():
    parts = [sentence(*PEOPLE[j]) + " " for j in (0, 1, 2, 3, 0, 1, 2, 3)]
    person, city = PEOPLE[4]
    return Premise("long", tuple(parts) + (sentence(person, city),)), person, city


class TestWindowing:
    def test_default_budget_gives_single_window(self, overfit_model):
        premise, person, _ = long_premise()
        windows = overfit_model._windows(question(person), premise.paragraph_text)
        assert len(windows) == 1

    def test_long_premise_is_windowed(self, window_model):
        premise, person, city = long_premise()
        windows = window_model._windows(question(person), premise.paragraph_text)
        assert len(windows) == 9  # one per sentence
        pred = window_model.predict(question(person), premise)
        assert not pred.is_null
        assert pred.text == _title(city)
        assert premise.paragraph_text[pred.start : pred.end] == pred.text

    def test_best_window_wins_by_raw_score(self, window_model):
        # the cross-window ranking must match per-window raw scores
        premise, person, _ = long_premise()
        pred = window_model.predict(question(person), premise)
        confidences = []
        for w in window_model._windows(question(person), premise.paragraph_text):
            sub = Premise("w", (premise.paragraph_text[w.offsets[0][0] : w.offsets[-1][1]],))
            confidences.append(window_model.predict(question(person), sub).confidence)
        assert abs(pred.confidence - max(confidences)) < 1e-4

    def test_question_survives_in_every_window(self, overfit_model):
        q = "Where was Alice Reed born?"
        text = " ".join(s for s, _ in [(sentence(p, c), 0) for p, c in PEOPLE]) * 2
        saved = (overfit_model.max_input_tokens, overfit_model.window_stride)
        try:
            overfit_model.max_input_tokens = 32
            overfit_model.window_stride = 8
            windows = overfit_model._windows(q, text)
            q_len = len(overfit_model._question_ids(q))
            for w in windows:
                assert w.ids[1 : 1 + q_len] == overfit_model._question_ids(q)
        finally:
            overfit_model.max_input_tokens, overfit_model.window_stride = saved


class TestPersistence:
    def test_save_load_roundtrip(self, overfit_model, tmp_path):
        overfit_model.save(tmp_path / "ckpt", extra={"config_hash": "abc"})
        loaded = SingleHopExtractor.load(tmp_path / "ckpt")
        person, city = PEOPLE[3]
        premise = Premise(_title(person), (sentence(person, city),))
        assert loaded.predict(question(person), premise) == overfit_model.predict(question(person), premise)
        with pytest.raises(FrozenModelError):
            loaded.fit(templated_squad())

    def test_manifest_contents(self, overfit_model, tmp_path):
        import json

        overfit_model.save(tmp_path / "ckpt", extra={"config_hash": "abc"})
        manifest = json.loads((tmp_path / "ckpt" / "manifest.json").read_text())
        assert manifest["kind"] == "extractor"
        assert manifest["frozen"] is True
        assert manifest["config_hash"] == "abc"
        assert manifest["params"]["backend"] == "transformer"
