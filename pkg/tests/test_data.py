"""Normalization, vocabulary, record validation, and JSONL IO."""

import json

import pytest

from hypevents.data import (CLS_ID, E_ID, M_ID, PAD_ID, S_ID, SEP_ID, UNK_ID,
                            AbductiveInstance, DataError, Story, Vocab,
                            VocabFormatError, detokenize, load_instances,
                            load_stories, normalize, split_tokens, tokenize,
                            write_instances, write_stories)


def test_special_ids_are_pinned():
    assert (S_ID, E_ID, M_ID, CLS_ID, SEP_ID, PAD_ID, UNK_ID) == (0, 1, 2, 3, 4, 5, 6)


def test_normalize_lowercase_nfc_whitespace():
    assert normalize("  Hello   WORLD ") == "hello world"
    # e + combining acute composes to a single character
    assert normalize("café") == "café"
    assert normalize("a\tb\nc") == "a b c"


def test_normalize_keeps_special_literals_canonical():
    assert normalize("[cls] Go [sep]") == "[CLS] go [SEP]"
    assert normalize("[PAD]x") == "[PAD]x"


def test_split_tokens_punctuation_and_specials():
    assert split_tokens("Dotty wasn't grumpy.") == [
        "dotty", "wasn", "'", "t", "grumpy", "."]
    assert split_tokens("[CLS] a [SEP] b [SEP]") == ["[CLS]", "a", "[SEP]", "b", "[SEP]"]
    assert split_tokens("one,two..") == ["one", ",", "two", ".", "."]
    assert split_tokens("x_y") == ["x", "_", "y"]


def test_vocab_build_order_and_min_count():
    v = Vocab.build(["b b b a a c", "a"], min_count=1)
    # specials first, then frequency descending, ties lexicographic
    assert v.tokens()[:7] == list(("[S]", "[E]", "[M]", "[CLS]", "[SEP]", "[PAD]", "[UNK]"))
    assert v.tokens()[7:] == ["a", "b", "c"]
    v2 = Vocab.build(["b b b a a c"], min_count=2)
    assert v2.tokens()[7:] == ["b", "a"]
    assert "c" not in v2


def test_vocab_build_empty_corpus_raises():
    with pytest.raises(DataError):
        Vocab.build([])


def test_vocab_encode_unknown_to_unk_and_decode_range():
    v = Vocab.build(["a b"])
    assert v.encode(["a", "zzz"]) == [v.id_of("a"), UNK_ID]
    with pytest.raises(DataError):
        v.decode([len(v)])


def test_tokenize_detokenize_round_trip():
    v = Vocab.build(["the cat sat on the mat ."])
    text = "the cat sat . [E]"
    assert detokenize(tokenize(text, v), v) == text


def test_vocab_save_load_round_trip(tmp_path):
    v = Vocab.build(["alpha beta beta gamma ."])
    path = tmp_path / "vocab.txt"
    v.save(path)
    raw = path.read_text()
    assert raw.startswith("HYPEVENTS-VOCAB v1\n")
    assert "[S]\t0" in raw
    loaded = Vocab.load(path)
    assert loaded.tokens() == v.tokens()


def test_vocab_load_rejects_bad_header(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("HYPEVENTS-VOCAB v2\n[S]\t0\n")
    with pytest.raises(VocabFormatError) as exc:
        Vocab.load(path)
    assert "HYPEVENTS-VOCAB v1" in str(exc.value)


def test_vocab_load_rejects_out_of_order_ids(tmp_path):
    path = tmp_path / "vocab.txt"
    lines = ["HYPEVENTS-VOCAB v1"]
    lines += [f"{t}\t{i}" for i, t in enumerate(
        ("[S]", "[E]", "[M]", "[CLS]", "[SEP]", "[PAD]", "[UNK]"))]
    lines.append("word\t9")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(VocabFormatError) as exc:
        Vocab.load(path)
    assert ":9:" in str(exc.value)  # the offending line number


def _story(**kw):
    base = dict(premise="p one .", initial="q two .",
                ending=("e one .", "e two .", "e three ."))
    base.update(kw)
    return Story(**base)


def test_story_validation():
    s = _story()
    assert s.sentences() == ("p one .", "q two .", "e one .", "e two .", "e three .")
    assert not s.has_counterfactual
    with pytest.raises(DataError):
        _story(ending=("only one .", "two ."))
    with pytest.raises(DataError):
        _story(counterfactual="cf .")  # missing edited ending
    with pytest.raises(DataError):
        _story(premise="   ")


def test_story_counterfactual_branch():
    s = _story(counterfactual="cf two .",
               edited_ending=("f one .", "f two .", "f three ."))
    assert s.sentences("counterfactual") == (
        "p one .", "cf two .", "f one .", "f two .", "f three .")
    with pytest.raises(DataError):
        _story().sentences("counterfactual")


def test_instance_validation():
    inst = AbductiveInstance(obs1="a .", obs2="b .", hyp1="c .", hyp2="d .", label=2)
    assert inst.hypothesis(2) == "d ."
    assert not inst.has_generations
    with pytest.raises(DataError):
        AbductiveInstance(obs1="a", obs2="b", hyp1="c", hyp2="d", label=3)
    with pytest.raises(DataError):
        AbductiveInstance(obs1="", obs2="b", hyp1="c", hyp2="d")


def test_load_stories_accepts_list_and_string_endings(tmp_path):
    path = tmp_path / "stories.jsonl"
    records = [
        {"premise": "p .", "initial": "i .",
         "original_ending": ["a .", "b .", "c ."]},
        {"premise": "p .", "initial": "i .",
         "original_ending": "First here. Then there! Done now?",
         "counterfactual": "i2 .",
         "edited_ending": ["x .", "y .", "z ."]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    stories = load_stories(path)
    assert len(stories) == 2
    assert stories[1].ending == ("First here.", "Then there!", "Done now?")
    assert stories[1].has_counterfactual


def test_load_stories_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"premise": "p .", "initial": "i .",
                       "original_ending": ["a .", "b .", "c ."]})
    bad = json.dumps({"premise": "p .", "initial": "i .",
                      "original_ending": "One. Two. Three. Four."})
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(DataError) as exc:
        load_stories(path)
    assert ":2:" in str(exc.value)
    assert "3 sentences" in str(exc.value)

    path.write_text(good + "\n{not json\n")
    with pytest.raises(DataError) as exc:
        load_stories(path)
    assert ":2:" in str(exc.value)

    path.write_text(json.dumps({"premise": "p .", "initial": "i ."}) + "\n")
    with pytest.raises(DataError) as exc:
        load_stories(path)
    assert "original_ending" in str(exc.value)


def test_load_instances_rejects_bad_label(tmp_path):
    path = tmp_path / "anli.jsonl"
    path.write_text(json.dumps(
        {"obs1": "a .", "obs2": "b .", "hyp1": "c .", "hyp2": "d .", "label": 3}) + "\n")
    with pytest.raises(DataError) as exc:
        load_instances(path)
    assert ":1:" in str(exc.value)
    assert "label" in str(exc.value)


def test_instance_write_load_round_trip(tmp_path):
    path = tmp_path / "anli.jsonl"
    original = [
        AbductiveInstance(obs1="a .", obs2="b .", hyp1="c .", hyp2="d .",
                          label=1, gen1="g1 .", gen2="g2 .", category="spatial",
                          instance_id="x0"),
        AbductiveInstance(obs1="a .", obs2="b .", hyp1="c .", hyp2="d ."),
    ]
    write_instances(path, original)
    assert load_instances(path) == original
    # unlabeled record carries no label key at all
    second = json.loads(path.read_text().splitlines()[1])
    assert "label" not in second and "gen1" not in second


def test_story_write_load_round_trip(tmp_path):
    path = tmp_path / "stories.jsonl"
    stories = [
        _story(story_id="s0"),
        _story(counterfactual="cf .", edited_ending=("x .", "y .", "z .")),
    ]
    write_stories(path, stories)
    assert load_stories(path) == stories
