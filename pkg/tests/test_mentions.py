import pytest
from hypothesis import given, settings, strategies as st

from corefkit.mentions import (
    TAGS,
    TaggedWord,
    TaggingError,
    detect_mention_groups,
    heuristic_tag,
    parse_tagged_line,
    tag_words,
)


def test_heuristic_golden_sentence():
    words = "Claire filed a defense because she was tired and quickly famous .".split()
    expected = ["PROPN", "VERB", "OTHER", "NOUN", "OTHER", "PRON", "VERB",
                "VERB", "OTHER", "ADV", "ADJ", "OTHER"]
    assert [tw.tag for tw in tag_words(words)] == expected


def test_empty_input():
    assert tag_words([]) == []
    assert detect_mention_groups([]) == []


def test_pretagged_pass_through():
    tagged = tag_words(["Claire", "sued"], "pretagged", ["PROPN", "VERB"])
    assert tagged == [TaggedWord("Claire", "PROPN"), TaggedWord("sued", "VERB")]


def test_pretagged_count_mismatch():
    with pytest.raises(TaggingError, match="2 tags for 3 words"):
        tag_words(["a", "b", "c"], "pretagged", ["NOUN", "NOUN"])


def test_missing_tag_in_line():
    with pytest.raises(TaggingError, match="filed"):
        parse_tagged_line("Claire/PROPN filed")
    with pytest.raises(TaggingError):
        parse_tagged_line("Claire/XYZ")


def test_parse_tagged_line_slash_in_word():
    assert parse_tagged_line("1/2/OTHER") == [TaggedWord("1/2", "OTHER")]


def test_callable_tagger():
    assert [t.tag for t in tag_words(["x", "y"], lambda w: "NOUN")] == ["NOUN", "NOUN"]


def test_repeated_name_forms_one_group():
    tagged = parse_tagged_line("Claire/PROPN filed/VERB a/OTHER defense/NOUN because/OTHER Claire/PROPN was/VERB sued/VERB")
    groups = detect_mention_groups(tagged)
    by_key = {g.key: g for g in groups}
    assert by_key["claire"].occurrences == [0, 5] and by_key["claire"].eligible
    assert by_key["defense"].occurrences == [3] and not by_key["defense"].eligible


def test_case_folding():
    tagged = [TaggedWord(w, "PROPN") for w in ("jane", "JANE", "Jane")]
    groups = detect_mention_groups(tagged)
    assert len(groups) == 1 and groups[0].occurrences == [0, 1, 2]


def test_single_noun_not_eligible():
    groups = detect_mention_groups([TaggedWord("defense", "NOUN")])
    assert [g.eligible for g in groups] == [False]


tagged_st = st.lists(
    st.builds(TaggedWord, st.sampled_from(["a", "b", "C", "c", "dd"]), st.sampled_from(TAGS)), max_size=30
)


@settings(max_examples=100, deadline=None)
@given(tagged=tagged_st)
def test_groups_partition_nouns(tagged):
    groups = detect_mention_groups(tagged)
    seen = [i for g in groups for i in g.occurrences]
    nouns = [i for i, t in enumerate(tagged) if t.tag in ("NOUN", "PROPN")]
    assert sorted(seen) == nouns and len(seen) == len(set(seen))
    for g in groups:
        assert {tagged[i].word.casefold() for i in g.occurrences} == {g.key}


@settings(max_examples=100, deadline=None)
@given(tagged=tagged_st, word=st.sampled_from(["a", "b", "c"]), tag=st.sampled_from(["NOUN", "PROPN"]))
def test_adding_occurrence_keeps_eligibility(tagged, word, tag):
    before = {g.key for g in detect_mention_groups(tagged) if g.eligible}
    after = {g.key for g in detect_mention_groups(tagged + [TaggedWord(word, tag)]) if g.eligible}
    assert before <= after


@pytest.mark.parametrize("word,tag", [("the", "OTHER"), ("Paris", "PROPN"), ("running", "VERB"), ("42", "OTHER"), ("table", "NOUN")])
def test_heuristic_examples(word, tag):
    assert heuristic_tag(word) == tag
