import numpy as np
import pytest

from boundprobe.anchors import AnchorSet, VocabTokenizer, anchors_to_mass, extract_anchors
from boundprobe.errors import EmptyEntityList, EmptyEntityWarning, TokenOutOfRange


class TableTokenizer:
    """Fixed encodings for the tests."""

    def __init__(self, table, vocab_size=32):
        self.table = table
        self.vocab_size = vocab_size

    def encode(self, text):
        return list(self.table[text])

    def decode(self, ids):
        return ""


def test_first_token_is_anchor():
    tok = TableTokenizer({"kangaroo": [17, 4]})
    a = extract_anchors(["kangaroo"], tok, include_space_variant=False)
    assert a.token_ids == (17,)
    assert a.source_entities == {17: ["kangaroo"]}


def test_near_duplicates_keep_distinct_anchors():
    tok = TableTokenizer({"Pea": [3], "peas": [8, 1]})
    a = extract_anchors(["Pea", "peas"], tok, include_space_variant=False)
    assert set(a.token_ids) == {3, 8}


def test_duplicates_collapse():
    tok = TableTokenizer({"a": [1], "b": [2]})
    assert len(extract_anchors(["a", "b", "a"], tok, include_space_variant=False)) == 2


def test_space_variant_adds_anchor():
    tok = VocabTokenizer(["<eos>", " ", "k", "o", "koala", " koala"], eos_token="<eos>")
    with_space = extract_anchors(["koala"], tok)
    without = extract_anchors(["koala"], tok, include_space_variant=False)
    assert set(with_space.token_ids) == {4, 5}
    assert without.token_ids == (4,)


def test_case_variants_and_articles():
    tok = TableTokenizer({"the Emu": [1], "Emu": [2], "emu": [3]})
    a = extract_anchors(["Emu"], tok, include_space_variant=False, include_case_variants=True)
    assert set(a.token_ids) == {2, 3}
    b = extract_anchors(["the Emu"], tok, include_space_variant=False, strip_leading_articles=True)
    assert b.token_ids == (2,)


def test_empty_entities():
    tok = TableTokenizer({"x": [1]})
    with pytest.raises(EmptyEntityList):
        extract_anchors([], tok)
    with pytest.warns(EmptyEntityWarning), pytest.raises(EmptyEntityList):
        extract_anchors(["  "], tok)
    with pytest.warns(EmptyEntityWarning):
        assert extract_anchors(["", "x"], tok, include_space_variant=False).token_ids == (1,)


def test_out_of_range_token():
    with pytest.raises(TokenOutOfRange):
        extract_anchors(["x"], TableTokenizer({"x": [40]}), include_space_variant=False)


def test_mass_from_anchor_set():
    assert anchors_to_mass(AnchorSet((17,)), 32).dense()[17] == 1.0
    m = anchors_to_mass(AnchorSet((2, 7, 9)), 12).dense()
    assert np.allclose(m[[2, 7, 9]], 1 / 3)
    full = anchors_to_mass(AnchorSet(tuple(range(8))), 8).dense()
    assert np.allclose(full, 1 / 8)


def test_vocab_tokenizer_greedy_and_round_trip(tmp_path):
    tokens = ["<eos>", "<unk>", "a", "b", "ab", "abc", "\n", " "]
    tok = VocabTokenizer(tokens, unk_token="<unk>", eos_token="<eos>")
    assert tok.encode("abcab") == [5, 4]
    assert tok.encode("abz") == [4, 1]
    assert tok.decode(tok.encode("ab\nb")) == "ab\nb"
    tok.save(tmp_path / "vocab.txt")
    again = VocabTokenizer.from_file(tmp_path / "vocab.txt", unk_token="<unk>", eos_token="<eos>")
    assert again.encode("abcab") == [5, 4]
    assert again.eos_id == 0 and again.unk_id == 1
