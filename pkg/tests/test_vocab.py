import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinyground import vocab as V


WORDS = ["plane", "a", "b", "red", "two"]


@pytest.fixture
def v():
    return V.build_vocab(WORDS)


def test_sizes():
    assert len(V.build_vocab(["a"])) == 6
    assert len(V.build_vocab([])) == 5


def test_control_tokens_last(v):
    assert v.bos_id == len(WORDS)
    assert [v.token_of(v.bos_id + k) for k in range(5)] == list(V.CONTROL_TOKENS)
    assert v.bb_id != v.loc_id


def test_duplicate_rejected():
    with pytest.raises(V.VocabError, match="plane"):
        V.build_vocab(["plane", "plane"])


def test_control_collision_rejected():
    with pytest.raises(V.VocabError):
        V.build_vocab([V.BB])


def test_encode_examples(v):
    assert V.encode(v, [V.BOS, "a", V.EOS]) == (v.bos_id, v.id_of("a"), v.eos_id)
    assert V.encode(v, []) == ()
    ids = V.encode(v, ["plane", V.BB, V.LOC])
    assert ids[1] == v.bb_id and ids[2] == v.loc_id


def test_encode_unknown(v):
    with pytest.raises(V.VocabError, match="zeppelin"):
        V.encode(v, ["zeppelin"])


@given(st.lists(st.sampled_from(WORDS + list(V.CONTROL_TOKENS)), max_size=30))
def test_roundtrip(words):
    v = V.build_vocab(WORDS)
    assert V.decode(v, V.encode(v, words)) == words


def test_protocol_canonical_pair(v):
    ok, bad = V.validate_protocol(v, (v.bb_id, v.loc_id))
    assert ok and bad == []


def test_protocol_orphan_loc(v):
    ok, bad = V.validate_protocol(v, (v.loc_id,))
    assert not ok and bad == [0]


def test_protocol_bb_not_followed(v):
    ok, bad = V.validate_protocol(v, (v.bb_id, v.id_of("plane")))
    assert not ok and bad == [0]


def test_protocol_trailing_bb_truncation_flag(v):
    seq = (v.id_of("a"), v.bb_id)
    assert not V.validate_protocol(v, seq)[0]
    assert V.validate_protocol(v, seq, truncated=True)[0]


def test_loss_mask_examples(v):
    seq = V.encode(v, ["plane", V.BB, V.LOC, V.EOS])
    assert V.loss_mask(v, seq) == (True, True, False, True)
    assert V.loss_mask(v, (v.pad_id, v.pad_id)) == (False, False)
    assert V.loss_mask(v, V.encode(v, ["a", "b"])) == (True, True)


def test_loss_mask_single_token_mode(v):
    seq = (v.id_of("a"), v.loc_id)
    assert V.loss_mask(v, seq, mask_loc=False) == (True, True)


@given(st.lists(st.sampled_from(WORDS + list(V.CONTROL_TOKENS)), max_size=30))
def test_loss_mask_depends_only_on_ids(words):
    v = V.build_vocab(WORDS)
    seq = V.encode(v, words)
    mask = V.loss_mask(v, seq)
    assert len(mask) == len(seq)
    for flag, tok in zip(mask, seq):
        assert flag == (tok not in (v.loc_id, v.pad_id))


def test_count_boxes(v):
    seq = (v.bb_id, v.loc_id, v.id_of("a"), v.bb_id, v.loc_id)
    assert V.count_boxes(v, seq) == 2
    assert V.count_boxes(v, V.encode(v, ["a", "b", V.EOS])) == 0
    assert V.count_boxes(v, (v.bb_id, v.loc_id)) == 1
    with pytest.raises(V.VocabError):
        V.count_boxes(v, (v.loc_id,))


def test_bb_loc_counts_match_when_valid(v):
    seq = (v.bb_id, v.loc_id, v.bb_id, v.loc_id)
    assert sum(t == v.bb_id for t in seq) == sum(t == v.loc_id for t in seq)
    assert V.count_boxes(v, seq) == 2


def test_strip_bb(v):
    seq = (v.id_of("a"), v.bb_id, v.loc_id, v.eos_id)
    assert V.strip_bb(v, seq) == (v.id_of("a"), v.loc_id, v.eos_id)


def test_serialization_roundtrip(tmp_path, v):
    path = tmp_path / "vocab.txt"
    V.save_vocab(v, path)
    loaded = V.load_vocab(path)
    assert loaded == v
    assert loaded.sha256() == v.sha256()
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[v.id_of("plane")] == "plane"
    assert lines[v.loc_id] == V.LOC
