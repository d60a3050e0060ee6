"""Token alphabet, the ⟨bb⟩⟨loc⟩ answer protocol, and loss-mask rules."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

BOS = "⟨bos⟩"
EOS = "⟨eos⟩"
PAD = "⟨pad⟩"
BB = "⟨bb⟩"
LOC = "⟨loc⟩"

# Fixed order; control tokens always occupy the last five ids.
CONTROL_TOKENS = (BOS, EOS, PAD, BB, LOC)

TokenSeq = tuple[int, ...]


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Closed word-level vocabulary: text tokens first, control tokens last."""

    text_tokens: tuple[str, ...]
    _token_to_id: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = self.text_tokens + CONTROL_TOKENS
        mapping = {}
        for i, tok in enumerate(tokens):
            if tok in mapping:
                raise VocabError(f"duplicate token {tok!r}")
            mapping[tok] = i
        object.__setattr__(self, "_token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.text_tokens) + len(CONTROL_TOKENS)

    def id_of(self, token: str) -> int:
        try:
            return self._token_to_id[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        if 0 <= idx < len(self.text_tokens):
            return self.text_tokens[idx]
        ctrl = idx - len(self.text_tokens)
        if 0 <= ctrl < len(CONTROL_TOKENS):
            return CONTROL_TOKENS[ctrl]
        raise VocabError(f"token id {idx} out of range for vocabulary of size {len(self)}")

    @property
    def bos_id(self) -> int:
        return len(self.text_tokens)

    @property
    def eos_id(self) -> int:
        return len(self.text_tokens) + 1

    @property
    def pad_id(self) -> int:
        return len(self.text_tokens) + 2

    @property
    def bb_id(self) -> int:
        return len(self.text_tokens) + 3

    @property
    def loc_id(self) -> int:
        return len(self.text_tokens) + 4

    def all_tokens(self) -> tuple[str, ...]:
        return self.text_tokens + CONTROL_TOKENS

    def sha256(self) -> str:
        return hashlib.sha256(serialize(self).encode("utf-8")).hexdigest()


def build_vocab(text_tokens: list[str] | tuple[str, ...]) -> Vocabulary:
    """Builds a vocabulary of |text|+5 dense ids, control tokens last.

    Rejects duplicate text tokens and collisions with control literals.
    """
    seen = set()
    for tok in text_tokens:
        if tok in seen:
            raise VocabError(f"duplicate token {tok!r}")
        if tok in CONTROL_TOKENS:
            raise VocabError(f"text token {tok!r} collides with a control token")
        seen.add(tok)
    return Vocabulary(tuple(text_tokens))


def encode(v: Vocabulary, words: list[str] | tuple[str, ...]) -> TokenSeq:
    return tuple(v.id_of(w) for w in words)


def decode(v: Vocabulary, ids: TokenSeq) -> list[str]:
    return [v.token_of(i) for i in ids]


def validate_protocol(
    v: Vocabulary, s: TokenSeq, truncated: bool = False
) -> tuple[bool, list[int]]:
    """Checks the pairing rule: every ⟨bb⟩ immediately followed by ⟨loc⟩,
    every ⟨loc⟩ immediately preceded by ⟨bb⟩.

    A trailing ⟨bb⟩ is tolerated only when `truncated` is set (sequence was
    cut at the length cap before the deterministic ⟨loc⟩ could be emitted).
    Returns (ok, offending positions).
    """
    bb, loc = v.bb_id, v.loc_id
    violations = []
    n = len(s)
    for t, tok in enumerate(s):
        if tok == bb:
            if t + 1 < n:
                if s[t + 1] != loc:
                    violations.append(t)
            elif not truncated:
                violations.append(t)
        elif tok == loc:
            if t == 0 or s[t - 1] != bb:
                violations.append(t)
    return (not violations, violations)


def loss_mask(v: Vocabulary, targets: TokenSeq, mask_loc: bool = True) -> tuple[bool, ...]:
    """Per-position flags for the token cross-entropy.

    False wherever the target token is ⟨loc⟩ or ⟨pad⟩ (⟨loc⟩ is emitted
    deterministically and carries no next-token information), true
    elsewhere. `mask_loc=False` is the single-token ablation mode, where
    ⟨loc⟩ must be predictable and therefore participates in the loss.
    """
    excluded = {v.pad_id}
    if mask_loc:
        excluded.add(v.loc_id)
    return tuple(tok not in excluded for tok in targets)


def count_boxes(v: Vocabulary, s: TokenSeq, truncated: bool = False) -> int:
    """Number of ⟨loc⟩ occurrences (= number of ⟨bb⟩ in a valid sequence)."""
    ok, violations = validate_protocol(v, s, truncated=truncated)
    if not ok:
        raise VocabError(f"protocol violation at positions {violations}")
    return sum(1 for tok in s if tok == v.loc_id)


def strip_bb(v: Vocabulary, s: TokenSeq) -> TokenSeq:
    """Single-token rewrite: drop every ⟨bb⟩, leaving ⟨loc⟩ with both duties."""
    return tuple(tok for tok in s if tok != v.bb_id)


def serialize(v: Vocabulary) -> str:
    """Line-oriented text form: one token literal per line, line number = id."""
    return "\n".join(v.all_tokens()) + "\n"


def save_vocab(v: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize(v))


def load_vocab(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().splitlines()
    if len(tokens) < len(CONTROL_TOKENS):
        raise VocabError(f"vocabulary file {path} too short")
    tail = tuple(tokens[-len(CONTROL_TOKENS):])
    if tail != CONTROL_TOKENS:
        raise VocabError(f"vocabulary file {path} does not end with the control tokens")
    return build_vocab(tokens[: -len(CONTROL_TOKENS)])
