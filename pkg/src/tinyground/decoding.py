"""Greedy token-by-token inference with the deterministic ⟨loc⟩ rule.

Each step feeds the full prefix back through the decoder and takes the
argmax token (first index wins ties), except that a ⟨bb⟩ forces the next
token to be ⟨loc⟩ without consulting the language head at all. ⟨loc⟩'s
language-head logit is masked to -inf so the argmax path can never emit
it; only the deterministic rule can. After generation stops (eos or the
length cap) the hidden states at ⟨loc⟩ positions are batched through the
grounding head, in order of appearance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import vocab as V
from .geometry import OrientedBox, box_from_params
from .net import Model
from .vocab import TokenSeq, Vocabulary


class DecodingError(ValueError):
    pass


@dataclass(frozen=True)
class Generation:
    answer: TokenSeq
    boxes: tuple[OrientedBox, ...]
    loc_positions: tuple[int, ...]  # indices into answer
    truncated: bool
    lm_calls: tuple[int, ...]       # answer indices produced by the language head


def greedy_generate(
    model: Model,
    img: np.ndarray,
    query: TokenSeq,
    v: Vocabulary,
    max_len: int,
    dual_token: bool = True,
) -> Generation:
    """Greedy decode of one query against one image.

    `dual_token=False` is the single-token ablation: no deterministic rule,
    ⟨loc⟩ predicted like any token, stray ⟨bb⟩ masked out instead.
    """
    if max_len < 1:
        raise DecodingError("max_len must be >= 1")
    visual = model.encode_image(img)
    n_vis = visual.shape[0]
    q_ids = (v.bos_id,) + tuple(query)
    if n_vis + len(q_ids) + max_len > model.config.max_seq_len:
        raise DecodingError(
            f"visual+query+max_len = {n_vis + len(q_ids) + max_len} exceeds "
            f"max_seq_len {model.config.max_seq_len}"
        )
    q_emb = model.embed_tokens(q_ids, offset=n_vis)

    masked_id = v.loc_id if dual_token else v.bb_id
    answer: list[int] = []
    lm_calls: list[int] = []
    hidden = None
    while len(answer) < max_len:
        prev = answer[-1] if answer else None
        if prev == v.eos_id:
            break
        if dual_token and prev == v.bb_id:
            answer.append(v.loc_id)
            continue
        a_emb = model.embed_tokens(np.array(answer, dtype=np.intp), offset=n_vis + len(q_ids))
        hidden, logits = model.decoder_forward(visual, q_emb, a_emb)
        step_logits = logits[-1].copy()
        step_logits[masked_id] = -np.inf
        lm_calls.append(len(answer))
        answer.append(int(np.argmax(step_logits)))

    truncated = not answer or answer[-1] != v.eos_id
    loc_positions = tuple(i for i, t in enumerate(answer) if t == v.loc_id)
    boxes: tuple[OrientedBox, ...] = ()
    if loc_positions:
        a_emb = model.embed_tokens(np.array(answer, dtype=np.intp), offset=n_vis + len(q_ids))
        hidden, _ = model.decoder_forward(visual, q_emb, a_emb)
        rows = hidden[np.array(loc_positions, dtype=np.intp) + n_vis + len(q_ids)]
        params = model.grounding_head(rows)
        boxes = tuple(box_from_params(p) for p in params)
    return Generation(tuple(answer), boxes, loc_positions, truncated, tuple(lm_calls))


def batch_generate(
    model: Model,
    items: list[tuple[np.ndarray, TokenSeq]],
    v: Vocabulary,
    max_len: int,
    dual_token: bool = True,
) -> list[Generation]:
    """Element-wise greedy_generate, input order preserved."""
    out = []
    for i, (img, query) in enumerate(items):
        try:
            out.append(greedy_generate(model, img, query, v, max_len, dual_token=dual_token))
        except Exception as exc:
            raise DecodingError(f"sample {i}: {exc}") from exc
    return out


def generation_to_json(gen: Generation, v: Vocabulary) -> str:
    record = {
        "answer": V.decode(v, gen.answer),
        "boxes": [list(b.as_tuple()) for b in gen.boxes],
        "truncated": gen.truncated,
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def generation_from_json(line: str, v: Vocabulary) -> Generation:
    record = json.loads(line)
    answer = V.encode(v, record["answer"])
    boxes = tuple(OrientedBox(*b) for b in record["boxes"])
    loc_positions = tuple(i for i, t in enumerate(answer) if t == v.loc_id)
    return Generation(answer, boxes, loc_positions, bool(record["truncated"]), ())
