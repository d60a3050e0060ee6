"""Joint language + grounding objective and the teacher-forced training loop.

The per-sample loss is lambda_text * CE + lambda_bb * ground, where CE is
the mean masked next-token cross-entropy over [answer tokens, eos] and
ground is the mean squared matched distance between grounding-head outputs
at ⟨loc⟩ positions and the reference boxes. Matching is the optimal
bipartite one by default; the ablation flag switches to order-of-appearance
pairing. Box sets and CE masks come from the sample's canonical answer, so
shuffling reference-box order never changes the Hungarian loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import assignment as asg
from . import autodiff as ad
from . import vocab as V
from .net import Model
from .scenegen import GroundedSample
from .vocab import Vocabulary


class TrainingError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    lambda_text: float = 1.0
    lambda_bb: float = 10.0
    learning_rate: float = 1e-3
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    use_hungarian: bool = True
    use_bb_token: bool = True
    optimizer: str = "sgd"  # momentum SGD by default; "adam" behind this flag
    momentum: float = 0.9
    clip_grad_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.lambda_text < 0 or self.lambda_bb < 0:
            raise TrainingError("loss weights must be nonnegative")
        if self.steps < 1:
            raise TrainingError("steps must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise TrainingError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class BatchLoss:
    total: float
    ce_component: float
    ground_component: float
    boxes_matched: int


def ablation_single_token(cfg: TrainConfig) -> TrainConfig:
    """Single-token mode: ⟨bb⟩ removed from answers, ⟨loc⟩ carries both the
    announce-a-box duty (so it joins the cross-entropy) and the grounding
    feature duty."""
    return replace(cfg, use_bb_token=False)


def apply_token_mode(sample: GroundedSample, cfg: TrainConfig, v: Vocabulary) -> GroundedSample:
    if cfg.use_bb_token:
        return sample
    return GroundedSample(
        image=sample.image,
        query=sample.query,
        answer=V.strip_bb(v, sample.answer),
        boxes=sample.boxes,
        task_tag=sample.task_tag,
    )


def _validate_answer(v: Vocabulary, sample: GroundedSample, cfg: TrainConfig) -> None:
    if cfg.use_bb_token:
        ok, bad = V.validate_protocol(v, sample.answer)
        if not ok:
            raise TrainingError(f"answer violates the token protocol at {bad}")
    elif any(t == v.bb_id for t in sample.answer):
        raise TrainingError("single-token mode forbids ⟨bb⟩ in answers")
    n_loc = sum(1 for t in sample.answer if t == v.loc_id)
    if n_loc != len(sample.boxes):
        raise TrainingError(f"{n_loc} ⟨loc⟩ tokens but {len(sample.boxes)} reference boxes")


def _logsumexp_rows(z):
    c = ad.detached_max(z, axis=-1, keepdims=True)
    return ad.log(ad.exp(z - c).sum(axis=-1)) + c[:, 0]


def masked_cross_entropy(logits, targets: np.ndarray, mask: np.ndarray):
    """Mean NLL over positions where mask is true; masked positions
    contribute exactly zero regardless of their target id."""
    targets = np.asarray(targets, dtype=np.intp)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        return 0.0
    rows = np.arange(len(targets))
    nll = _logsumexp_rows(logits) - logits[rows, targets]
    weights = mask.astype(ad.value(logits).dtype)
    return (nll * weights).sum() * (1.0 / n)


def sample_losses(model: Model, sample: GroundedSample, cfg: TrainConfig, v: Vocabulary, params=None):
    """Forward pass and both loss terms for one sample.

    Returns (ce, ground, matched_pairs): ce/ground are Tensors when params
    carry gradients, plain floats or 0-dim values otherwise.
    """
    _validate_answer(v, sample, cfg)
    pr = model.params if params is None else params

    visual = model.encode_image(sample.image, params=pr)
    n_vis = ad.value(visual).shape[0]
    q_ids = (v.bos_id,) + sample.query
    q_emb = model.embed_tokens(q_ids, offset=n_vis, params=pr)
    a_emb = model.embed_tokens(sample.answer, offset=n_vis + len(q_ids), params=pr)
    hidden, logits = model.decoder_forward(visual, q_emb, a_emb, params=pr)

    na = len(sample.answer)
    start = n_vis + len(q_ids)
    targets = np.array(sample.answer + (v.eos_id,), dtype=np.intp)
    mask = np.array(V.loss_mask(v, tuple(targets), mask_loc=cfg.use_bb_token))
    ce = masked_cross_entropy(logits[start - 1 : start + na], targets, mask)

    loc_positions = [start + i for i, t in enumerate(sample.answer) if t == v.loc_id]
    if not loc_positions or not sample.boxes:
        return ce, 0.0, 0
    loc_hidden = hidden[np.array(loc_positions, dtype=np.intp)]
    pred = model.grounding_head(loc_hidden, params=pr)
    ref = np.array([b.as_tuple() for b in sample.boxes], dtype=ad.value(pred).dtype)
    if cfg.use_hungarian:
        _, match = asg.grounding_loss(ad.value(pred), ref)
        pairs = match.pairs
    else:
        pairs = tuple((i, i) for i in range(min(len(loc_positions), len(sample.boxes))))
    rows = np.array([i for i, _ in pairs], dtype=np.intp)
    cols = np.array([j for _, j in pairs], dtype=np.intp)
    diff = pred[rows] - ref[cols]
    ground = (diff * diff).sum() * (1.0 / len(pairs))
    return ce, ground, len(pairs)


def joint_loss(model: Model, sample: GroundedSample, cfg: TrainConfig, v: Vocabulary) -> BatchLoss:
    """Gradient-free evaluation of the joint objective on one sample."""
    ce, ground, matched = sample_losses(model, sample, cfg, v)
    ce_f = float(ad.value(ce))
    gr_f = float(ad.value(ground))
    return BatchLoss(cfg.lambda_text * ce_f + cfg.lambda_bb * gr_f, ce_f, gr_f, matched)


def batch_indices(seed: int, n: int, batch_size: int, step: int) -> np.ndarray:
    """Deterministic shuffled mini-batch schedule; pure function of the
    (seed, step) pair so interrupted runs can resume mid-epoch."""
    b = min(batch_size, n)
    steps_per_epoch = math.ceil(n / b)
    epoch = step // steps_per_epoch
    k = step % steps_per_epoch
    perm = np.random.default_rng(np.random.SeedSequence((seed, 7919, epoch))).permutation(n)
    return perm[k * b : k * b + b]


def _grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return math.sqrt(total)


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray], names: list[str]):
        self.cfg = cfg
        self.names = names
        self.t = 0
        self.vel = {n: np.zeros_like(params[n]) for n in names}
        if cfg.optimizer == "adam":
            self.second = {n: np.zeros_like(params[n]) for n in names}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        if cfg.clip_grad_norm > 0:
            norm = _grad_norm(grads)
            if norm > cfg.clip_grad_norm:
                scale = cfg.clip_grad_norm / norm
                grads = {n: g * scale for n, g in grads.items()}
        if cfg.optimizer == "sgd":
            for n in self.names:
                self.vel[n] = cfg.momentum * self.vel[n] + grads[n]
                params[n] = params[n] - cfg.learning_rate * self.vel[n]
        else:
            b1, b2, eps = 0.9, 0.999, 1e-8
            for n in self.names:
                self.vel[n] = b1 * self.vel[n] + (1 - b1) * grads[n]
                self.second[n] = b2 * self.second[n] + (1 - b2) * grads[n] * grads[n]
                mhat = self.vel[n] / (1 - b1**self.t)
                vhat = self.second[n] / (1 - b2**self.t)
                params[n] = params[n] - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)


def train(
    model: Model,
    data: list[GroundedSample],
    cfg: TrainConfig,
    v: Vocabulary,
    start_step: int = 0,
) -> tuple[dict[str, np.ndarray], list[dict]]:
    """Runs cfg.steps optimizer steps; returns (params, per-step history).

    Deterministic given (params, data, cfg.seed). Raises DivergenceError,
    citing the step, if the loss stops being finite.
    """
    if not data:
        raise TrainingError("training data is empty")
    data = [apply_token_mode(s, cfg, v) for s in data]
    names = model.trainable_names()
    opt = _Optimizer(cfg, model.params, names)
    history: list[dict] = []
    for step in range(start_step, start_step + cfg.steps):
        idx = batch_indices(cfg.seed, len(data), cfg.batch_size, step)
        tensors = model.tensor_params()
        ce_sum = 0.0
        gr_sum = 0.0
        matched = 0
        total = None
        for i in idx:
            ce, ground, m = sample_losses(model, data[int(i)], cfg, v, params=tensors)
            contribution = cfg.lambda_text * ce + cfg.lambda_bb * ground
            total = contribution if total is None else total + contribution
            ce_sum += float(ad.value(ce))
            gr_sum += float(ad.value(ground))
            matched += m
        scale = 1.0 / len(idx)
        loss = total * scale
        record = BatchLoss(
            float(ad.value(loss)), ce_sum * scale, gr_sum * scale, matched
        )
        if not math.isfinite(record.total):
            raise DivergenceError(step, record.total)
        ad.backward(loss)
        grads = {}
        for n in names:
            g = tensors[n].grad
            grads[n] = np.zeros_like(model.params[n]) if g is None else g
        opt.step(model.params, grads)
        history.append(
            {
                "step": step,
                "total": record.total,
                "ce": record.ce_component,
                "ground": record.ground_component,
                "boxes_matched": record.boxes_matched,
            }
        )
    return model.params, history


def history_to_csv(history: list[dict]) -> str:
    lines = ["step,total,ce,ground,boxes_matched"]
    for row in history:
        lines.append(
            f"{row['step']},{row['total']:.10g},{row['ce']:.10g},{row['ground']:.10g},{row['boxes_matched']}"
        )
    return "\n".join(lines) + "\n"
