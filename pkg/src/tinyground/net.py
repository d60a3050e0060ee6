"""Tiny multimodal decoder with a box-regression head.

Layout per forward pass: [visual patch tokens ; bos + query ; answer],
one learned absolute position table shared across the concatenation,
pre-norm causal transformer blocks, an affine language head over the full
vocabulary, and a two-layer grounding head that maps hidden states at
⟨loc⟩ positions to 5 box parameters squashed into [0,100].

All parameter math is written against the autodiff Tensor surface, so the
same methods run on plain ndarrays (inference) or Tensors (training).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_MAGIC = b"TGRD"
CHECKPOINT_VERSION = 1


class NetError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    patch_size: int = 8
    max_seq_len: int = 256
    grounding_hidden_dim: int = 64
    ffn_dim: int = 0  # 0 means 4 * embed_dim
    squash_boxes: bool = True
    freeze_visual: bool = False
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise NetError("embed_dim must be divisible by num_heads")
        for name in ("vocab_size", "embed_dim", "num_layers", "num_heads", "patch_size", "max_seq_len", "grounding_hidden_dim"):
            if getattr(self, name) <= 0:
                raise NetError(f"{name} must be positive")
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.embed_dim)
        if self.dtype not in ("float32", "float64"):
            raise NetError(f"unsupported dtype {self.dtype}")


def param_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declared (name, shape) order; also the checkpoint array order."""
    d, f, g = cfg.embed_dim, cfg.ffn_dim, cfg.grounding_hidden_dim
    spec = [
        ("patch_w", (cfg.patch_size * cfg.patch_size * 3, d)),
        ("patch_b", (d,)),
        ("proj_w1", (d, d)),
        ("proj_b1", (d,)),
        ("proj_w2", (d, d)),
        ("proj_b2", (d,)),
        ("tok_emb", (cfg.vocab_size, d)),
        ("pos_emb", (cfg.max_seq_len, d)),
    ]
    for i in range(cfg.num_layers):
        spec += [
            (f"l{i}.ln1_g", (d,)),
            (f"l{i}.ln1_b", (d,)),
            (f"l{i}.attn_wq", (d, d)),
            (f"l{i}.attn_bq", (d,)),
            (f"l{i}.attn_wk", (d, d)),
            (f"l{i}.attn_bk", (d,)),
            (f"l{i}.attn_wv", (d, d)),
            (f"l{i}.attn_bv", (d,)),
            (f"l{i}.attn_wo", (d, d)),
            (f"l{i}.attn_bo", (d,)),
            (f"l{i}.ln2_g", (d,)),
            (f"l{i}.ln2_b", (d,)),
            (f"l{i}.ffn_w1", (d, f)),
            (f"l{i}.ffn_b1", (f,)),
            (f"l{i}.ffn_w2", (f, d)),
            (f"l{i}.ffn_b2", (d,)),
        ]
    spec += [
        ("ln_f_g", (d,)),
        ("ln_f_b", (d,)),
        ("lm_w", (d, cfg.vocab_size)),
        ("lm_b", (cfg.vocab_size,)),
        ("gr_w1", (d, g)),
        ("gr_b1", (g,)),
        ("gr_w2", (g, 5)),
        ("gr_b2", (5,)),
    ]
    return spec


VISUAL_PARAMS = ("patch_w", "patch_b")


def init_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform init, drawn in declaration order from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(cfg.dtype)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_spec(cfg):
        if len(shape) == 1:
            # 1-D parameters are biases (zeros) or layer-norm gains (ones)
            fill = np.ones if name.endswith("_g") else np.zeros
            params[name] = fill(shape, dtype=dtype)
        else:
            fan_in = shape[1] if name in ("tok_emb", "pos_emb") else shape[0]
            bound = 1.0 / float(np.sqrt(fan_in))
            params[name] = rng.uniform(-bound, bound, shape).astype(dtype)
    return params


def _layer_norm(x, g, b, eps: float = 1e-5):
    return ad.layer_norm(x, g, b, eps=eps)


class Model:
    """Parameter store plus the forward graph. `params` may be a dict of
    ndarrays (inference) or Tensors (training); methods accept an override
    so a training step can thread gradient-tracking copies through."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = init_params(config) if params is None else params
        expected = param_spec(config)
        for name, shape in expected:
            if name not in self.params:
                raise NetError(f"missing parameter {name}")
            if tuple(ad.value(self.params[name]).shape) != shape:
                raise NetError(f"parameter {name} has shape {ad.value(self.params[name]).shape}, want {shape}")

    # -- pieces ------------------------------------------------------------

    def patch_tokens(self, img: np.ndarray) -> np.ndarray:
        p = self.config.patch_size
        img = np.asarray(img, dtype=self.config.dtype)
        if img.ndim != 3 or img.shape[2] != 3:
            raise NetError(f"image must be HxWx3, got {img.shape}")
        H, W, _ = img.shape
        if H % p or W % p:
            raise NetError(f"image {H}x{W} not divisible by patch size {p}")
        hp, wp = H // p, W // p
        patches = img.reshape(hp, p, wp, p, 3).transpose(0, 2, 1, 3, 4).reshape(hp * wp, p * p * 3)
        return patches

    def encode_image(self, img: np.ndarray, params=None):
        """Patch embedding -> 2-layer projector -> + positions. Returns PxD."""
        pr = self.params if params is None else params
        patches = self.patch_tokens(img)
        feats = patches @ pr["patch_w"] + pr["patch_b"]
        proj = ad.gelu(feats @ pr["proj_w1"] + pr["proj_b1"]) @ pr["proj_w2"] + pr["proj_b2"]
        n = patches.shape[0]
        if n > self.config.max_seq_len:
            raise NetError(f"{n} visual tokens exceed max_seq_len")
        return proj + pr["pos_emb"][:n]

    def embed_tokens(self, ids, offset: int = 0, params=None):
        """Token-table rows plus the shared positional rows at `offset`."""
        pr = self.params if params is None else params
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise NetError(f"token id out of range for vocab of {self.config.vocab_size}")
        if offset + ids.size > self.config.max_seq_len:
            raise NetError("token positions exceed max_seq_len")
        if ids.size == 0:
            base = ad.value(pr["tok_emb"])
            return np.zeros((0, base.shape[1]), dtype=base.dtype)
        return pr["tok_emb"][ids] + pr["pos_emb"][offset : offset + ids.size]

    def _block(self, h, i: int, mask: np.ndarray, params):
        cfg = self.config
        nh = cfg.num_heads
        dk = cfg.embed_dim // nh
        t = ad.value(h).shape[0]
        x = _layer_norm(h, params[f"l{i}.ln1_g"], params[f"l{i}.ln1_b"])
        q = (x @ params[f"l{i}.attn_wq"] + params[f"l{i}.attn_bq"]).reshape(t, nh, dk).transpose((1, 0, 2))
        k = (x @ params[f"l{i}.attn_wk"] + params[f"l{i}.attn_bk"]).reshape(t, nh, dk).transpose((1, 0, 2))
        v = (x @ params[f"l{i}.attn_wv"] + params[f"l{i}.attn_bv"]).reshape(t, nh, dk).transpose((1, 0, 2))
        scores = q @ k.transpose((0, 2, 1)) * (1.0 / float(np.sqrt(dk))) + mask
        ctx = ad.softmax(scores, axis=-1) @ v
        ctx = ctx.transpose((1, 0, 2)).reshape(t, cfg.embed_dim)
        h = h + ctx @ params[f"l{i}.attn_wo"] + params[f"l{i}.attn_bo"]
        x = _layer_norm(h, params[f"l{i}.ln2_g"], params[f"l{i}.ln2_b"])
        ff = ad.gelu(x @ params[f"l{i}.ffn_w1"] + params[f"l{i}.ffn_b1"]) @ params[f"l{i}.ffn_w2"] + params[f"l{i}.ffn_b2"]
        return h + ff


    def decoder_forward(self, visual, query_emb, answer_emb, params=None):
        """Causal self-attention over [visual; query; answer].

        Returns (hidden, logits): final-norm hidden states and language-head
        logits, one row per position.
        """
        pr = self.params if params is None else params
        h = ad.concat([visual, query_emb, answer_emb], axis=0)
        t = ad.value(h).shape[0]
        if t > self.config.max_seq_len:
            raise NetError(f"sequence length {t} exceeds max_seq_len {self.config.max_seq_len}")
        mask = np.triu(np.full((t, t), -1e9, dtype=self.config.dtype), k=1)
        for i in range(self.config.num_layers):
            h = self._block(h, i, mask, pr)
        hidden = _layer_norm(h, pr["ln_f_g"], pr["ln_f_b"])
        logits = self.lm_head(hidden, params=pr)
        return hidden, logits

    def lm_head(self, hidden, params=None):
        pr = self.params if params is None else params
        return hidden @ pr["lm_w"] + pr["lm_b"]

    def grounding_head(self, loc_hidden, params=None):
        """Row-wise 2-layer MLP from ⟨loc⟩ hidden states to 5 box params,
        squashed to [0,100] unless the config disables it."""
        pr = self.params if params is None else params
        if ad.value(loc_hidden).shape[0] == 0:
            return np.zeros((0, 5), dtype=self.config.dtype)
        z = ad.tanh(loc_hidden @ pr["gr_w1"] + pr["gr_b1"]) @ pr["gr_w2"] + pr["gr_b2"]
        if self.config.squash_boxes:
            return 100.0 * ad.sigmoid(z)
        return z

    def visual_token_count(self, img_shape) -> int:
        p = self.config.patch_size
        return (img_shape[0] // p) * (img_shape[1] // p)

    def trainable_names(self) -> list[str]:
        names = [n for n, _ in param_spec(self.config)]
        if self.config.freeze_visual:
            names = [n for n in names if n not in VISUAL_PARAMS]
        return names

    def tensor_params(self) -> dict[str, Tensor]:
        """Wraps every parameter as a leaf Tensor; frozen sets stay constant."""
        trainable = set(self.trainable_names())
        return {k: Tensor(v, requires_grad=k in trainable) for k, v in self.params.items()}


# -- checkpoint container ---------------------------------------------------

def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Flat binary container: magic, version, length-prefixed JSON header
    (config + meta), then float32 little-endian arrays in declaration order."""
    header = {"config": asdict(config), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for name, shape in param_spec(config):
            arr = np.ascontiguousarray(ad.value(params[name]), dtype="<f4")
            if tuple(arr.shape) != shape:
                raise NetError(f"checkpoint: parameter {name} has wrong shape")
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise NetError(f"{path} is not a checkpoint (bad magic {magic!r})")
        version, length = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise NetError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(length).decode("utf-8"))
        config = ModelConfig(**header["config"])
        params: dict[str, np.ndarray] = {}
        for name, shape in param_spec(config):
            count = int(np.prod(shape))
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise NetError(f"checkpoint truncated while reading {name}")
            arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
            params[name] = arr.astype(config.dtype)
        trailing = fh.read(1)
        if trailing:
            raise NetError("checkpoint has trailing bytes")
    return config, params, header["meta"]
