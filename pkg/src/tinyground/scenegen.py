"""Synthetic grounded-instruction scenes: colored rotated shapes on a gray
canvas, with query/answer token sequences and exact oriented-box targets.

Queries come in three template families. "grounding" names a unique
color+shape; "referring-single" disambiguates between identical objects by
canvas quadrant; "referring-multi" asks for all n identical objects and
the answer carries one ⟨bb⟩⟨loc⟩ pair per object, ordered left to right.
Ground-truth boxes are derived from the analytic scene geometry, so they
are exact, not fitted to the raster.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import vocab as V
from .geometry import OrientedBox, PixelBox, normalize
from .vocab import TokenSeq, Vocabulary

COLORS = {
    "red": (220, 50, 47),
    "green": (64, 160, 70),
    "blue": (55, 95, 215),
    "yellow": (235, 210, 60),
    "purple": (150, 62, 190),
    "orange": (240, 140, 40),
}
SHAPES = ("square", "rectangle", "disk", "triangle")
PLURALS = {
    "square": "squares",
    "rectangle": "rectangles",
    "disk": "disks",
    "triangle": "triangles",
}
BACKGROUND = (112, 112, 112)
GLUE_WORDS = (
    "give", "me", "the", "location", "of", "at",
    "top", "bottom", "left", "right",
    "⟨p⟩", "⟨/p⟩",
)
COUNT_WORDS = ("2", "3", "4", "5", "6")
TASK_TAGS = ("grounding", "referring-single", "referring-multi")

# rotations are quantized to sixteenths of a turn so box targets stay on a
# small closed set of angle tokens the model can actually learn
ROTATION_STEP = 2.0 * math.pi / 16.0


class SceneError(ValueError):
    pass


def build_default_vocab() -> Vocabulary:
    words = list(GLUE_WORDS) + list(COLORS) + list(SHAPES)
    words += [PLURALS[s] for s in SHAPES] + list(COUNT_WORDS)
    return V.build_vocab(words)


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    center: tuple[float, float]
    extents: tuple[float, float]  # full width / height in pixels
    rotation: float               # radians, about the object center


@dataclass(frozen=True)
class SceneSpec:
    canvas_size: int
    objects: tuple[SceneObject, ...]
    seed: int = 0


@dataclass
class SceneKnobs:
    canvas_size: int = 64
    max_objects: int = 6
    min_separation: float = 9.0
    task_mix: tuple[float, float, float] = (0.5, 0.3, 0.2)
    size_mix: tuple[float, float, float] = (0.3, 0.4, 0.3)  # small/medium/large


@dataclass(eq=False)
class GroundedSample:
    image: np.ndarray            # HxWx3 floats in [0,1]
    query: TokenSeq
    answer: TokenSeq
    boxes: tuple[OrientedBox, ...]
    task_tag: str


def tight_box(obj: SceneObject, canvas_size: int) -> OrientedBox:
    """Oriented box of the generating rectangle at the object's rotation."""
    cx, cy = obj.center
    hw, hh = obj.extents[0] / 2.0, obj.extents[1] / 2.0
    theta = 0.0 if obj.shape == "disk" else obj.rotation
    pb = PixelBox(cx - hw, cy - hh, cx + hw, cy + hh, theta)
    return normalize(pb, canvas_size, canvas_size)


def _rotated_half_spans(hw: float, hh: float, theta: float) -> tuple[float, float]:
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    return hw * c + hh * s, hw * s + hh * c


def _object_mask(obj: SceneObject, size: int) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    px = xs + 0.5 - obj.center[0]
    py = ys + 0.5 - obj.center[1]
    c, s = math.cos(obj.rotation), math.sin(obj.rotation)
    rx = c * px + s * py
    ry = -s * px + c * py
    hw, hh = obj.extents[0] / 2.0, obj.extents[1] / 2.0
    if obj.shape in ("square", "rectangle"):
        return (np.abs(rx) <= hw) & (np.abs(ry) <= hh)
    if obj.shape == "disk":
        return (rx / hw) ** 2 + (ry / hh) ** 2 <= 1.0
    if obj.shape == "triangle":
        # isoceles: base on the +y edge of the rect, apex on the -y edge
        verts = [(-hw, hh), (hw, hh), (0.0, -hh)]
        inside = np.ones_like(rx, dtype=bool)
        for (ax, ay), (bx, by) in zip(verts, verts[1:] + verts[:1]):
            cross = (bx - ax) * (ry - ay) - (by - ay) * (rx - ax)
            inside &= cross <= 1e-9  # vertices wind clockwise in stored coords
        return inside
    raise SceneError(f"unknown shape {obj.shape!r}")


def render(spec: SceneSpec) -> np.ndarray:
    """Deterministic rasterization; later objects overdraw earlier ones."""
    size = spec.canvas_size
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for obj in spec.objects:
        hw, hh = obj.extents[0] / 2.0, obj.extents[1] / 2.0
        rx, ry = _rotated_half_spans(hw, hh, 0.0 if obj.shape == "disk" else obj.rotation)
        cx, cy = obj.center
        if cx - rx < 0 or cx + rx > size or cy - ry < 0 or cy + ry > size:
            raise SceneError(f"object {obj} extends outside the {size}px canvas")
        img[_object_mask(obj, size)] = COLORS[obj.color]
    return img.astype(np.float64) / 255.0


# --- scene construction ----------------------------------------------------

_SIZE_CLASSES = ("small", "medium", "large")


def _draw_extents(
    rng: np.random.Generator, shape: str, size_class: str, canvas_size: int
) -> tuple[float, float]:
    # pixel areas land strictly inside the small (<16px^2), medium
    # ([16,144)) and large (>=144) buckets at the calibrated 64px canvas;
    # other canvas sizes scale the ranges and lose the exact bucket split
    if shape in ("square", "disk"):
        w, h = {
            "small": (3, 3),
            "medium": (int(rng.integers(5, 12)),) * 2,
            "large": (int(rng.integers(13, 22)),) * 2,
        }[size_class]
    elif shape == "rectangle":
        if size_class == "small":
            w, h = 4, 3
        elif size_class == "medium":
            w = int(rng.integers(6, 12))
            h = int(rng.integers(5, min(w, 11)))
        else:
            w = int(rng.integers(15, 22))
            h = int(rng.integers(13, w))
    elif size_class == "small":
        w, h = [(3, 3), (3, 4), (4, 3)][int(rng.integers(0, 3))]
    else:
        lo, hi = (5, 11) if size_class == "medium" else (13, 21)
        w, h = int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))
    if canvas_size != 64:
        scale = canvas_size / 64.0
        w = max(2, round(w * scale))
        h = max(2, round(h * scale))
        if shape == "rectangle" and h >= w:
            w = h + 1
        if shape in ("square", "disk"):
            h = w
    return float(w), float(h)


def _draw_rotation(rng: np.random.Generator, shape: str) -> float:
    if shape == "disk":
        return 0.0
    levels = {"square": 4, "rectangle": 8, "triangle": 16}[shape]
    return float(rng.integers(0, levels)) * ROTATION_STEP


def _place(
    rng: np.random.Generator,
    placed: list[SceneObject],
    obj_shape: str,
    obj_color: str,
    knobs: SceneKnobs,
    size_class: str,
    quadrant: tuple[int, int] | None = None,
) -> SceneObject | None:
    size = knobs.canvas_size
    for _ in range(200):
        w, h = _draw_extents(rng, obj_shape, size_class, size)
        rot = _draw_rotation(rng, obj_shape)
        rx, ry = _rotated_half_spans(w / 2.0, h / 2.0, rot)
        # the rendered shape and the unrotated tight-box corners must both
        # stay inside the canvas (box params live in [0,100])
        rx, ry = max(rx, w / 2.0), max(ry, h / 2.0)
        if 2 * rx >= size or 2 * ry >= size:
            continue
        margin = 2.0  # keep centers off the quadrant midlines
        if quadrant is None:
            cx = rng.uniform(rx, size - rx)
            cy = rng.uniform(ry, size - ry)
        else:
            half = size / 2.0
            qx = (max(rx, 0.0), half - margin) if quadrant[0] == 0 else (half + margin, size - rx)
            qy = (max(ry, 0.0), half - margin) if quadrant[1] == 0 else (half + margin, size - ry)
            if qx[0] >= qx[1] or qy[0] >= qy[1]:
                continue
            cx = rng.uniform(max(qx[0], rx), min(qx[1], size - rx))
            cy = rng.uniform(max(qy[0], ry), min(qy[1], size - ry))
        def too_close(p: SceneObject) -> bool:
            sep = max(knobs.min_separation, 0.75 * (max(w, h) + max(p.extents)) / 2.0)
            return math.dist((cx, cy), p.center) < sep

        if any(too_close(p) for p in placed):
            continue
        return SceneObject(obj_shape, obj_color, (cx, cy), (w, h), rot)
    return None


def _pair_pool(rng: np.random.Generator, exclude: set[tuple[str, str]], count: int):
    pool = [(c, s) for c in COLORS for s in SHAPES if (c, s) not in exclude]
    idx = rng.permutation(len(pool))
    return [pool[i] for i in idx[:count]]


def _size_class(rng: np.random.Generator, knobs: SceneKnobs) -> str:
    return _SIZE_CLASSES[int(rng.choice(3, p=np.asarray(knobs.size_mix) / sum(knobs.size_mix)))]


def _quadrant_words(box: OrientedBox) -> tuple[str, str]:
    cx, cy = box.center()
    return ("top" if cy < 50 else "bottom", "left" if cx < 50 else "right")


def build_scene(tag: str, rng: np.random.Generator, knobs: SceneKnobs) -> tuple[SceneSpec, list[SceneObject]]:
    """Constructs a scene guaranteed to make `tag` answerable; returns the
    spec and the referenced objects."""
    for _ in range(50):
        color = str(rng.choice(list(COLORS)))
        shape = str(rng.choice(SHAPES))
        placed: list[SceneObject] = []
        targets: list[SceneObject] = []
        ok = True
        if tag == "grounding":
            t = _place(rng, placed, shape, color, knobs, _size_class(rng, knobs))
            if t is None:
                continue
            placed.append(t)
            targets = [t]
        elif tag == "referring-single":
            quadrants = [(0, 0), (1, 0), (0, 1), (1, 1)]
            qi = rng.permutation(4)[:2]
            t = _place(rng, placed, shape, color, knobs, _size_class(rng, knobs), quadrant=quadrants[qi[0]])
            if t is None:
                continue
            placed.append(t)
            # confounder: same color+shape in another quadrant
            c = _place(rng, placed, shape, color, knobs, _size_class(rng, knobs), quadrant=quadrants[qi[1]])
            if c is None:
                continue
            placed.append(c)
            targets = [t]
        elif tag == "referring-multi":
            n = int(rng.integers(2, 5))
            for _ in range(n):
                t = _place(rng, placed, shape, color, knobs, _size_class(rng, knobs))
                if t is None:
                    ok = False
                    break
                placed.append(t)
                targets.append(t)
            if not ok or len(targets) < 2:
                continue
        else:
            raise SceneError(f"unknown task tag {tag!r}")

        n_extra = int(rng.integers(0, knobs.max_objects - len(placed) + 1))
        for extra_color, extra_shape in _pair_pool(rng, {(color, shape)}, n_extra):
            d = _place(rng, placed, extra_shape, extra_color, knobs, _size_class(rng, knobs))
            if d is not None:
                placed.append(d)
        return SceneSpec(knobs.canvas_size, tuple(placed)), targets
    raise SceneError(f"could not build a scene for tag {tag!r}")


def make_sample(
    spec: SceneSpec,
    targets: list[SceneObject],
    tag: str,
    v: Vocabulary,
) -> GroundedSample:
    """Renders the scene and emits the query/answer/boxes triple."""
    color = targets[0].color
    shape = targets[0].shape
    boxes = [tight_box(t, spec.canvas_size) for t in targets]

    same_pair = [o for o in spec.objects if (o.color, o.shape) == (color, shape)]
    p, pc = "⟨p⟩", "⟨/p⟩"
    head = ["give", "me", "the", "location", "of", p]
    if tag == "grounding":
        if len(same_pair) != 1:
            raise SceneError(f"ambiguous grounding referent {color} {shape}")
        query = head + [color, shape, pc]
        answer = [color, shape, V.BB, V.LOC]
    elif tag == "referring-single":
        vert, horiz = _quadrant_words(boxes[0])
        in_quadrant = [
            o for o in same_pair
            if _quadrant_words(tight_box(o, spec.canvas_size)) == (vert, horiz)
        ]
        if len(in_quadrant) != 1:
            raise SceneError(f"ambiguous referent {color} {shape} at {vert} {horiz}")
        query = head + [color, shape, "at", "the", vert, horiz, pc]
        answer = [color, shape, V.BB, V.LOC]
    elif tag == "referring-multi":
        if len(same_pair) != len(targets) or len(targets) < 2:
            raise SceneError("multi-object referent must cover all identical objects")
        order = sorted(range(len(targets)), key=lambda i: (boxes[i].center()[0], boxes[i].center()[1], i))
        boxes = [boxes[i] for i in order]
        count = str(len(targets))
        query = head + [count, color, PLURALS[shape], pc]
        answer = [count, color, PLURALS[shape]] + [V.BB, V.LOC] * len(targets)
    else:
        raise SceneError(f"unknown task tag {tag!r}")

    sample = GroundedSample(
        image=render(spec),
        query=V.encode(v, query),
        answer=V.encode(v, answer),
        boxes=tuple(boxes),
        task_tag=tag,
    )
    ok, bad = V.validate_protocol(v, sample.answer)
    assert ok, bad
    assert V.count_boxes(v, sample.answer) == len(sample.boxes)
    return sample


def _tag_for_index(index: int, mix: tuple[float, float, float]) -> str:
    total = sum(mix)
    frac = ((index % 100) + 0.5) / 100.0
    acc = 0.0
    for tag, m in zip(TASK_TAGS, mix):
        acc += m / total
        if frac < acc:
            return tag
    return TASK_TAGS[-1]


def generate_dataset(
    n: int,
    seed: int,
    knobs: SceneKnobs | None = None,
    v: Vocabulary | None = None,
) -> list[GroundedSample]:
    """Reproducible i.i.d. samples; each index derives its own RNG stream."""
    if n < 1:
        raise SceneError("n must be >= 1")
    knobs = knobs or SceneKnobs()
    v = v or build_default_vocab()
    samples = []
    for i in range(n):
        tag = _tag_for_index(i, knobs.task_mix)
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        spec, targets = build_scene(tag, rng, knobs)
        samples.append(make_sample(spec, targets, tag, v))
    return samples


# --- JSONL dataset interface -------------------------------------------------

def sample_to_json(s: GroundedSample, v: Vocabulary) -> str:
    raw = np.clip(np.rint(s.image * 255.0), 0, 255).astype(np.uint8).tobytes()
    record = {
        "image": base64.b64encode(raw).decode("ascii"),
        "query": V.decode(v, s.query),
        "answer": V.decode(v, s.answer),
        "boxes": [list(b.as_tuple()) for b in s.boxes],
        "task": s.task_tag,
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def sample_from_json(line: str, v: Vocabulary, canvas_size: int) -> GroundedSample:
    record = json.loads(line)
    raw = base64.b64decode(record["image"])
    img = np.frombuffer(raw, dtype=np.uint8).reshape(canvas_size, canvas_size, 3)
    return GroundedSample(
        image=img.astype(np.float64) / 255.0,
        query=V.encode(v, record["query"]),
        answer=V.encode(v, record["answer"]),
        boxes=tuple(OrientedBox(*b) for b in record["boxes"]),
        task_tag=record["task"],
    )


def write_dataset(samples: list[GroundedSample], path, v: Vocabulary, seed: int, knobs: SceneKnobs, extra_manifest: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(sample_to_json(s, v) + "\n")
    manifest = {
        "n": len(samples),
        "seed": seed,
        "knobs": asdict(knobs),
        "vocab_sha256": v.sha256(),
    }
    manifest.update(extra_manifest or {})
    with open(str(path) + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    V.save_vocab(v, str(path) + ".vocab.txt")


def read_manifest(path) -> dict:
    with open(str(path) + ".manifest.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_dataset(path, v: Vocabulary | None = None) -> tuple[list[GroundedSample], Vocabulary, dict]:
    manifest = read_manifest(path)
    if v is None:
        v = V.load_vocab(str(path) + ".vocab.txt")
    if manifest["vocab_sha256"] != v.sha256():
        raise SceneError(f"vocabulary hash mismatch for dataset {path}")
    canvas = manifest["knobs"]["canvas_size"]
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                samples.append(sample_from_json(line, v, canvas))
            except Exception as exc:
                raise SceneError(f"{path}: malformed dataset line {lineno}: {exc}") from exc
    return samples, v, manifest
