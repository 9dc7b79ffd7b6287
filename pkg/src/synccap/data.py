"""Synthetic compositional motion corpus, vocabulary and JSONL I/O.

Each sample chains 1-4 motion primitives performed by an 8-joint stick
figure. Ground-truth frame intervals come for free from the generator,
which is what makes attention-based synchronisation measurable.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

N_JOINTS = 8
POSE_DIM = 3 * N_JOINTS
FPS = 20.0
BLEND_FRAMES = 5
MIN_DURATION, MAX_DURATION = 20, 60
# largest per-frame displacement of any joint the generator can produce
MAX_FRAME_STEP = 0.4

JOINTS = ("pelvis", "head", "l_hand", "r_hand", "l_knee", "r_knee", "l_foot", "r_foot")
REST = np.array([
    [0.0, 1.0, 0.0],
    [0.0, 1.7, 0.0],
    [-0.25, 1.0, 0.0],
    [0.25, 1.0, 0.0],
    [-0.1, 0.5, 0.0],
    [0.1, 0.5, 0.0],
    [-0.1, 0.0, 0.0],
    [0.1, 0.0, 0.0],
])

# motion word used in captions; doubles as the keyword table for sync scoring
PHRASES = {
    "walk": "walks forward",
    "turn": "turns around",
    "sit": "sits down",
    "stand": "stands up",
    "wave": "waves",
    "jump": "jumps",
    "pick": "picks something up",
    "kick": "kicks",
    "bend": "bends over",
    "clap": "claps",
}
PRIMITIVES = tuple(PHRASES)
KEYWORDS = {label: phrase.split()[0] for label, phrase in PHRASES.items()}


@dataclass
class Segment:
    label: str
    word_span: tuple[int, int]
    frame_span: tuple[int, int]

    def to_json(self) -> dict:
        return {"label": self.label, "word_span": list(self.word_span),
                "frame_span": list(self.frame_span)}

    @classmethod
    def from_json(cls, obj: dict) -> Segment:
        return cls(str(obj["label"]), tuple(int(v) for v in obj["word_span"]),
                   tuple(int(v) for v in obj["frame_span"]))


@dataclass
class Sample:
    id: str
    poses: np.ndarray
    caption: str
    segments: list[Segment] | None = None
    fps: float = FPS

    @property
    def n_frames(self) -> int:
        return self.poses.shape[0]

    def words(self) -> list[str]:
        return tokenize(self.caption)

    def to_json(self) -> dict:
        obj = {"id": self.id, "fps": self.fps, "poses": self.poses.tolist(), "caption": self.caption}
        if self.segments is not None:
            obj["segments"] = [s.to_json() for s in self.segments]
        return obj

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (self.id == other.id and self.fps == other.fps and self.caption == other.caption
                and self.segments == other.segments and self.poses.shape == other.poses.shape
                and np.array_equal(self.poses, other.poses))


def tokenize(text: str) -> list[str]:
    return text.lower().split()


# -- motion primitives ----------------------------------------------------
# Each primitive maps phase s in [0, 1] (array) to local joint positions
# (n, 8, 3), forward root travel (n,) and yaw (n,). Amplitude scales vary
# per sample.

def _smooth(s):
    return 0.5 - 0.5 * np.cos(np.pi * s)


def _bump(s):
    return np.sin(np.pi * s)


def _walk(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    swing = 0.3 * a * np.sin(4 * np.pi * s)
    j[:, 6, 2] += swing
    j[:, 7, 2] -= swing
    j[:, 4, 2] += 0.5 * swing
    j[:, 5, 2] -= 0.5 * swing
    j[:, 2, 2] -= 0.6 * swing
    j[:, 3, 2] += 0.6 * swing
    j[:, 0, 1] += 0.03 * np.abs(np.sin(4 * np.pi * s))
    return j, 1.2 * a * s, np.zeros_like(s)


def _turn(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    lift = 0.12 * np.abs(np.sin(3 * np.pi * s))
    j[:, 6, 1] += lift
    j[:, 4, 2] += 0.5 * lift
    j[:, 2, 0] -= 0.1 * _bump(s)
    j[:, 3, 0] += 0.1 * _bump(s)
    return j, np.zeros_like(s), np.pi * a * _smooth(s)


def _sit_curve(w):
    j = np.repeat(REST[None], len(w), axis=0)
    j[:, 0, 1] -= 0.45 * w
    j[:, 0, 2] -= 0.2 * w
    j[:, 1, 1] -= 0.45 * w
    j[:, 2:4, 1] -= 0.3 * w[:, None]
    j[:, 2:4, 2] += 0.25 * w[:, None]
    j[:, 4:6, 2] += 0.35 * w[:, None]
    j[:, 4:6, 1] -= 0.05 * w[:, None]
    return j


def _sit(s, a):
    return _sit_curve(a * _smooth(s)), np.zeros_like(s), np.zeros_like(s)


def _stand(s, a):
    return _sit_curve(a * (1.0 - _smooth(s))), np.zeros_like(s), np.zeros_like(s)


def _wave(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    up = np.clip(2 * _bump(s), 0, 1)
    j[:, 3, 1] += 0.8 * up
    j[:, 3, 0] += (0.1 + 0.15 * a * np.sin(6 * np.pi * s)) * up
    return j, np.zeros_like(s), np.zeros_like(s)


def _jump(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    crouch = np.where(s < 0.3, _bump(s / 0.3), 0.0)
    air = np.where(s >= 0.3, _bump((s - 0.3) / 0.7), 0.0)
    j[:, :, 1] += 0.45 * a * air[:, None]
    j[:, 0, 1] -= 0.25 * crouch
    j[:, 1, 1] -= 0.25 * crouch
    j[:, 4:6, 2] += 0.2 * crouch[:, None]
    j[:, 2:4, 1] += 0.6 * air[:, None]
    return j, np.zeros_like(s), np.zeros_like(s)


def _pick(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    b = a * _bump(s)
    j[:, 1, 1] -= 0.5 * b
    j[:, 1, 2] += 0.4 * b
    j[:, 3, 1] -= 0.85 * b
    j[:, 3, 2] += 0.45 * b
    j[:, 4:6, 2] += 0.15 * b[:, None]
    return j, np.zeros_like(s), np.zeros_like(s)


def _kick(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    b = a * _bump(s) ** 2
    j[:, 7, 2] += 0.7 * b
    j[:, 7, 1] += 0.55 * b
    j[:, 5, 2] += 0.35 * b
    j[:, 5, 1] += 0.15 * b
    j[:, 2, 2] -= 0.15 * b
    return j, np.zeros_like(s), np.zeros_like(s)


def _bend(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    b = a * np.clip(1.6 * _bump(s), 0, 1)
    j[:, 1, 1] -= 0.6 * b
    j[:, 1, 2] += 0.55 * b
    j[:, 2:4, 1] -= 0.55 * b[:, None]
    j[:, 2:4, 2] += 0.5 * b[:, None]
    j[:, 0, 2] -= 0.1 * b
    return j, np.zeros_like(s), np.zeros_like(s)


def _clap(s, a):
    j = np.repeat(REST[None], len(s), axis=0)
    up = np.clip(2 * _bump(s), 0, 1)
    gap = 0.12 + 0.1 * np.cos(8 * np.pi * s)
    j[:, 2, 0] = -0.25 + (0.25 - gap) * up
    j[:, 3, 0] = 0.25 - (0.25 - gap) * up
    j[:, 2:4, 1] += 0.35 * up[:, None]
    j[:, 2:4, 2] += 0.3 * a * up[:, None]
    return j, np.zeros_like(s), np.zeros_like(s)


LIBRARY: dict[str, Callable] = {
    "walk": _walk, "turn": _turn, "sit": _sit, "stand": _stand, "wave": _wave,
    "jump": _jump, "pick": _pick, "kick": _kick, "bend": _bend, "clap": _clap,
}


def _to_world(local: np.ndarray, x0: float, z0: float, yaw0: float, travel, yaw) -> np.ndarray:
    heading = yaw0 + yaw
    c, s = np.cos(heading), np.sin(heading)
    px = x0 + travel * np.sin(yaw0)
    pz = z0 + travel * np.cos(yaw0)
    wx = c[:, None] * local[..., 0] + s[:, None] * local[..., 2] + px[:, None]
    wz = -s[:, None] * local[..., 0] + c[:, None] * local[..., 2] + pz[:, None]
    return np.stack([wx, local[..., 1], wz], axis=-1)


def caption_for(labels: Sequence[str]) -> tuple[str, list[tuple[int, int]]]:
    """Template caption naming primitives in order, plus each phrase's word span."""
    words = ["a", "person"]
    spans = []
    for k, label in enumerate(labels):
        if k > 0:
            words.append("and" if k == len(labels) - 1 and len(labels) > 2 else "then")
        phrase = PHRASES[label].split()
        spans.append((len(words), len(words) + len(phrase) - 1))
        words.extend(phrase)
    return " ".join(words), spans


def generate_sample(rng: np.random.Generator, index: int, min_prims: int, max_prims: int,
                    noise: float = 0.005) -> Sample:
    k = int(rng.integers(min_prims, max_prims + 1))
    labels: list[str] = []
    for _ in range(k):
        choices = [p for p in PRIMITIVES if not labels or p != labels[-1]]
        labels.append(choices[int(rng.integers(len(choices)))])

    x0 = z0 = 0.0
    yaw0 = float(rng.uniform(-np.pi, np.pi))
    frames, spans = [], []
    start = 0
    for label in labels:
        n = int(rng.integers(MIN_DURATION, MAX_DURATION + 1))
        amp = float(rng.uniform(0.8, 1.2))
        s = np.linspace(0.0, 1.0, n)
        local, travel, yaw = LIBRARY[label](s, amp)
        world = _to_world(local, x0, z0, yaw0, travel, yaw)
        if frames:
            prev = frames[-1][-1]
            w = (np.arange(1, BLEND_FRAMES + 1) / (BLEND_FRAMES + 1))[:, None, None]
            world[:BLEND_FRAMES] = (1 - w) * prev + w * world[:BLEND_FRAMES]
        frames.append(world)
        spans.append((start, start + n - 1))
        start += n
        x0 += travel[-1] * np.sin(yaw0)
        z0 += travel[-1] * np.cos(yaw0)
        yaw0 += yaw[-1]

    joints = np.concatenate(frames, axis=0)
    joints = joints + noise * rng.standard_normal(joints.shape)
    joints = joints - joints[:, 0, :].mean(axis=0)
    caption, word_spans = caption_for(labels)
    segments = [Segment(lab, ws, fs) for lab, ws, fs in zip(labels, word_spans, spans)]
    return Sample(f"synth-{index:05d}", joints.reshape(len(joints), POSE_DIM), caption, segments)


def generate_corpus(n: int, seed: int, min_prims: int = 1, max_prims: int = 4) -> list[Sample]:
    """``n`` synthetic samples; sample ``i`` draws from an RNG seeded by ``(seed, i)``."""
    if not 1 <= min_prims <= max_prims <= 4:
        raise ValueError(f"need 1 <= min_prims <= max_prims <= 4, got {min_prims}, {max_prims}")
    if n < 0:
        raise ValueError("n must be non-negative")
    return [generate_sample(np.random.default_rng([seed, i]), i, min_prims, max_prims)
            for i in range(n)]


# -- vocabulary -----------------------------------------------------------
class Vocab:
    def __init__(self, words: Iterable[str]):
        self.itos: list[str] = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK)

    def encode(self, text: str) -> list[int]:
        return [BOS] + [self.id(w) for w in tokenize(text)] + [EOS]

    def decode(self, ids: Iterable[int]) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def to_json(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def from_json(cls, words: list[str]) -> Vocab:
        return cls(words)


def build_vocab(captions: Iterable[str]) -> Vocab:
    """Ids by descending frequency, ties broken lexicographically."""
    counts = Counter(w for c in captions for w in tokenize(c))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocab(sorted(counts, key=lambda w: (-counts[w], w)))


# -- JSONL ----------------------------------------------------------------
def save_jsonl(samples: Iterable[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def _parse_record(obj, lineno: int) -> Sample:
    if not isinstance(obj, dict):
        raise ValueError(f"line {lineno}: record is not a JSON object")
    for key in ("poses", "caption"):
        if key not in obj:
            raise ValueError(f"line {lineno}: missing field {key!r}")
    poses = np.asarray(obj["poses"], dtype=np.float64)
    if poses.ndim != 2 or poses.shape[0] == 0:
        raise ValueError(f"line {lineno}: 'poses' must be a non-empty T_x x c matrix")
    if not np.all(np.isfinite(poses)):
        raise ValueError(f"line {lineno}: 'poses' contains non-finite values")
    segments = None
    if obj.get("segments") is not None:
        try:
            segments = [Segment.from_json(s) for s in obj["segments"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed segment ({exc})") from None
    return Sample(str(obj.get("id", f"line-{lineno}")), poses, str(obj["caption"]), segments,
                  float(obj.get("fps", FPS)))


def load_jsonl(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            samples.append(_parse_record(obj, lineno))
    return samples


def load_keywords(path) -> dict[str, str]:
    """Label → motion-word table from a JSON object file."""
    table = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(table, dict):
        raise ValueError("keyword table must be a JSON object mapping label to word")
    return {str(k): str(v) for k, v in table.items()}


def split(samples: Sequence[Sample], n_first: int) -> tuple[list[Sample], list[Sample]]:
    return list(samples[:n_first]), list(samples[n_first:])
