"""Mini-batch training with bias-corrected adaptive moments."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tt
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PAD, Sample, Vocab
from .metrics import bleu
from .model import ModelConfig, SyncTransformer
from .objectives import LAMBDA_0, LAMBDA_M, MARGIN, batch_losses

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    lambda_0: float = LAMBDA_0
    lambda_m: float = LAMBDA_M
    margin: float = MARGIN
    clip_norm: float | None = 5.0
    eval_every: int = 1
    checkpoint: str | None = None

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @classmethod
    def from_json(cls, obj: dict) -> TrainConfig:
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train-config keys: {sorted(unknown)}")
        return cls(**obj)


def load_config_file(path) -> dict:
    """Read a JSON or TOML config file into a dict."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        import tomli
        return tomli.loads(text)
    return json.loads(text)


# -- batching -------------------------------------------------------------
@dataclass
class Batch:
    poses: np.ndarray        # (B, T_x, c), zero padded
    frame_mask: np.ndarray   # (B, T_x)
    lengths: np.ndarray      # (B,)
    dec_in: np.ndarray       # (B, T_y) BOS w1 .. wn, PAD padded
    targets: np.ndarray      # (B, T_y) w1 .. wn EOS, PAD padded
    target_mask: np.ndarray  # (B, T_y)

    def __len__(self) -> int:
        return len(self.lengths)


def pad_batch(samples: Sequence[Sample], vocab: Vocab) -> Batch:
    if not samples:
        raise ValueError("cannot batch zero samples")
    B = len(samples)
    lengths = np.array([s.n_frames for s in samples])
    c = samples[0].poses.shape[1]
    poses = np.zeros((B, lengths.max(), c))
    frame_mask = np.zeros((B, lengths.max()), dtype=bool)
    for i, s in enumerate(samples):
        poses[i, : s.n_frames] = s.poses
        frame_mask[i, : s.n_frames] = True
    encoded = [vocab.encode(s.caption) for s in samples]
    T_y = max(len(e) for e in encoded) - 1
    dec_in = np.full((B, T_y), PAD, dtype=np.int64)
    targets = np.full((B, T_y), PAD, dtype=np.int64)
    for i, ids in enumerate(encoded):
        dec_in[i, : len(ids) - 1] = ids[:-1]
        targets[i, : len(ids) - 1] = ids[1:]
    return Batch(poses, frame_mask, lengths, dec_in, targets, targets != PAD)


def batch_loss(model: SyncTransformer, batch: Batch, cfg: TrainConfig):
    logits, cross = model.forward_teacher_forced(batch.poses, batch.frame_mask, batch.dec_in,
                                                 batch.target_mask)
    return batch_losses(logits, cross, batch.targets, batch.target_mask, batch.lengths,
                        cfg.lambda_0, cfg.lambda_m, cfg.margin)


# -- optimiser ------------------------------------------------------------
class Adam:
    """Adaptive moments with bias correction and optional global-norm clipping."""

    def __init__(self, params: dict[str, tt.Tensor], lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm: float | None = None):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values()
                             if p.grad is not None))

    def step(self) -> float:
        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale if scale != 1.0 else p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return norm

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int) -> None:
        for k in self.m:
            self.m[k] = np.array(tensors[f"adam.m.{k}"])
            self.v[k] = np.array(tensors[f"adam.v.{k}"])
        self.t = t


# -- training loop ----------------------------------------------------------
@dataclass
class EpochLog:
    epoch: int
    loss_lang: float
    loss_0: float
    loss_m: float
    total: float
    bleu4: float | None
    seconds: float
    rng_digest: str

    def line(self) -> str:
        b = "n/a" if self.bleu4 is None else f"{self.bleu4:.4f}"
        return (f"epoch {self.epoch} loss_lang {self.loss_lang:.5f} loss_0 {self.loss_0:.5f} "
                f"loss_m {self.loss_m:.6f} total {self.total:.5f} bleu4 {b}")


@dataclass
class TrainResult:
    model: SyncTransformer
    vocab: Vocab
    log: list[EpochLog] = field(default_factory=list)
    best_bleu: float | None = None
    best_params: dict[str, np.ndarray] | None = None
    optimizer: Adam | None = None
    epoch: int = 0
    rng_state: dict | None = None


def _rng_digest(rng: np.random.Generator) -> str:
    state = json.dumps(rng.bit_generator.state, sort_keys=True, default=str)
    return hashlib.sha256(state.encode()).hexdigest()[:16]


def corpus_bleu4(model: SyncTransformer, vocab: Vocab, samples: Sequence[Sample]) -> float:
    cands, refs = [], []
    for s in samples:
        ids, _ = model.generate(s.poses)
        cands.append(vocab.decode(ids))
        refs.append([s.words()])
    return bleu(cands, refs, 4)


def train(samples: Sequence[Sample], model_cfg: ModelConfig, cfg: TrainConfig, vocab: Vocab,
          eval_samples: Sequence[Sample] | None = None, resume: str | Path | None = None,
          on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Teacher-forced training on ``samples``.

    Mini-batches are drawn from a generator seeded with ``cfg.seed``; the
    model is initialised from the same seed. When ``eval_samples`` is given,
    greedy-decoded BLEU@4 is tracked every ``eval_every`` epochs and the
    best parameters are kept. ``resume`` continues from a checkpoint,
    including optimiser moments and data-order RNG.
    """
    if not samples:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 0
    if resume is not None:
        ck = load_checkpoint(resume)
        model_cfg = ck.config
        model = SyncTransformer(model_cfg, ck.params)
        vocab = ck.vocab
        opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm)
        if ck.extra:
            opt.load_state(ck.extra, int(ck.meta.get("adam_step", 0)))
        start_epoch = int(ck.meta.get("epoch", 0))
        if "rng_state" in ck.meta:
            rng.bit_generator.state = ck.meta["rng_state"]
    else:
        model = SyncTransformer(model_cfg, seed=cfg.seed)
        opt = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.clip_norm)

    result = TrainResult(model, vocab, optimizer=opt)
    n = len(samples)
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            batch = pad_batch([samples[i] for i in order[start:start + cfg.batch_size]], vocab)
            model.zero_grad()
            parts = batch_loss(model, batch, cfg)
            if not math.isfinite(float(parts.total)):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            parts.total.backward()
            opt.step()
            sums += [parts.loss_lang, parts.loss_0, parts.loss_m, float(parts.total)]
            n_batches += 1
        means = sums / max(n_batches, 1)
        score = None
        if eval_samples and cfg.eval_every and epoch % cfg.eval_every == 0:
            score = corpus_bleu4(model, vocab, eval_samples)
            if result.best_bleu is None or score > result.best_bleu:
                result.best_bleu = score
                result.best_params = {k: p.data.copy() for k, p in model.params.items()}
        entry = EpochLog(epoch, *means, score, time.perf_counter() - t0, _rng_digest(rng))
        result.log.append(entry)
        log.info(entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    result.rng_state = rng.bit_generator.state
    result.epoch = start_epoch + cfg.epochs
    return result


def save_training(result: TrainResult, path, best: bool = False) -> None:
    """Write the final (or best held-out) parameters with resume metadata."""
    model = result.model
    params = {k: p.data for k, p in model.params.items()}
    if best:
        if result.best_params is None:
            raise ValueError("no held-out evaluation was run; nothing to save as best")
        params = result.best_params
    opt = result.optimizer
    meta = {"epoch": result.epoch, "adam_step": opt.t if opt else 0,
            "rng_state": result.rng_state}
    save_checkpoint(path, model.cfg, result.vocab, params,
                    extra=None if best or opt is None else opt.state(), meta=meta)


def write_log(entries: Sequence[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(asdict(e)) + "\n")
