"""Greedy captioning of a corpus and the combined text/sync report."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .attention import AttentionMap
from .data import KEYWORDS, Sample, Vocab
from .metrics import DEFAULT_TAU, SyncReport, bleu, evaluate_sync, mean_rouge_l
from .model import SyncTransformer

METRICS = ("bleu", "rouge", "sync")


@dataclass
class Caption:
    id: str
    ids: list[int]
    tokens: list[str]      # one per attention row, EOS included when emitted
    words: list[str]       # caption words, EOS stripped
    attention: AttentionMap

    @property
    def text(self) -> str:
        return " ".join(self.words)


def caption_corpus(model: SyncTransformer, vocab: Vocab, samples: Sequence[Sample]) -> list[Caption]:
    out = []
    for s in samples:
        ids, amap = model.generate(s.poses)
        tokens = [vocab.itos[i] for i in ids]
        amap.tokens = tokens
        out.append(Caption(s.id, ids, tokens, vocab.decode(ids), amap))
    return out


def parse_metrics(spec: str) -> list[str]:
    names = [m.strip() for m in spec.split(",") if m.strip()]
    bad = [m for m in names if m not in METRICS]
    if bad or not names:
        raise ValueError(f"unknown metrics {bad}; choose from {','.join(METRICS)}")
    return names


def build_report(captions: Sequence[Caption], samples: Sequence[Sample], metrics: Sequence[str],
                 tau: float = DEFAULT_TAU, keywords: Mapping[str, str] = KEYWORDS
                 ) -> tuple[dict, SyncReport | None]:
    """Report dict with ``bleu1..bleu4``, ``rouge_l`` and sync keys as requested."""
    report: dict = {"n_samples": len(samples)}
    cands = [c.words for c in captions]
    refs = [s.words() for s in samples]
    if "bleu" in metrics:
        for n in range(1, 5):
            report[f"bleu{n}"] = bleu(cands, [[r] for r in refs], n)
    if "rouge" in metrics:
        report["rouge_l"] = mean_rouge_l(cands, [[r] for r in refs])
    sync = None
    if "sync" in metrics:
        if any(s.segments is None for s in samples):
            raise ValueError("sync metrics need segment annotations on every sample")
        sync = evaluate_sync([c.attention for c in captions], [c.tokens for c in captions],
                             [s.segments for s in samples], keywords, tau,
                             [s.id for s in samples])
        report.update(sync.summary())
        report["tau"] = tau
        report["mean_m0_over_T"] = float(np.mean(
            [c.attention.centers[0] / s.n_frames for c, s in zip(captions, samples)]))
    return report, sync
