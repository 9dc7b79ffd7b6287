"""Caption quality (BLEU, ROUGE-L) and attention-based synchronisation scores."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

BLEU_EPS = 1e-9
DEFAULT_TAU = 0.75


# -- text metrics -----------------------------------------------------------
def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
         max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights up to ``max_n`` and brevity penalty.

    ``references[i]`` is a list of reference token lists for candidate
    ``i``. Zero match counts are replaced by ``1e-9`` so short captions do
    not collapse the geometric mean to exactly zero. The brevity penalty
    uses the reference length closest to each candidate (shorter on ties).
    A candidate shorter than ``n`` still counts one (unmatched) ``n``-gram
    slot, so empty or very short outputs lower precision instead of being
    skipped.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references differ in length")
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand = list(cand)
        cand_len += len(cand)
        ref_len += min((len(r) for r in refs), key=lambda L: (abs(L - len(cand)), L))
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            best: Counter = Counter()
            for r in refs:
                best |= _ngrams(list(r), n)
            matches[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 1)
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if t == 0:
            return 0.0
        log_p += math.log((m if m > 0 else BLEU_EPS) / t)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p / max_n)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """LCS F1 (beta = 1)."""
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def mean_rouge_l(candidates, references) -> float:
    scores = [max(rouge_l(c, r) for r in refs) for c, refs in zip(candidates, references)]
    return float(np.mean(scores)) if scores else 0.0


# -- intervals --------------------------------------------------------------
@dataclass(frozen=True)
class Interval:
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid interval [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def __contains__(self, i: int) -> bool:
        return self.start <= i <= self.end


def _overlap(a: Interval, b: Interval) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start) + 1)


def iou(pred: Interval, gt: Interval) -> float:
    inter = _overlap(pred, gt)
    return inter / (pred.length + gt.length - inter)


def iop(pred: Interval, gt: Interval) -> float:
    return _overlap(pred, gt) / pred.length


def element_of(beta_row, gt: Interval) -> bool:
    """Whether the most-attended frame (lowest index on ties) lies in ``gt``."""
    return int(np.argmax(np.asarray(beta_row))) in gt


def predicted_interval(beta_row, tau: float = DEFAULT_TAU) -> Interval:
    """Shortest contiguous frame interval containing the argmax with mass >= ``tau``.

    Among equally short candidates the one holding more mass wins, then the
    one starting earlier. Prefix sums keep this O(T^2) in the worst case.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    beta = np.asarray(beta_row, dtype=np.float64)
    T = len(beta)
    a = int(np.argmax(beta))
    cum = np.concatenate([[0.0], np.cumsum(beta)])
    target = tau * cum[-1] - 1e-12
    for width in range(1, T + 1):
        lo_min, lo_max = max(0, a - width + 1), min(a, T - width)
        starts = np.arange(lo_min, lo_max + 1)
        mass = cum[starts + width] - cum[starts]
        ok = mass >= target
        if ok.any():
            best = starts[ok][np.argmax(mass[ok])]
            return Interval(int(best), int(best + width - 1))
    return Interval(0, T - 1)


# -- synchronisation report ---------------------------------------------------
@dataclass
class WordDiagnostic:
    sample: str
    label: str
    word: str
    step: int | None
    argmax_frame: int | None
    pred_start: int | None
    pred_end: int | None
    gt_start: int
    gt_end: int
    iou: float
    iop: float
    element_of: bool


@dataclass
class SyncReport:
    iou: float
    iop: float
    element_of: float
    n_scored: int
    per_sample: list[dict] = field(default_factory=list)
    words: list[WordDiagnostic] = field(default_factory=list)

    def summary(self) -> dict:
        return {"iou": self.iou, "iop": self.iop, "element_of": self.element_of,
                "n_scored": self.n_scored}

    def to_json(self) -> dict:
        return {**self.summary(), "per_sample": self.per_sample}

    def words_csv(self) -> str:
        cols = ["sample", "label", "word", "step", "argmax_frame", "pred_start", "pred_end",
                "gt_start", "gt_end", "iou", "iop", "element_of"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for d in self.words:
            row = asdict(d)
            w.writerow(["" if row[c] is None else row[c] for c in cols])
        return buf.getvalue()


def locate_word(tokens: Sequence[str], word: str, occurrence: int) -> int | None:
    """Index of the ``occurrence``-th (0-based) appearance of ``word``."""
    seen = 0
    for i, t in enumerate(tokens):
        if t == word:
            if seen == occurrence:
                return i
            seen += 1
    return None


def evaluate_sync(maps: Sequence, tokens: Sequence[Sequence[str]], annotations: Sequence,
                  keywords: Mapping[str, str], tau: float = DEFAULT_TAU,
                  sample_ids: Sequence[str] | None = None) -> SyncReport:
    """Score each annotated segment against the attention row of its motion word.

    ``maps[i]`` is the attention matrix (rows = emitted tokens) or an
    :class:`~synccap.attention.AttentionMap`; ``tokens[i]`` the emitted words
    aligned with those rows; ``annotations[i]`` the ground-truth segments.
    The k-th segment with label L is matched to the k-th emitted occurrence
    of ``keywords[L]``; an unmatched segment scores 0 / 0 / False.
    """
    if not annotations or not any(annotations):
        raise ValueError("no annotated segments to evaluate")
    if not len(maps) == len(tokens) == len(annotations):
        raise ValueError("maps, tokens and annotations must align")
    ids = list(sample_ids) if sample_ids is not None else [str(i) for i in range(len(maps))]
    words: list[WordDiagnostic] = []
    per_sample = []
    for sid, amap, toks, segs in zip(ids, maps, tokens, annotations):
        beta = np.asarray(getattr(amap, "beta", amap), dtype=np.float64)
        seen: Counter = Counter()
        rows = []
        for seg in segs:
            word = keywords.get(seg.label, seg.label)
            k = seen[seg.label]
            seen[seg.label] += 1
            gt = Interval(*seg.frame_span)
            step = locate_word(toks, word, k)
            if step is None or step >= len(beta):
                d = WordDiagnostic(sid, seg.label, word, None, None, None, None, gt.start, gt.end,
                                   0.0, 0.0, False)
            else:
                row = beta[step]
                pred = predicted_interval(row, tau)
                d = WordDiagnostic(sid, seg.label, word, step, int(np.argmax(row)), pred.start,
                                   pred.end, gt.start, gt.end, iou(pred, gt), iop(pred, gt),
                                   element_of(row, gt))
            rows.append(d)
        words.extend(rows)
        if rows:
            per_sample.append({"id": sid, "iou": float(np.mean([d.iou for d in rows])),
                               "iop": float(np.mean([d.iop for d in rows])),
                               "element_of": float(np.mean([d.element_of for d in rows]))})
    return SyncReport(float(np.mean([d.iou for d in words])), float(np.mean([d.iop for d in words])),
                      float(np.mean([d.element_of for d in words])), len(words), per_sample, words)


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
