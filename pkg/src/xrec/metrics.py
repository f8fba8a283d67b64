"""Evaluation: rating accuracy, text quality, explainability, coherence rule.

Metric tokenization is fixed here once: lowercase, punctuation split into
separate single-character tokens, whitespace-delimited words.  BLEU is
corpus-level modified n-gram precision with brevity penalty; n-gram orders
that the candidates cannot produce are skipped, and produced orders with
zero matches contribute log(1e-9) so tiny corpora do not collapse to zero.
ROUGE scores are per-pair and corpus-averaged; ROUGE-L uses the longest
common subsequence.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, asdict

from .predictions import PredictionRow

BLEU_EPS = 1e-9

_token_re = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def metric_tokens(text: str) -> list[str]:
    """Lowercase word tokens with punctuation as separate tokens."""
    return _token_re.findall(text.lower())


def rmse_mae(pred: list[float], truth: list[int]) -> tuple[float, float]:
    """Root-mean-square and mean-absolute error over paired lists."""
    if len(pred) != len(truth):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(truth)} truths")
    if not pred:
        raise ValueError("cannot score an empty prediction list")
    sq = sum((p - t) ** 2 for p, t in zip(pred, truth)) / len(pred)
    ab = sum(abs(p - t) for p, t in zip(pred, truth)) / len(pred)
    return math.sqrt(sq), ab


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: list[str], references: list[str], n: int) -> float:
    """Corpus-level BLEU-n with uniform weights and brevity penalty.

    One reference per candidate.  For each order: an order with no candidate
    n-grams anywhere in the corpus is dropped (weights renormalized over the
    rest); an order with candidate n-grams but zero matches contributes
    log(BLEU_EPS).
    """
    if not candidates or len(candidates) != len(references):
        raise ValueError("need equal-length, non-empty candidate and reference lists")
    cand_toks = [metric_tokens(c) for c in candidates]
    ref_toks = [metric_tokens(r) for r in references]

    cand_len = sum(len(t) for t in cand_toks)
    ref_len = sum(len(t) for t in ref_toks)
    if cand_len == 0:
        return 0.0

    log_terms = []
    for order in range(1, n + 1):
        matches = 0
        total = 0
        for ct, rt in zip(cand_toks, ref_toks):
            cg = _ngrams(ct, order)
            rg = _ngrams(rt, order)
            total += sum(cg.values())
            matches += sum(min(c, rg[g]) for g, c in cg.items())
        if total == 0:
            continue
        log_terms.append(math.log(matches / total) if matches > 0 else math.log(BLEU_EPS))
    if not log_terms:
        return 0.0

    geo = sum(log_terms) / len(log_terms)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(geo)


def _lcs_len(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidates: list[str], references: list[str]) -> tuple[float, float, float]:
    """(ROUGE-1 recall, ROUGE-2 recall, ROUGE-L F1), averaged over pairs."""
    if not candidates or len(candidates) != len(references):
        raise ValueError("need equal-length, non-empty candidate and reference lists")
    r1_sum = r2_sum = rl_sum = 0.0
    for cand, ref in zip(candidates, references):
        ct = metric_tokens(cand)
        rt = metric_tokens(ref)
        for order, acc in ((1, "r1"), (2, "r2")):
            rg = _ngrams(rt, order)
            cg = _ngrams(ct, order)
            total_ref = sum(rg.values())
            overlap = sum(min(c, cg[g]) for g, c in rg.items())
            score = overlap / total_ref if total_ref > 0 else 0.0
            if acc == "r1":
                r1_sum += score
            else:
                r2_sum += score
        lcs = _lcs_len(ct, rt)
        precision = lcs / len(ct) if ct else 0.0
        recall = lcs / len(rt) if rt else 0.0
        rl_sum += (2 * precision * recall) / (precision + recall) if precision + recall > 0 else 0.0
    n = len(candidates)
    return r1_sum / n, r2_sum / n, rl_sum / n


def _contains_feature(text_tokens: list[str], feature: str) -> bool:
    ft = metric_tokens(feature)
    if not ft:
        return False
    span = len(ft)
    return any(text_tokens[i : i + span] == ft for i in range(len(text_tokens) - span + 1))


@dataclass(frozen=True)
class ExplainabilityScores:
    fmr: float
    fcr: float
    div: float
    usr: float
    div_defined: bool = True


def explainability(
    pred_texts: list[str],
    record_features: list[tuple[str, ...]],
    feature_universe: set[str] | None = None,
) -> ExplainabilityScores:
    """Feature-match rate, feature coverage, pairwise diversity, unique ratio.

    FMR: fraction of records whose own features appear (as a contiguous
    token run) in the generated text.  FCR: distinct universe features found
    in any generated text over the universe size.  DIV: mean feature-set
    intersection size over all unordered text pairs (lower is more diverse);
    undefined below two texts and then reported as 0 with the flag cleared.
    USR: distinct generated strings over text count.
    """
    if len(pred_texts) != len(record_features):
        raise ValueError("need one feature tuple per generated text")
    if not pred_texts:
        raise ValueError("cannot score an empty prediction list")
    n = len(pred_texts)
    universe = (
        set(feature_universe)
        if feature_universe is not None
        else {f for feats in record_features for f in feats}
    )
    tokens = [metric_tokens(t) for t in pred_texts]

    matched = sum(
        1 for toks, feats in zip(tokens, record_features) if any(_contains_feature(toks, f) for f in feats)
    )
    fmr = matched / n

    found_sets = [{f for f in universe if _contains_feature(toks, f)} for toks in tokens]
    covered = set().union(*found_sets) if found_sets else set()
    fcr = len(covered) / len(universe) if universe else 0.0

    if n >= 2:
        pair_sum = 0
        pairs = 0
        for i in range(n):
            for j in range(i + 1, n):
                pair_sum += len(found_sets[i] & found_sets[j])
                pairs += 1
        div = pair_sum / pairs
        div_defined = True
    else:
        div = 0.0
        div_defined = False

    usr = len(set(pred_texts)) / n
    return ExplainabilityScores(fmr=fmr, fcr=fcr, div=div, usr=usr, div_defined=div_defined)


def coherent(y: float, y_hat: int) -> int:
    """1 when the predicted rating and the sentiment rating differ by at most one point."""
    if not 1.0 <= y <= 5.0:
        raise ValueError(f"predicted rating {y} outside [1,5]")
    if not isinstance(y_hat, int) or not 1 <= y_hat <= 5:
        raise ValueError(f"sentiment rating {y_hat!r} outside 1..5")
    return 1 if abs(y - y_hat) <= 1.0 else 0


@dataclass
class MetricsReport:
    """All evaluation numbers for one prediction file.

    BLEU, ROUGE, FMR, FCR, USR and coherence are percentages in [0, 100];
    RMSE, MAE and DIV are absolute.
    """

    rmse: float
    mae: float
    bleu1: float
    bleu4: float
    rouge1_recall: float
    rouge2_recall: float
    rougeL_f1: float
    fmr: float
    fcr: float
    div: float
    usr: float
    div_defined: bool = True
    coherence_rate: float | None = None

    def __post_init__(self):
        for name in ("bleu1", "bleu4", "rouge1_recall", "rouge2_recall", "rougeL_f1", "fmr", "fcr", "usr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name} must be a percentage in [0,100], got {v}")
        if self.coherence_rate is not None and not 0.0 <= self.coherence_rate <= 100.0 + 1e-9:
            raise ValueError(f"coherence_rate must be in [0,100], got {self.coherence_rate}")
        if self.rmse < self.mae - 1e-12:
            raise ValueError("rmse cannot be smaller than mae")

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path: str) -> "MetricsReport":
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))

    def csv_row(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        d = asdict(self)
        writer.writerow(d.keys())
        writer.writerow(d.values())
        return buf.getvalue()


def evaluate_predictions(
    rows: list[PredictionRow], feature_universe: set[str] | None = None
) -> MetricsReport:
    """Score one prediction file into a MetricsReport (coherence left unset)."""
    if not rows:
        raise ValueError("no prediction rows to evaluate")
    rmse, mae = rmse_mae([r.rating_pred for r in rows], [r.rating_true for r in rows])
    cands = [r.explanation_pred for r in rows]
    refs = [r.explanation_true for r in rows]
    b1 = bleu(cands, refs, 1)
    b4 = bleu(cands, refs, 4)
    r1, r2, rl = rouge(cands, refs)
    ex = explainability(cands, [r.features for r in rows], feature_universe)
    return MetricsReport(
        rmse=rmse,
        mae=mae,
        bleu1=100.0 * b1,
        bleu4=100.0 * b4,
        rouge1_recall=100.0 * r1,
        rouge2_recall=100.0 * r2,
        rougeL_f1=100.0 * rl,
        fmr=100.0 * ex.fmr,
        fcr=100.0 * ex.fcr,
        div=ex.div,
        usr=100.0 * ex.usr,
        div_defined=ex.div_defined,
    )


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Field-wise mean across split reports, as used for final tables."""
    if not reports:
        raise ValueError("no reports to average")

    def avg(name):
        return sum(getattr(r, name) for r in reports) / len(reports)

    coh = [r.coherence_rate for r in reports if r.coherence_rate is not None]
    return MetricsReport(
        rmse=avg("rmse"),
        mae=avg("mae"),
        bleu1=avg("bleu1"),
        bleu4=avg("bleu4"),
        rouge1_recall=avg("rouge1_recall"),
        rouge2_recall=avg("rouge2_recall"),
        rougeL_f1=avg("rougeL_f1"),
        fmr=avg("fmr"),
        fcr=avg("fcr"),
        div=avg("div"),
        usr=avg("usr"),
        div_defined=all(r.div_defined for r in reports),
        coherence_rate=sum(coh) / len(coh) if coh else None,
    )
