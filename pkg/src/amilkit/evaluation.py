"""Corpus-level (ranking) and sentence-level (classification) evaluation.

Corpus-level evaluation de-abstracts bag predictions onto pair triples,
ranks them by softmax score, and reports AUC of the precision/recall curve,
the maximum F1 along the curve, and precision at fixed cutoffs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

from .bagging import Bag
from .kgstore import NA_RELATION

Triple = tuple[str, str, str]


@dataclass(frozen=True)
class TriplePrediction:
    triple: Triple
    score: float
    bag_key: tuple = ()


def deabstract(
    bag_probs: list[tuple[Bag, list[float]]], labels: list[str]
) -> list[TriplePrediction]:
    """Candidate triple predictions from bag probabilities.

    Every non-NA relation is scored against every constituent entity pair
    of the bag; a triple seen from several bags keeps its maximum score.
    Pair-mode bags follow the same path with a single constituent.
    """
    best: dict[Triple, TriplePrediction] = {}
    for bag, probs in bag_probs:
        pairs = bag.constituent_pairs()
        if not pairs:
            raise ValueError(f"bag {bag.key} has no constituent pairs")
        for rel, p in zip(labels, probs):
            if rel == NA_RELATION:
                continue
            for e1, e2 in pairs:
                t = (e1, rel, e2)
                prior = best.get(t)
                if prior is None or p > prior.score:
                    best[t] = TriplePrediction(t, float(p), bag.key)
    return sorted(best.values(), key=lambda x: (-x.score, x.triple))


def corpus_eval(
    predictions: list[TriplePrediction],
    gold: set[Triple],
    p_at: tuple[int, ...] = (10, 50, 100),
) -> dict:
    """AUC, max F1, and P@k over the ranked prediction list."""
    if not gold:
        raise ValueError("empty gold triple set")
    ranked = sorted(predictions, key=lambda x: (-x.score, x.triple))
    curve = []
    tp = 0
    auc = 0.0
    best_f1 = 0.0
    prev_p, prev_r = 1.0, 0.0
    for rank, pred in enumerate(ranked, start=1):
        if pred.triple in gold:
            tp += 1
        p = tp / rank
        r = tp / len(gold)
        auc += (r - prev_r) * (p + prev_p) / 2.0
        if p + r > 0:
            best_f1 = max(best_f1, 2 * p * r / (p + r))
        curve.append((rank, pred.score, p, r))
        prev_p, prev_r = p, r
    p_at_k = {}
    for k in p_at:
        top = min(k, len(ranked))
        if top == 0:
            p_at_k[k] = 0.0
        else:
            p_at_k[k] = sum(1 for pr in ranked[:top] if pr.triple in gold) / top
    return {"auc": auc, "f1": best_f1, "p_at_k": p_at_k, "curve": curve}


def sentence_eval(pairs: list[tuple[str, str]]) -> dict[str, float]:
    """Micro P/R/F1 over (predicted, gold) label pairs.

    A non-NA prediction matching gold is a TP; a non-NA prediction on an
    unlinked pair (gold NA) or with the wrong relation is an FP, the latter
    also counting an FN for the gold class; predicting NA on a positive is
    an FN.
    """
    tp = fp = fn = 0
    for pred, gold in pairs:
        if pred != NA_RELATION:
            if pred == gold:
                tp += 1
            else:
                fp += 1
                if gold != NA_RELATION:
                    fn += 1
        elif gold != NA_RELATION:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1,
            "tp": tp, "fp": fp, "fn": fn}


def support_index(instances) -> dict[Triple, int]:
    """Sentence support count per triple over the full extracted dataset."""
    counts: dict[Triple, int] = {}
    for inst in instances:
        counts[inst.triple] = counts.get(inst.triple, 0) + 1
    return counts


RARE_MAX_SUPPORT = 7


def pareto_split(support: dict[Triple, int]) -> dict[str, set[Triple]]:
    """Rare (support <= 7) vs common (support >= 8) triples."""
    rare = {t for t, c in support.items() if c <= RARE_MAX_SUPPORT}
    return {"rare": rare, "common": set(support) - rare}


def report(metrics: dict, json_path: str, curve_path: str | None = None) -> None:
    """Write metrics JSON and, if requested, the PR-curve CSV.

    Output is byte-stable for identical inputs.
    """
    payload = {"schema": 1}
    payload.update({k: v for k, v in metrics.items() if k != "curve"})
    if "p_at_k" in payload:
        payload["p_at_k"] = {str(k): v for k, v in payload["p_at_k"].items()}
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")
    if curve_path is not None:
        with open(curve_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["rank", "score", "precision", "recall"])
            for rank, score, p, r in metrics.get("curve", []):
                w.writerow([rank, f"{score:.10g}", f"{p:.10g}", f"{r:.10g}"])
