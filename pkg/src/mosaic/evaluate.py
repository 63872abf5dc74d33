"""Top-N ranking metrics over the held-out test period.

The candidate set for each user is the set of items shown to that user in
the test period (clicked and unclicked); the relevant set is the clicked
subset. Both metrics use binary relevance and an achievable ideal, so a
perfect ranking scores exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import InteractionLog
from .model import LatentModel


@dataclass
class RankedList:
    user: int
    items: list  # candidate items, best first; score ties broken by item id
    relevant: set


def rank_for_user(model: LatentModel, u: int, candidates) -> list:
    """Sort candidates by score descending, ties by ascending item id."""
    cand = list(candidates)
    scores = model.V[cand] @ model.U[u]
    order = sorted(range(len(cand)), key=lambda j: (-scores[j], cand[j]))
    return [cand[j] for j in order]


def average_precision_at_k(ranked: RankedList, k: int) -> float:
    if not ranked.relevant:
        return 0.0
    hits = 0
    total = 0.0
    for j, item in enumerate(ranked.items[:k], start=1):
        if item in ranked.relevant:
            hits += 1
            total += hits / j
    return total / min(k, len(ranked.relevant))


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    if not ranked.relevant:
        return 0.0
    dcg = 0.0
    for j, item in enumerate(ranked.items[:k], start=1):
        if item in ranked.relevant:
            dcg += 1.0 / math.log2(1 + j)
    ideal = sum(1.0 / math.log2(1 + j) for j in range(1, min(k, len(ranked.relevant)) + 1))
    return dcg / ideal


def map_at_k(ranked_lists, k: int) -> float:
    """Mean AP over all users; users without relevant items count as 0."""
    lists = list(ranked_lists)
    if not lists:
        raise ValueError("need at least one user")
    return float(np.mean([average_precision_at_k(r, k) for r in lists]))


def mean_ndcg_at_k(ranked_lists, k: int) -> float:
    lists = list(ranked_lists)
    if not lists:
        raise ValueError("need at least one user")
    return float(np.mean([ndcg_at_k(r, k) for r in lists]))


def build_ranked_lists(model: LatentModel, test: InteractionLog) -> list:
    """Rank every test user's candidate items (their test-period items)."""
    out = []
    for u in range(test.n_users):
        rows = test.user_rows(u)
        items = test.items[rows]
        labels = test.labels[rows]
        if len(items) == 0:
            continue
        candidates = sorted(set(int(i) for i in items))
        relevant = set(int(i) for i in items[labels])
        out.append(RankedList(user=u, items=rank_for_user(model, u, candidates), relevant=relevant))
    return out


def evaluate_model(model: LatentModel, test: InteractionLog, k_values=(5, 10)) -> dict:
    """Metric values {(metric, K): value} for one model on the test split."""
    lists = build_ranked_lists(model, test)
    out = {}
    for k in k_values:
        out[("map", k)] = map_at_k(lists, k)
        out[("ndcg", k)] = mean_ndcg_at_k(lists, k)
    return out


def metrics_to_csv(results: dict) -> str:
    """results: {model_name: {(metric, K): value}} -> CSV text."""
    lines = ["model_name,metric,K,value"]
    for name in results:
        for (metric, k) in sorted(results[name]):
            lines.append(f"{name},{metric},{k},{results[name][(metric, k)]:.6f}")
    return "\n".join(lines) + "\n"
