"""Ranking metrics, scorers, and the two trivial baselines.

A scorer answers two questions: pairwise triplet scores for AUC, and a
score vector over ranking candidates for retrieval. The trained model
scores pairs directly; the teacher-projected variant only defines
probabilities over a triplet's two sides, so retrieval ranks candidates
by their summed head-to-head win probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .catalog import Catalog, PairSet, Triplet
from .distill import AttentionParams, attention_forward, build_teacher
from .errors import InputError, SamplingError
from .linalg import softmax2
from .rules import RuleMasks, RuleSet
from .student import EncoderParams, forward_path

OBSERVED = "observed"
UNOBSERVED = "unobserved"
ALL = "all"


@dataclass
class EvalReport:
    auc: float
    n_triplets: int
    per_rule: dict[int, float] | None = None


@dataclass
class RetrievalReport:
    mrr: float
    t_candidates: int
    split: str
    n_queries: int


def auc(scores) -> float:
    """Fraction of triplets with m_ij > m_ik; ties count one half."""
    scores = list(scores)
    if not scores:
        raise InputError("auc needs at least one scored triplet")
    total = 0.0
    for m_ij, m_ik in scores:
        if m_ij > m_ik:
            total += 1.0
        elif m_ij == m_ik:
            total += 0.5
    return total / len(scores)


class PairScorer:
    """Base for scorers defined by a per-pair score function."""

    def score(self, i: int, j: int) -> float:
        raise NotImplementedError

    def triplet_scores(self, i: int, j: int, k: int) -> tuple[float, float]:
        return self.score(i, j), self.score(i, k)

    def rank_scores(self, i: int, candidates) -> np.ndarray:
        return np.array([self.score(i, int(j)) for j in candidates], dtype=float)


class ModelScorer(PairScorer):
    """Inner product of cached latent codes (the plain trained network)."""

    def __init__(self, params: EncoderParams, catalog: Catalog):
        self.z_tops = forward_path(params.top, catalog.top_input_matrix())[-1]
        self.z_bottoms = forward_path(params.bottom, catalog.bottom_input_matrix())[-1]

    def score(self, i: int, j: int) -> float:
        return float(self.z_tops[i] @ self.z_bottoms[j])

    def rank_scores(self, i: int, candidates) -> np.ndarray:
        return self.z_bottoms[np.asarray(candidates, dtype=np.int64)] @ self.z_tops[i]


class PopScorer(PairScorer):
    """Bottom popularity in the training pairs, independent of the top."""

    def __init__(self, train_pairs: PairSet):
        self.counts: dict[int, int] = {}
        for _, j in train_pairs:
            self.counts[j] = self.counts.get(j, 0) + 1

    def score(self, i: int, j: int) -> float:
        return float(self.counts.get(j, 0))


_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RandScorer(PairScorer):
    """Uniform scores, deterministic per (seed, i, j) via integer mixing."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64

    def score(self, i: int, j: int) -> float:
        h = _splitmix64(_splitmix64(_splitmix64(self.seed) ^ (i & _MASK64)) ^ (j & _MASK64))
        return h / 2.0**64


class TeacherScorer:
    """Scores through the rule-projected distribution at test time.

    AUC compares the two teacher probabilities of each triplet; retrieval
    runs a round-robin tournament and ranks candidates by their summed
    win probability.
    """

    def __init__(
        self,
        params: EncoderParams,
        attention: AttentionParams,
        rules: RuleSet,
        catalog: Catalog,
        c: float,
    ):
        if attention is None:
            raise InputError("teacher scoring needs trained attention parameters")
        self.inner = ModelScorer(params, catalog)
        self.attention = attention
        self.masks = RuleMasks(rules, catalog)
        self.catalog = catalog
        self.c = c

    def distribution(self, i: int, j: int, k: int) -> tuple[float, float]:
        m_ij = self.inner.score(i, j)
        m_ik = self.inner.score(i, k)
        p = softmax2(m_ij, m_ik)
        constraints = self.masks.constraints_for(i, j, k)
        if not constraints:
            return p
        rule_ids = [rid for rid, _, _ in constraints]
        lam, _ = attention_forward(
            self.attention,
            self.catalog.top_input_matrix()[i],
            self.catalog.bottom_input_matrix()[j],
            self.catalog.bottom_input_matrix()[k],
            rule_ids,
        )
        confidences = {rid: float(l) for rid, l in zip(rule_ids, lam)}
        return build_teacher(p, constraints, confidences, self.c).q

    def triplet_scores(self, i: int, j: int, k: int) -> tuple[float, float]:
        return self.distribution(i, j, k)

    def rank_scores(self, i: int, candidates) -> np.ndarray:
        candidates = [int(c) for c in candidates]
        totals = np.zeros(len(candidates))
        for a in range(len(candidates)):
            for b in range(a + 1, len(candidates)):
                q_a, q_b = self.distribution(i, candidates[a], candidates[b])
                totals[a] += q_a
                totals[b] += q_b
        return totals


def pop_baseline(train_pairs: PairSet) -> PopScorer:
    return PopScorer(train_pairs)


def rand_baseline(seed: int) -> RandScorer:
    return RandScorer(seed)


def evaluate_triplets(
    scorer,
    triplets: list[Triplet],
    rules: RuleSet | None = None,
    catalog: Catalog | None = None,
) -> EvalReport:
    """AUC over triplets, optionally with the per-rule breakdown."""
    pairs = [scorer.triplet_scores(t.i, t.j, t.k) for t in triplets]
    report = EvalReport(auc=auc(pairs), n_triplets=len(triplets))
    if rules is not None and catalog is not None:
        report.per_rule = per_rule_eval(scorer, rules, catalog, triplets, scored=pairs)
    return report


def per_rule_eval(
    scorer, rules: RuleSet, catalog: Catalog, triplets: list[Triplet], scored=None
) -> dict[int, float]:
    """AUC restricted to triplets whose activated set contains each rule.

    Rules that never activate are absent from the result.
    """
    if not triplets:
        raise InputError("per-rule evaluation needs at least one triplet")
    masks = RuleMasks(rules, catalog)
    if scored is None:
        scored = [scorer.triplet_scores(t.i, t.j, t.k) for t in triplets]
    buckets: dict[int, list[tuple[float, float]]] = {}
    for t, pair in zip(triplets, scored):
        for rid, _, _ in masks.constraints_for(t.i, t.j, t.k):
            buckets.setdefault(rid, []).append(pair)
    return {rid: auc(bucket) for rid, bucket in sorted(buckets.items())}


def mrr_retrieval(
    scorer,
    catalog: Catalog,
    test_pairs: PairSet,
    train_pairs: PairSet,
    t_candidates: int,
    seed: int,
    split: str = ALL,
) -> RetrievalReport:
    """Mean reciprocal rank of the positive among T ranked candidates.

    One query per test pair: its bottom is the single positive, the other
    T-1 candidates are sampled from bottoms not positive for that top in
    either pair set. `split` keeps only queries whose top does (observed)
    or does not (unobserved) appear in the training pairs. Ranking ties
    break by ascending bottom item id.
    """
    if t_candidates < 2:
        raise InputError("t_candidates must be >= 2")
    if split not in (OBSERVED, UNOBSERVED, ALL):
        raise InputError(f"unknown split {split!r}")
    known_positive: dict[int, set[int]] = {}
    for i, j in list(train_pairs) + list(test_pairs):
        known_positive.setdefault(i, set()).add(j)
    train_tops = {i for i, _ in train_pairs}
    rng = np.random.default_rng(seed)
    rr_sum = 0.0
    n_queries = 0
    for i, j in test_pairs:
        observed = i in train_tops
        if split == OBSERVED and not observed:
            continue
        if split == UNOBSERVED and observed:
            continue
        pool = np.array(
            [b for b in range(catalog.n_bottoms) if b not in known_positive[i]],
            dtype=np.int64,
        )
        if pool.size < t_candidates - 1:
            raise SamplingError(
                f"top {catalog.tops[i].id!r}: only {pool.size} candidate negatives, "
                f"need {t_candidates - 1}"
            )
        negatives = rng.choice(pool, size=t_candidates - 1, replace=False)
        candidates = [j] + [int(b) for b in negatives]
        scores = scorer.rank_scores(i, candidates)
        ranked = sorted(
            range(len(candidates)),
            key=lambda idx: (-scores[idx], catalog.bottoms[candidates[idx]].id),
        )
        rank = ranked.index(0) + 1
        rr_sum += 1.0 / rank
        n_queries += 1
    if n_queries == 0:
        raise InputError(f"no {split} queries in the test pairs")
    return RetrievalReport(
        mrr=rr_sum / n_queries,
        t_candidates=t_candidates,
        split=split,
        n_queries=n_queries,
    )
