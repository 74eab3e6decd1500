"""Benign retrieval metrics, white-box attack suite, and the aggregate
robustness score for a frozen model.

All attacks run PGD inside the shared perturbation budget; candidate and
pair selection is driven by an explicit seed so a report is a pure
function of (model, corpus, budget, seed). The aggregate score is an
"ERS-style" mean of per-attack normalizations declared here; it is not
numerically comparable to any external benchmark's scoring.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import gradcore as gc
from .encoder import Encoder
from .metric import pairwise_distances, rowwise_distance
from .pgd import PerturbationBudget, pgd_maximize

ERS_NOTE = "ERS-style aggregation; weights declared by tripletlab, not an external benchmark"

CANDIDATES_PER_CLASS = 5  # W: queries per class for CA, candidates per query for QA
ATTACKS_PER_CLASS = 3  # attacked candidates (CA) / attacked queries (QA) per class


@dataclass
class EvalCorpus:
    gallery_x: np.ndarray
    gallery_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray

    def __post_init__(self):
        self.gallery_x = np.asarray(self.gallery_x, dtype=np.float64)
        self.gallery_y = np.asarray(self.gallery_y, dtype=np.int64)
        self.query_x = np.asarray(self.query_x, dtype=np.float64)
        self.query_y = np.asarray(self.query_y, dtype=np.int64)
        if len(self.gallery_x) == 0:
            raise ValueError("empty gallery")
        missing = set(self.query_y.tolist()) - set(self.gallery_y.tolist())
        if missing:
            raise ValueError(f"query labels missing from gallery: {sorted(missing)}")

    def self_matched(self) -> bool:
        """True when the query set is literally the gallery (then retrieval
        must exclude each query's own gallery slot)."""
        return (self.query_x.shape == self.gallery_x.shape
                and np.array_equal(self.query_x, self.gallery_x)
                and np.array_equal(self.query_y, self.gallery_y))


def _retrieval_tables(q_emb, g_emb, exclude_self: bool):
    d = pairwise_distances(q_emb, g_emb)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    return d


def _recall_at(d: np.ndarray, q_y, g_y, k: int) -> float:
    top = np.argsort(d, axis=1, kind="stable")[:, :k]
    hit = (g_y[top] == q_y[:, None]).any(axis=1)
    return float(hit.mean() * 100.0)


def _mean_average_precision(d: np.ndarray, q_y, g_y) -> float:
    order = np.argsort(d, axis=1, kind="stable")
    rel = g_y[order] == q_y[:, None]
    # entries pushed to +inf (self matches) are not valid retrieval results
    valid = np.isfinite(np.take_along_axis(d, order, axis=1))
    rel = rel & valid
    ranks = np.arange(1, d.shape[1] + 1)
    precision_at = np.cumsum(rel, axis=1) / ranks
    totals = rel.sum(axis=1)
    ap = (precision_at * rel).sum(axis=1) / np.maximum(totals, 1)
    return float(ap.mean() * 100.0)


def benign_metrics(model: Encoder, corpus: EvalCorpus) -> dict:
    """Nearest-neighbor R@1, R@2 and mAP (percent), self-match excluded."""
    g_emb = model.embed_array(corpus.gallery_x)
    q_emb = model.embed_array(corpus.query_x)
    d = _retrieval_tables(q_emb, g_emb, corpus.self_matched())
    return {
        "r_at_1": _recall_at(d, corpus.query_y, corpus.gallery_y, 1),
        "r_at_2": _recall_at(d, corpus.query_y, corpus.gallery_y, 2),
        "map": _mean_average_precision(d, corpus.query_y, corpus.gallery_y),
    }


def _r1_against_gallery(model: Encoder, adv_queries: np.ndarray, q_y, corpus: EvalCorpus) -> float:
    g_emb = model.embed_array(corpus.gallery_x)
    q_emb = model.embed_array(adv_queries)
    d = _retrieval_tables(q_emb, g_emb, False)
    return _recall_at(d, q_y, corpus.gallery_y, 1)


def _repeat_matrix(block_sizes: list[int]) -> np.ndarray:
    """0/1 matrix repeating row i of a (C,D) node block_sizes[i] times."""
    total = sum(block_sizes)
    rep = np.zeros((total, len(block_sizes)))
    row = 0
    for i, size in enumerate(block_sizes):
        rep[row:row + size, i] = 1.0
        row += size
    return rep


def attack_es(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget):
    """Push each query embedding as far as possible off its clean spot.
    Returns (mean final shift, R@1 of the shifted queries), i.e. (ES:D, ES:R).

    At r = 0 the distance-to-self objective sits at the tip of a cone where
    every direction ascends but the formal gradient is zero, so the clean
    reference is offset by a vanishing constant to give the first PGD step a
    usable direction. The reported shift uses the true reference.
    """
    x = corpus.query_x
    reference = model.embed_array(x)
    tie_break = reference - 1e-6 / np.sqrt(reference.shape[1])

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(tie_break)))

    r = pgd_maximize(objective, x, budget)
    shifted = model.embed_array(x + r)
    es_d = float(rowwise_distance(shifted, reference).mean())
    es_r = _r1_against_gallery(model, x + r, corpus.query_y, corpus)
    return es_d, es_r


def _gather_fixed_targets(node: gc.Node, tape: gc.Tape, rep: np.ndarray,
                          targets: np.ndarray) -> gc.Node:
    expanded = gc.matmul(tape.leaf(rep), node)
    return gc.euclidean_rowwise(expanded, tape.leaf(targets))


def _rank_percent(d_query_to_gallery: np.ndarray, d_query_to_item: float,
                  skip_index: Optional[int]) -> float:
    """Normalized rank of an item in one query's gallery ranking: percent of
    other gallery members strictly closer than the item (0 = top)."""
    d = d_query_to_gallery
    mask = np.ones(len(d), dtype=bool)
    if skip_index is not None:
        mask[skip_index] = False
    closer = int(np.count_nonzero(d[mask] < d_query_to_item))
    return 100.0 * closer / max(1, mask.sum())


def attack_ca(model: Encoder, corpus: EvalCorpus, direction: str,
              budget: PerturbationBudget, seed: int = 0) -> float:
    """Candidate attack: perturb one gallery candidate per class to push it
    toward (+) or away from (-) that class's first W queries. Returns the
    mean normalized rank (percent) of the perturbed candidate."""
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    rng = np.random.default_rng(seed)
    g_emb = model.embed_array(corpus.gallery_x)
    q_emb = model.embed_array(corpus.query_x)

    classes = np.unique(corpus.query_y)
    cand_idx, query_blocks = [], []
    for c in classes:
        rows = np.where(corpus.query_y == c)[0][:CANDIDATES_PER_CLASS]
        chosen = rng.choice(len(corpus.gallery_x),
                            size=min(ATTACKS_PER_CLASS, len(corpus.gallery_x)),
                            replace=False)
        for gal_row in chosen:
            query_blocks.append(rows)
            cand_idx.append(int(gal_row))
    cand_idx = np.array(cand_idx)
    candidates = corpus.gallery_x[cand_idx]
    targets = np.concatenate([q_emb[rows] for rows in query_blocks], axis=0)
    rep = _repeat_matrix([len(rows) for rows in query_blocks])
    sign = -1.0 if direction == "+" else 1.0

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.scale(gc.sum_all(_gather_fixed_targets(emb, tape, rep, targets)), sign)

    r = pgd_maximize(objective, candidates, budget)
    adv_emb = model.embed_array(candidates + r)

    ranks = []
    for i, rows in enumerate(query_blocks):
        for q in rows:
            d_row = pairwise_distances(q_emb[q:q + 1], g_emb)[0]
            d_item = float(rowwise_distance(q_emb[q:q + 1], adv_emb[i:i + 1])[0])
            ranks.append(_rank_percent(d_row, d_item, skip_index=int(cand_idx[i])))
    return float(np.mean(ranks))


def attack_qa(model: Encoder, corpus: EvalCorpus, direction: str,
              budget: PerturbationBudget, seed: int = 0) -> float:
    """Query attack: perturb one query per class so W designated gallery
    candidates move toward (+) or away from (-) the top of its ranking.
    Returns the mean normalized rank (percent) of the candidates."""
    if direction not in ("+", "-"):
        raise ValueError(f"direction must be '+' or '-', got {direction!r}")
    rng = np.random.default_rng(seed)
    g_emb = model.embed_array(corpus.gallery_x)

    classes = np.unique(corpus.query_y)
    query_idx, cand_blocks = [], []
    for c in classes:
        rows = np.where(corpus.query_y == c)[0][:ATTACKS_PER_CLASS]
        for q in rows:
            query_idx.append(int(q))
            cand_blocks.append(rng.choice(len(corpus.gallery_x),
                                          size=min(CANDIDATES_PER_CLASS, len(corpus.gallery_x)),
                                          replace=False))
    query_idx = np.array(query_idx)
    queries = corpus.query_x[query_idx]
    targets = np.concatenate([g_emb[rows] for rows in cand_blocks], axis=0)
    rep = _repeat_matrix([len(rows) for rows in cand_blocks])
    sign = -1.0 if direction == "+" else 1.0

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.scale(gc.sum_all(_gather_fixed_targets(emb, tape, rep, targets)), sign)

    r = pgd_maximize(objective, queries, budget)
    adv_emb = model.embed_array(queries + r)

    ranks = []
    for i, rows in enumerate(cand_blocks):
        d_row = pairwise_distances(adv_emb[i:i + 1], g_emb)[0]
        for cand in rows:
            ranks.append(_rank_percent(d_row, float(d_row[cand]), skip_index=int(cand)))
    return float(np.mean(ranks))


def attack_tma(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget,
               seed: int = 0) -> float:
    """Perturb half the queries to maximize cosine similarity with partner
    queries; returns the mean final cosine similarity."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(corpus.query_x))
    m = len(perm) // 2
    if m == 0:
        raise ValueError("tma needs at least two queries")
    first, second = perm[:m], perm[m:2 * m]
    x = corpus.query_x[first]
    partner_emb = model.embed_array(corpus.query_x[second])

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.sum_all(gc.cosine_rowwise(emb, tape.leaf(partner_emb)))

    r = pgd_maximize(objective, x, budget)
    adv = model.embed_array(x + r)
    cos = (adv * partner_emb).sum(axis=1)
    return float(cos.mean())


def _benign_neighbor_indices(model: Encoder, corpus: EvalCorpus):
    g_emb = model.embed_array(corpus.gallery_x)
    q_emb = model.embed_array(corpus.query_x)
    d = _retrieval_tables(q_emb, g_emb, corpus.self_matched())
    matched = corpus.gallery_y[None, :] == corpus.query_y[:, None]
    d_matched = np.where(matched, d, np.inf)
    d_unmatched = np.where(~matched, d, np.inf)
    return g_emb, d, d_matched.argmin(axis=1), d_unmatched.argmin(axis=1)


def attack_ltm(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget) -> float:
    """Push each query away from its nearest matching gallery sample and
    toward its nearest non-matching one; returns R@1 (percent) afterwards."""
    g_emb, _, near_match, near_other = _benign_neighbor_indices(model, corpus)
    match_emb = g_emb[near_match]
    other_emb = g_emb[near_other]

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        away = gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(match_emb)))
        toward = gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(other_emb)))
        return gc.sub(away, toward)

    r = pgd_maximize(objective, corpus.query_x, budget)
    return _r1_against_gallery(model, corpus.query_x + r, corpus.query_y, corpus)


def attack_gtm(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget) -> float:
    """Pull each query onto its nearest non-matching gallery sample;
    returns R@1 (percent) afterwards."""
    g_emb, _, _, near_other = _benign_neighbor_indices(model, corpus)
    other_emb = g_emb[near_other]

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.scale(gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(other_emb))), -1.0)

    r = pgd_maximize(objective, corpus.query_x, budget)
    return _r1_against_gallery(model, corpus.query_x + r, corpus.query_y, corpus)


def attack_gtt(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget) -> float:
    """Push each query away from its benign top-1 neighbor; returns the
    percentage of queries whose original top-1 stays within the new top-4."""
    g_emb, d, _, _ = _benign_neighbor_indices(model, corpus)
    top1 = d.argmin(axis=1)
    top1_emb = g_emb[top1]

    def objective(tape, leaf):
        emb = model.embed(tape, leaf)
        return gc.sum_all(gc.euclidean_rowwise(emb, tape.leaf(top1_emb)))

    r = pgd_maximize(objective, corpus.query_x, budget)
    adv_emb = model.embed_array(corpus.query_x + r)
    d_adv = _retrieval_tables(adv_emb, g_emb, corpus.self_matched())
    top4 = np.argsort(d_adv, axis=1, kind="stable")[:, :4]
    stayed = (top4 == top1[:, None]).any(axis=1)
    return float(stayed.mean() * 100.0)


@dataclass
class RobustnessReport:
    r_at_1: float
    r_at_2: float
    map: float
    ca_plus: float
    ca_minus: float
    qa_plus: float
    qa_minus: float
    tma: float
    es_d: float
    es_r: float
    ltm: float
    gtm: float
    gtt: float
    ers: float
    note: str = ERS_NOTE

    def __post_init__(self):
        percents = (self.r_at_1, self.r_at_2, self.map, self.ca_plus, self.ca_minus,
                    self.qa_plus, self.qa_minus, self.es_r, self.ltm, self.gtm,
                    self.gtt, self.ers)
        if not all(0.0 <= v <= 100.0 for v in percents):
            raise ValueError(f"percent field out of [0, 100]: {percents}")
        if not -1.0 <= self.tma <= 1.0:
            raise ValueError(f"tma out of [-1, 1]: {self.tma}")
        if not 0.0 <= self.es_d <= 2.0:
            raise ValueError(f"es_d out of [0, 2]: {self.es_d}")

    def as_dict(self) -> dict:
        return asdict(self)


def ers_score(ca_plus, ca_minus, qa_plus, qa_minus, tma, es_d, es_r, ltm, gtm, gtt) -> float:
    """Mean of per-attack robustness fractions, scaled to 0-100. Each term
    is 1 when the attack failed completely and 0 when it fully succeeded."""
    terms = [
        ca_plus / 100.0,
        1.0 - ca_minus / 100.0,
        qa_plus / 100.0,
        1.0 - qa_minus / 100.0,
        (1.0 - tma) / 2.0,
        1.0 - es_d / 2.0,
        es_r / 100.0,
        ltm / 100.0,
        gtm / 100.0,
        gtt / 100.0,
    ]
    return float(100.0 * np.mean(terms))


def evaluate_robustness(model: Encoder, corpus: EvalCorpus, budget: PerturbationBudget,
                        seed: int = 0) -> RobustnessReport:
    """Run the benign metrics and the full attack suite on a frozen model."""
    benign = benign_metrics(model, corpus)
    es_d, es_r = attack_es(model, corpus, budget)
    fields = {
        "ca_plus": attack_ca(model, corpus, "+", budget, seed),
        "ca_minus": attack_ca(model, corpus, "-", budget, seed),
        "qa_plus": attack_qa(model, corpus, "+", budget, seed),
        "qa_minus": attack_qa(model, corpus, "-", budget, seed),
        "tma": attack_tma(model, corpus, budget, seed),
        "es_d": es_d,
        "es_r": es_r,
        "ltm": attack_ltm(model, corpus, budget),
        "gtm": attack_gtm(model, corpus, budget),
        "gtt": attack_gtt(model, corpus, budget),
    }
    return RobustnessReport(ers=ers_score(**fields), **benign, **fields)
