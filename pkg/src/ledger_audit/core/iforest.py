"""Isolation forest scoring of posting groups."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import structlog

from src.ledger_audit.exceptions import DegenerateFeatures, DomainError, EmptyDataset
from src.ledger_audit.models.iforest import (
    Decision,
    FeatureName,
    IForestConfig,
    IForestResult,
)
from src.ledger_audit.models.ledger import Dataset, PostingGroup

logger = structlog.get_logger(__name__)

EULER_GAMMA = 0.5772156649015329

# Above this size c(n) uses the asymptotic harmonic expansion
EXACT_HARMONIC_LIMIT = 4096

# Hour used for postings without any posting_time
DEFAULT_POSTING_HOUR = 12.0

LEAF = -1

SCORE_COLUMNS: tuple[str, ...] = ("posting_id", "score", "decision")


def _harmonic(m: int) -> float:
    if m <= EXACT_HARMONIC_LIMIT:
        return math.fsum(1.0 / k for k in range(1, m + 1))
    return math.log(m) + EULER_GAMMA + 1.0 / (2 * m) - 1.0 / (12 * m * m)


def average_path_normalizer(n: int) -> float:
    """Average path length of an unsuccessful BST search over ``n`` points.

    c(n) = 2 H(n-1) - 2 (n-1) / n, with c(0) = c(1) = 0.

    Raises:
        DomainError: If ``n`` is negative.
    """
    if n < 0:
        raise DomainError(f"average path length is undefined for n={n}")
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    # Leaf depth plus c(leaf size); unused on internal nodes
    leaf_value: np.ndarray


class IsolationForest:
    """Isolation forest over a numeric matrix.

    Tree ``t`` draws from ``numpy.random.default_rng([seed, t])``, so trees
    can be built in any order with identical results.
    """

    def __init__(self, n_trees: int = 100, subsample_size: int = 256, seed: int = 0) -> None:
        self.n_trees = n_trees
        self.subsample_size = subsample_size
        self.seed = seed
        self.trees: list[_Tree] = []
        self.psi = 0

    def fit(self, x: np.ndarray) -> "IsolationForest":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyDataset("isolation forest needs at least one row")
        n = x.shape[0]
        self.psi = min(self.subsample_size, n)
        height_limit = math.ceil(math.log2(self.psi)) if self.psi > 1 else 0
        self.trees = [
            self._build_tree(x, np.random.default_rng([self.seed, t]), height_limit)
            for t in range(self.n_trees)
        ]
        return self

    def _build_tree(self, x: np.ndarray, rng: np.random.Generator, height_limit: int) -> _Tree:
        rows = rng.choice(x.shape[0], size=self.psi, replace=False)
        sample = x[rows]

        feature: list[int] = []
        threshold: list[float] = []
        left: list[int] = []
        right: list[int] = []
        leaf_value: list[float] = []

        def new_node() -> int:
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            leaf_value.append(0.0)
            return len(feature) - 1

        stack = [(new_node(), np.arange(self.psi), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if depth >= height_limit or idx.size <= 1:
                leaf_value[node] = depth + average_path_normalizer(int(idx.size))
                continue
            block = sample[idx]
            lo = block.min(axis=0)
            hi = block.max(axis=0)
            splittable = np.flatnonzero(hi > lo)
            if splittable.size == 0:
                leaf_value[node] = depth + average_path_normalizer(int(idx.size))
                continue
            attr = int(splittable[int(rng.integers(0, splittable.size))])
            value = float(rng.uniform(lo[attr], hi[attr]))
            goes_left = block[:, attr] < value

            feature[node] = attr
            threshold[node] = value
            left_node = new_node()
            right_node = new_node()
            left[node] = left_node
            right[node] = right_node
            stack.append((right_node, idx[~goes_left], depth + 1))
            stack.append((left_node, idx[goes_left], depth + 1))

        return _Tree(
            feature=np.array(feature, dtype=int),
            threshold=np.array(threshold, dtype=float),
            left=np.array(left, dtype=int),
            right=np.array(right, dtype=int),
            leaf_value=np.array(leaf_value, dtype=float),
        )

    @staticmethod
    def _tree_path_length(tree: _Tree, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=int)
        rows = np.arange(x.shape[0])
        active = tree.feature[node] != LEAF
        while active.any():
            current = node[active]
            attr = tree.feature[current]
            go_left = x[rows[active], attr] < tree.threshold[current]
            node[active] = np.where(go_left, tree.left[current], tree.right[current])
            active = tree.feature[node] != LEAF
        return tree.leaf_value[node]

    def path_lengths(self, x: np.ndarray) -> np.ndarray:
        """Mean path length E[h(x)] of every row over all trees."""
        if not self.trees:
            raise EmptyDataset("forest has not been fitted")
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[0], dtype=float)
        for tree in self.trees:
            total += self._tree_path_length(tree, x)
        return total / len(self.trees)

    def score(self, x: np.ndarray) -> np.ndarray:
        """Anomaly scores s(x) = 2^(-E[h(x)] / c(psi)), in (0, 1)."""
        normalizer = average_path_normalizer(self.psi)
        if normalizer == 0.0:
            return np.full(np.asarray(x).shape[0], 0.5)
        return np.power(2.0, -self.path_lengths(x) / normalizer)


# ---------------------------------------------------------------- features


def _postings_per(dataset: Dataset, key: Callable) -> Counter:
    counts: Counter = Counter()
    for group in dataset.groups.values():
        for value in {key(e) for e in group.entries}:
            counts[value] += 1
    return counts


def feature_matrix(
    dataset: Dataset,
    features: Sequence[FeatureName],
) -> tuple[list[str], np.ndarray]:
    """One row per posting group, one column per feature.

    Returns:
        (posting_ids, matrix) in dataset order.
    """
    user_postings = _postings_per(dataset, lambda e: e.user_id)
    account_postings = _postings_per(dataset, lambda e: e.account_id)

    def posting_hour(group: PostingGroup) -> float:
        for entry in group.entries:
            if entry.posting_time is not None:
                return entry.posting_time.hour + entry.posting_time.minute / 60.0
        return DEFAULT_POSTING_HOUR

    extractors: dict[FeatureName, Callable[[PostingGroup], float]] = {
        FeatureName.LOG_MAX_AMOUNT: lambda g: math.log1p(g.max_amount_cents / 100.0),
        FeatureName.PAYMENT_PERIOD: lambda g: float(g.payment_period_max),
        FeatureName.POSTING_HOUR: posting_hour,
        FeatureName.WEEKDAY: lambda g: float(g.entries[0].posting_date.weekday()),
        FeatureName.LOG_USER_POSTINGS: lambda g: math.log1p(user_postings[g.entries[0].user_id]),
        FeatureName.LOG_ACCOUNT_POSTINGS: lambda g: min(
            math.log1p(account_postings[e.account_id]) for e in g.entries
        ),
        FeatureName.TAX_RATE: lambda g: max(
            float(e.tax_rate) if e.tax_rate is not None else 0.0 for e in g.entries
        ),
    }

    posting_ids = list(dataset.groups)
    matrix = np.array(
        [[extractors[f](dataset.groups[pid]) for f in features] for pid in posting_ids],
        dtype=float,
    ).reshape(len(posting_ids), len(features))
    return posting_ids, matrix


# ---------------------------------------------------------------- thresholds


def decide(
    scores: dict[str, float],
    contamination: float | None,
    score_threshold: float | None,
) -> tuple[dict[str, Decision], float, Optional[str]]:
    """Turn scores into decisions.

    With ``contamination`` exactly ``floor(c * n + 0.5)`` postings are
    flagged: highest score first, ties by posting_id. When that count cuts
    through postings tied at the threshold score, the last flagged posting_id
    is returned as the tie cutoff; tied postings after it stay Normal.

    Returns:
        (decisions, threshold_used, tie_cutoff)
    """
    if contamination is not None:
        k = math.floor(contamination * len(scores) + 0.5)
        ranked = sorted(scores, key=lambda pid: (-scores[pid], pid))
        flagged = set(ranked[:k])
        threshold = scores[ranked[k - 1]] if k > 0 else 1.0
        cutoff = None
        if 0 < k < len(ranked) and scores[ranked[k]] == threshold:
            cutoff = ranked[k - 1]
        decisions = {
            pid: Decision.ANOMALY if pid in flagged else Decision.NORMAL for pid in scores
        }
        return decisions, threshold, cutoff

    if score_threshold is None:
        raise ValueError("either contamination or score_threshold is required")
    decisions = {
        pid: Decision.ANOMALY if s >= score_threshold else Decision.NORMAL
        for pid, s in scores.items()
    }
    return decisions, score_threshold, None


def fit_score(dataset: Dataset, config: IForestConfig) -> IForestResult:
    """Fit a forest on the dataset's posting groups and score them.

    Constant features are dropped before fitting.

    Raises:
        EmptyDataset: If the dataset has no postings.
        DegenerateFeatures: If every feature is constant.
    """
    if not dataset.groups:
        raise EmptyDataset("cannot fit an isolation forest on an empty dataset")

    posting_ids, matrix = feature_matrix(dataset, config.feature_spec)
    n = len(posting_ids)

    dropped: tuple[FeatureName, ...] = ()
    if n > 1:
        constant = np.ptp(matrix, axis=0) == 0
        dropped = tuple(f for f, c in zip(config.feature_spec, constant) if c)
        if dropped:
            logger.warning("iforest_features_dropped", features=[f.value for f in dropped])
        if len(dropped) == len(config.feature_spec):
            raise DegenerateFeatures("every feature is constant across postings")
        matrix = matrix[:, ~constant]

    if config.subsample_size > n:
        logger.warning(
            "iforest_subsample_clamped",
            subsample_size=config.subsample_size,
            postings=n,
        )

    forest = IsolationForest(
        n_trees=config.n_trees,
        subsample_size=config.subsample_size,
        seed=config.seed,
    ).fit(matrix)
    raw = forest.score(matrix)
    scores = {pid: float(s) for pid, s in zip(posting_ids, raw)}
    decisions, threshold, cutoff = decide(scores, config.contamination, config.score_threshold)

    result = IForestResult(
        scores=scores,
        decisions=decisions,
        threshold_used=threshold,
        tie_cutoff=cutoff,
        subsample_size=forest.psi,
        dropped_features=dropped,
    )
    logger.info(
        "iforest_fitted",
        postings=n,
        trees=config.n_trees,
        subsample_size=forest.psi,
        anomalies=result.anomaly_count,
        threshold=round(threshold, 6),
    )
    return result


def score_rows(result: IForestResult) -> list[tuple[str, str, str]]:
    """CSV rows ``posting_id,score,decision`` with scores to six decimals."""
    return [
        (pid, f"{score:.6f}", result.decisions[pid].value) for pid, score in result.scores.items()
    ]
