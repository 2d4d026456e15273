"""
Tests for dataset context statistics

Covers:
- compute_stats on the pinned ledger
- Empty datasets raise a stats-tagged error
- Forest rate denominator is the ledger line count
- Order insensitivity under permuted ledger lines
- Nearest-rank quantiles against a brute-force oracle
- Sort-based oracle over 1,000 ledgers of up to 10,000 lines
- percentile_of counting, bounds and monotonicity
- Rendered context block and stats report
- Posting ranking ties
"""
from decimal import Decimal

import numpy as np
import pytest
from pydantic import ValidationError

from src.ledger_audit.core.context_stats import (
    compute_stats,
    context_block,
    format_rate,
    percentile_of,
    quantile,
    rank_postings,
    stats_report,
)
from src.ledger_audit.exceptions import EmptyDataset, EmptyStats, EmptyStatsDataset
from src.ledger_audit.models.ledger import Dataset
from src.ledger_audit.models.stats import DatasetStats
from tests.factories import balanced_posting, make_entry


def cents_dataset(amounts_cents):
    entries = [
        make_entry(entry_id=f"E{i}", posting_id=f"P{i}", amount_cents=cents)
        for i, cents in enumerate(amounts_cents)
    ]
    return Dataset(entries=tuple(entries))


def nearest_rank(sorted_values, p):
    """Smallest value with at least p * n values at or below it"""
    n = len(sorted_values)
    for value in sorted_values:
        if sum(1 for v in sorted_values if v <= value) * 100 >= p * 100 * n:
            return value
    return sorted_values[-1]


# ============== compute_stats Tests ==============

class TestComputeStats:
    """Test statistics over the pinned ledger"""

    def test_pinned_values(self, pinned_stats):
        """Test amount statistics, counts and forest summary"""
        s = pinned_stats
        assert s.total_transactions == 4
        assert s.amount_mean == Decimal("1300.25")
        assert s.amount_median == Decimal("100.00")
        assert s.amount_q95 == Decimal("2500.50")
        assert s.amount_q99 == Decimal("2500.50")
        assert s.amount_min == Decimal("100.00")
        assert s.amount_max == Decimal("2500.50")
        assert s.payment_period_max == 49
        assert s.total_users == 2
        assert s.total_accounts == 3
        assert s.user_tx_counts == {"U1": 2, "U2": 2}
        assert s.account_tx_counts == {"1000": 1, "1010": 1, "4000": 2}
        assert s.if_present
        assert s.if_anomaly_count == 1
        assert s.if_anomaly_rate == 0.25

    def test_without_forest(self, pinned_dataset):
        """Test forest fields default to zero"""
        stats = compute_stats(pinned_dataset)
        assert not stats.if_present
        assert stats.if_anomaly_count == 0
        assert context_block(stats)["if_anomaly_rate"] == "0.0%"

    def test_empty_dataset(self):
        """Test an empty dataset raises a stats-tagged EmptyDataset"""
        with pytest.raises(EmptyStatsDataset) as exc_info:
            compute_stats(Dataset(entries=()))
        assert isinstance(exc_info.value, EmptyDataset)
        assert exc_info.value.module == "stats"

    def test_forest_rate_over_ledger_lines(self, pinned_stats, pinned_if_result):
        """Test the forest rate divides flagged postings by ledger lines"""
        assert pinned_stats.if_anomaly_count == pinned_if_result.anomaly_count == 1
        assert pinned_stats.total_transactions == 4
        assert len(pinned_if_result.scores) == 2
        assert pinned_stats.if_anomaly_rate == 1 / 4
        assert context_block(pinned_stats)["if_anomaly_rate"] == "25.0%"

    def test_permuted_lines_change_nothing(self):
        """Test compute_stats ignores the order of ledger lines"""
        rng = np.random.default_rng(21)
        for _ in range(20):
            entries = []
            for i in range(int(rng.integers(1, 30))):
                entries += balanced_posting(
                    f"P{i:03d}",
                    int(rng.integers(1, 10**6)),
                    user_id=f"U{int(rng.integers(0, 4))}",
                    account_id=str(1000 + 10 * int(rng.integers(0, 5))),
                )
            shuffled = [entries[j] for j in rng.permutation(len(entries))]
            original = compute_stats(Dataset(entries=tuple(entries)))
            permuted = compute_stats(Dataset(entries=tuple(shuffled)))
            assert permuted == original
            assert context_block(permuted) == context_block(original)

    def test_invariants_enforced(self, pinned_stats):
        """Test DatasetStats refuses out-of-order quantiles"""
        data = pinned_stats.model_dump()
        data["amount_median"] = Decimal("9999")
        with pytest.raises(ValidationError):
            DatasetStats(**data)

    def test_quantile_ordering_over_random_ledgers(self):
        """Test min <= median <= q95 <= q99 <= max on seeded ledgers"""
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 60))
            stats = compute_stats(cents_dataset(rng.integers(0, 10**6, size=n).tolist()))
            assert (
                stats.amount_min
                <= stats.amount_median
                <= stats.amount_q95
                <= stats.amount_q99
                <= stats.amount_max
            )
            assert sum(stats.user_tx_counts.values()) == stats.total_transactions


# ============== Quantile Tests ==============

class TestQuantile:
    """Test nearest-rank quantiles and percentile ranks"""

    def test_against_brute_force(self):
        """Test quantiles match a direct nearest-rank search"""
        rng = np.random.default_rng(11)
        for _ in range(200):
            amounts = rng.integers(1, 5000, size=int(rng.integers(1, 40))).tolist()
            stats = compute_stats(cents_dataset(amounts))
            ordered = sorted(amounts)
            for p in ("0.5", "0.95", "0.99"):
                expected = nearest_rank(ordered, Decimal(p))
                assert quantile(stats, p) == Decimal(expected).scaleb(-2)

    def test_percentile_of_against_brute_force(self):
        """Test percentile ranks count values at or below the query"""
        rng = np.random.default_rng(12)
        for _ in range(200):
            amounts = rng.integers(1, 500, size=int(rng.integers(1, 40))).tolist()
            stats = compute_stats(cents_dataset(amounts))
            query = int(rng.integers(0, 600))
            expected = 100 * sum(1 for a in amounts if a <= query) // len(amounts)
            assert percentile_of(Decimal(query).scaleb(-2), stats) == expected

    def test_percentile_monotone(self):
        """Test percentile ranks never decrease as |amount| grows"""
        rng = np.random.default_rng(13)
        for _ in range(50):
            amounts = rng.integers(0, 10**4, size=int(rng.integers(1, 80))).tolist()
            stats = compute_stats(cents_dataset(amounts))
            queries = sorted(int(q) for q in rng.integers(0, 12_000, size=40))
            ranks = [percentile_of(Decimal(q).scaleb(-2), stats) for q in queries]
            assert ranks == sorted(ranks)
            assert all(0 <= r <= 100 for r in ranks)
            signed = [percentile_of(Decimal(-q).scaleb(-2), stats) for q in queries]
            assert signed == ranks

    @pytest.mark.slow
    def test_sort_based_oracle_large(self):
        """Test statistics on 1,000 ledgers of up to 10,000 lines against a sort-and-index oracle"""
        rng = np.random.default_rng(2024)
        sizes = [10_000, 1] + [int(10 ** rng.uniform(0, 4)) for _ in range(998)]
        for n in sizes:
            amounts = rng.integers(0, 10**8, size=n).tolist()
            stats = compute_stats(cents_dataset(amounts))
            ordered = sorted(amounts)

            assert stats.total_transactions == n
            assert stats.amount_min == Decimal(ordered[0]).scaleb(-2)
            assert stats.amount_max == Decimal(ordered[-1]).scaleb(-2)
            for attr, (num, den) in (
                ("amount_median", (1, 2)),
                ("amount_q95", (95, 100)),
                ("amount_q99", (99, 100)),
            ):
                index = -(-num * n // den) - 1
                assert getattr(stats, attr) == Decimal(ordered[index]).scaleb(-2)

            # mean in units of 0.0001, rounded half up
            units, remainder = divmod(100 * sum(amounts), n)
            if 2 * remainder >= n:
                units += 1
            assert stats.amount_mean == Decimal(units).scaleb(-4)

            for query in rng.integers(0, 10**8, size=5).tolist() + [ordered[0], ordered[-1]]:
                expected = 100 * sum(1 for a in ordered if a <= query) // n
                assert percentile_of(Decimal(query).scaleb(-2), stats) == expected

    def test_percentile_bounds(self, pinned_stats):
        """Test percentile ranks lie in [0, 100]"""
        assert percentile_of("0.00", pinned_stats) == 0
        assert percentile_of("100.00", pinned_stats) == 50
        assert percentile_of("2500.50", pinned_stats) == 100
        assert percentile_of("1e9", pinned_stats) == 100

    def test_percentile_uses_magnitude(self, pinned_stats):
        """Test negative queries are ranked by absolute value"""
        assert percentile_of("-2500.50", pinned_stats) == 100

    def test_empty_stats(self):
        """Test EmptyStats on statistics with no amounts"""
        stats = DatasetStats.model_construct(sorted_abs_amounts=())
        with pytest.raises(EmptyStats):
            percentile_of("1", stats)
        with pytest.raises(EmptyStats):
            quantile(stats, "0.5")

    def test_quantile_fraction_domain(self, pinned_stats):
        """Test fractions outside (0, 1] are rejected"""
        with pytest.raises(ValueError):
            quantile(pinned_stats, "0")
        with pytest.raises(ValueError):
            quantile(pinned_stats, "1.5")


# ============== Ranking Tests ==============

class TestRankPostings:
    """Test posting ranking by largest line"""

    def test_largest_first(self):
        """Test ranks follow the largest line amount"""
        entries = balanced_posting("A", 100) + balanced_posting("B", 300) + balanced_posting("C", 200)
        assert rank_postings(Dataset(entries=tuple(entries))) == {"B": 1, "C": 2, "A": 3}

    def test_ties_by_entry_id(self):
        """Test equal amounts rank by the smallest entry_id"""
        entries = balanced_posting("Z", 100) + balanced_posting("Y", 100)
        assert rank_postings(Dataset(entries=tuple(entries))) == {"Y": 1, "Z": 2}


# ============== Rendering Tests ==============

class TestRendering:
    """Test rendered values"""

    def test_context_block(self, pinned_stats):
        """Test placeholder values of the DATASET CONTEXT block"""
        assert context_block(pinned_stats) == {
            "total_transactions": "4",
            "total_if_anomalies": "1",
            "if_anomaly_rate": "25.0%",
            "amount_mean": "1300.25",
            "amount_median": "100.00",
            "amount_q95": "2500.50",
            "amount_q99": "2500.50",
            "amount_min": "100.00",
            "amount_max": "2500.50",
            "payment_period_max": "49",
            "total_users": "2",
            "total_accounts": "3",
        }

    @pytest.mark.parametrize(
        "count,total,rendered",
        [(0, 0, "0.0%"), (1, 3, "33.3%"), (2, 3, "66.7%"), (221, 5000, "4.4%"), (1, 8, "12.5%")],
    )
    def test_format_rate(self, count, total, rendered):
        """Test one-decimal half-up percentages"""
        assert format_rate(count, total) == rendered

    def test_stats_report(self, pinned_stats):
        """Test the report carries rendered values and frequency tables"""
        report = stats_report(pinned_stats)
        assert report["amount_q99"] == "2500.50"
        assert report["if_present"] is True
        assert report["user_tx_counts"] == {"U1": 2, "U2": 2}
