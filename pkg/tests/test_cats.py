import re
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from bayesauction.cats import (
    BidderPool,
    CatsBid,
    CatsFile,
    CatsParseError,
    ClearableParams,
    generate_clearable,
    generate_synthetic,
    group_bidders,
    normalize_values,
    parse_cats,
    sample_instance,
    serialize_cats,
    split_train_test,
)
from bayesauction.core import ItemPriceVector, Valuation
from bayesauction.engine import best_response
from bayesauction.mcem import dual_prices
from bayesauction.solvers import is_clearing

FIXTURE = Path(__file__).parent / "data" / "shared_dummy.txt"


def adhoc_read(text):
    """Minimal independent reader: regex over bid lines only."""
    out = []
    for line in text.splitlines():
        m = re.fullmatch(r"\s*(\d+)\s+([0-9.eE+-]+)((?:\s+\d+)*)\s+#\s*", line)
        if m:
            out.append((int(m.group(1)), float(m.group(2)), tuple(int(g) for g in m.group(3).split())))
    return out


class TestParse:
    def test_minimal(self):
        f = parse_cats("goods 2\nbids 1\ndummy 0\n0 5.0 0 1 #")
        assert f == CatsFile(2, 0, (CatsBid(0, 5.0, (0, 1)),))

    def test_fixture_matches_adhoc_reader(self):
        text = FIXTURE.read_text()
        f = parse_cats(text)
        assert [(b.bid_id, b.value, b.goods) for b in f.bids] == adhoc_read(text)
        assert f.bids[0].goods[-1] == 12 and f.bids[1].goods[-1] == 12
        assert f.comments == ("hand-written fixture: bids 0 and 1 share dummy good 12",)

    def test_bytes_and_whitespace(self):
        f = parse_cats(b"  goods 3 \n\n dummy 0\n 7   1.5  2   # \n")
        assert f.bids == (CatsBid(7, 1.5, (2,)),)

    @pytest.mark.parametrize("text, line", [
        ("goods 12\ndummy 5\n0 1.0 99 #", 3),
        ("goods 2\n0 1.0 0", 2),
        ("goods 2\n0 -1.0 0 #", 2),
        ("goods x\n", 1),
        ("goods 2 3\n", 1),
        ("goods 2\n0 1.0 0 #\ndummy 1\n", 3),
        ("goods 2\n0 1.0 0 #\n0 2.0 1 #", 3),
        ("goods 2\n0 nan 0 #", 2),
        ("0 1.0 0 #", 1),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(CatsParseError) as err:
            parse_cats(text)
        assert err.value.line_no == line
        assert f"line {line}" in str(err.value)

    def test_bid_count_mismatch(self):
        with pytest.raises(CatsParseError):
            parse_cats("goods 2\nbids 2\n0 1.0 0 #")

    def test_round_trip(self):
        f = generate_synthetic(12, 300, seed=4)
        text = serialize_cats(f)
        assert parse_cats(text) == f
        assert serialize_cats(parse_cats(text)) == text

    def test_generator_seeds(self):
        a = serialize_cats(generate_synthetic(8, 100, seed=1))
        assert a == serialize_cats(generate_synthetic(8, 100, seed=1))
        assert a != serialize_cats(generate_synthetic(8, 100, seed=2))


class TestGrouping:
    def test_multi(self):
        pool = group_bidders(parse_cats(FIXTURE.read_text()), "multi")
        assert [len(v.atoms) for v in pool.bidders] == [2, 1]
        assert pool.bidders[0].atoms[0][0].items() == [0, 3]

    def test_single(self):
        pool = group_bidders(parse_cats(FIXTURE.read_text()), "single")
        assert [len(v.atoms) for v in pool.bidders] == [1, 1, 1]

    def test_no_dummy(self):
        f = parse_cats("goods 3\ndummy 0\n0 1 0 #\n1 2 1 #\n2 3 0 2 #")
        assert len(group_bidders(f, "multi")) == 3

    def test_multiset_preserved(self):
        f = generate_synthetic(10, 400, seed=3)
        pool = group_bidders(f, "multi")
        atoms = Counter((b.bits, val) for v in pool.bidders for b, val in v.atoms)
        bids = Counter((sum(1 << g for g in b.goods if g < f.goods), b.value) for b in f.bids)
        assert atoms == bids


def pool_of(values):
    return BidderPool(tuple(Valuation.from_pairs([([0], v)], 1, i) for i, v in enumerate(values)), 1, "single")


class TestNormalize:
    @pytest.mark.parametrize("values, expected", [
        ([2, 4, 5], [4, 8, 10]), ([10], [10]), ([1, 1000], [0.01, 10])])
    def test_examples(self, values, expected):
        out = normalize_values(pool_of(values))
        assert [v.atoms[0][1] for v in out.bidders] == pytest.approx(expected)

    def test_all_zero(self):
        with pytest.raises(ValueError):
            normalize_values(pool_of([0, 0]))

    def test_order_preserved(self, rng):
        vals = rng.uniform(0, 50, 30)
        out = [v.atoms[0][1] for v in normalize_values(pool_of(vals)).bidders]
        assert np.array_equal(np.argsort(vals, kind="stable"), np.argsort(out, kind="stable"))


class TestSplitAndSample:
    def test_sizes(self):
        pool = pool_of(range(1, 11))
        assert tuple(map(len, split_train_test(pool, 0.5, seed=7))) == (5, 5)
        assert tuple(map(len, split_train_test(pool, 0.999, seed=7))) == (9, 1)

    def test_deterministic_partition(self):
        pool = pool_of(range(1, 21))
        a, b = split_train_test(pool, 0.3, seed=5)
        assert (a, b) == split_train_test(pool, 0.3, seed=5)
        ids = sorted(v.bidder_id for v in a.bidders + b.bidders)
        assert ids == list(range(20))

    def test_empty_side(self):
        with pytest.raises(ValueError):
            split_train_test(pool_of([1, 2]), 0.1)

    def test_sample_instance(self):
        pool = pool_of(range(1, 31))
        a = sample_instance(pool, 10, seed=3)
        assert a == sample_instance(pool, 10, seed=3)
        assert a.profile.n == 10
        assert len({v.atoms[0][1] for v in a.profile}) == 10
        assert [v.bidder_id for v in a.profile] == list(range(10))
        with pytest.raises(ValueError):
            sample_instance(pool, 31)

    def test_sampling_is_uniform(self):
        pool = pool_of(range(1, 6))
        counts = Counter(v.atoms[0][1] for s in range(2000) for v in sample_instance(pool, 2, seed=s).profile)
        # each bidder is picked with probability 2/5
        for c in counts.values():
            assert abs(c - 800) < 4 * np.sqrt(2000 * 0.4 * 0.6)


class TestClearable:
    def test_planted_prices_clear(self):
        batch = generate_clearable(6, 5, 40, seed=2)
        for prof, c in zip(batch.profiles, batch.prices):
            p = ItemPriceVector(c)
            assert is_clearing([best_response(v, p) for v in prof], p)
            assert dual_prices(prof)[1] == pytest.approx(0.0, abs=1e-9)

    def test_shared_distribution(self):
        a = generate_clearable(5, 4, 3, seed=1, base_seed=0)
        b = generate_clearable(5, 4, 3, seed=2, base_seed=0)
        assert a.profiles != b.profiles
        ratio = np.array(a.prices).mean(axis=0) / np.array(b.prices).mean(axis=0)
        assert np.all(np.abs(np.log(ratio)) < 0.5)

    def test_values_in_scale(self):
        batch = generate_clearable(6, 5, 100, ClearableParams(), seed=0)
        assert max(v.max_value for p in batch.profiles for v in p) <= 10
