from __future__ import annotations

import math
import random

import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import foil_oracle, kendall_oracle, pair_counts

from gveval.errors import (
    DegenerateCategories,
    DegenerateInput,
    EmptyPairs,
    LengthMismatch,
    MissingColumn,
)
from gveval.model import CandidateCaption, CorpusRecord, HumanJudgment, HumanKind, ReferenceSet
from gveval.stats import (
    HumanProjection,
    correlate_corpus,
    foil_pairwise_accuracy,
    kendall_tau_b,
    kendall_tau_c,
    pair_tally,
    project_human,
)


def test_tau_b_examples():
    assert kendall_tau_b([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau_b([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau_b([1, 1, 2], [1, 2, 2]) == pytest.approx(0.5, abs=1e-15)


def test_tau_c_examples():
    assert kendall_tau_c([1, 2, 3], [1, 2, 3]) == 1.0
    assert kendall_tau_c([1, 1, 2], [1, 2, 2]) == pytest.approx(4 / 9, abs=1e-15)
    assert kendall_tau_c([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0


def test_tau_errors():
    with pytest.raises(LengthMismatch):
        kendall_tau_b([1, 2], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        kendall_tau_b([1, 1, 1], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        kendall_tau_b([1], [2])
    with pytest.raises(DegenerateCategories):
        kendall_tau_c([1, 2, 3], [5, 5, 5])
    with pytest.raises(DegenerateInput):
        kendall_tau_b([1.0, float("nan")], [1.0, 2.0])


def test_pair_tally_matches_enumeration():
    rng = random.Random(3)
    for _ in range(50):
        n = rng.randint(2, 30)
        x = [rng.randint(0, 4) for _ in range(n)]
        y = [rng.randint(0, 4) for _ in range(n)]
        t = pair_tally(x, y)
        assert (t.concordant, t.discordant) == pair_counts(x, y)
        assert t.total_pairs == n * (n - 1) // 2


def test_brute_force_oracle_on_tied_vectors():
    rng = random.Random(11)
    checked = 0
    while checked < 200:
        n = rng.randint(2, 50)
        x = [rng.randint(0, 5) for _ in range(n)]
        y = [rng.randint(0, 5) for _ in range(n)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        ob, oc = kendall_oracle(x, y)
        assert abs(kendall_tau_b(x, y) - ob) <= 1e-12
        assert abs(kendall_tau_c(x, y) - oc) <= 1e-12
        checked += 1


def test_agrees_with_scipy():
    rng = random.Random(5)
    for _ in range(30):
        n = rng.randint(3, 40)
        x = [rng.randint(0, 5) for _ in range(n)]
        y = [rng.randint(0, 5) for _ in range(n)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert kendall_tau_b(x, y) == pytest.approx(scipy.stats.kendalltau(x, y, variant="b").statistic, abs=1e-12)
        assert kendall_tau_c(x, y) == pytest.approx(scipy.stats.kendalltau(x, y, variant="c").statistic, abs=1e-12)


tied_pairs = st.integers(min_value=2, max_value=25).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
    )
).filter(lambda xy: len(set(xy[0])) > 1 and len(set(xy[1])) > 1)


@settings(max_examples=150, deadline=None)
@given(tied_pairs)
def test_tau_bounded_and_symmetric(xy):
    x, y = xy
    b = kendall_tau_b(x, y)
    c = kendall_tau_c(x, y)
    assert -1 - 1e-12 <= b <= 1 + 1e-12
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert kendall_tau_b(y, x) == pytest.approx(b, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(tied_pairs)
def test_monotone_transform_invariance(xy):
    x, y = xy
    warped = [math.exp(v) * 3 + 7 for v in x]
    assert kendall_tau_b(warped, y) == pytest.approx(kendall_tau_b(x, y), abs=1e-12)
    assert kendall_tau_c(warped, y) == pytest.approx(kendall_tau_c(x, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=20, unique=True), st.randoms(use_true_random=False))
def test_reversing_distinct_y_negates(xs, rnd):
    ys = list(range(len(xs)))
    rnd.shuffle(ys)
    rev = [-v for v in ys]
    assert kendall_tau_b(xs, rev) == pytest.approx(-kendall_tau_b(xs, ys), abs=1e-12)
    assert kendall_tau_c(xs, rev) == pytest.approx(-kendall_tau_c(xs, ys), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(tied_pairs, st.randoms(use_true_random=False))
def test_pair_order_does_not_matter(xy, rnd):
    x, y = xy
    idx = list(range(len(x)))
    rnd.shuffle(idx)
    assert kendall_tau_b([x[i] for i in idx], [y[i] for i in idx]) == kendall_tau_b(x, y)


def test_foil_examples():
    assert foil_pairwise_accuracy([(90, 40), (80, 70)]) == 1.0
    assert foil_pairwise_accuracy([(50, 50)]) == 0.5
    assert foil_pairwise_accuracy([(40, 90), (90, 40), (70, 70), (80, 10)]) == 0.625
    with pytest.raises(EmptyPairs):
        foil_pairwise_accuracy([])


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), min_size=1, max_size=30),
    st.integers(-50, 50),
)
def test_foil_matches_oracle_and_is_shift_invariant(pairs, shift):
    acc = foil_pairwise_accuracy(pairs)
    assert acc == pytest.approx(float(foil_oracle(pairs)), abs=1e-15)
    assert foil_pairwise_accuracy([(t + shift, f + shift) for t, f in pairs]) == acc


def _record(rid: str, metric: float | None, human: HumanJudgment) -> CorpusRecord:
    return CorpusRecord(
        id=rid,
        candidate=CandidateCaption(rid, "a caption", rid),
        references=ReferenceSet(rid, ("a reference",)),
        visual=None,
        human=human,
        precomputed_metrics={} if metric is None else {"M": metric},
    )


def test_correlate_corpus_monotone():
    recs = [_record(str(i), m, HumanJudgment(HumanKind.EXPERT_MEAN, h)) for i, (m, h) in enumerate([(10, 1), (20, 2), (30, 3)])]
    entry = correlate_corpus(recs, "M", dataset="toy")
    assert entry.tau_b == 1.0
    assert entry.n == 3


def test_correlate_corpus_missing_column_names_record():
    recs = [
        _record("a", 1.0, HumanJudgment(HumanKind.EXPERT_MEAN, 1.0)),
        _record("b", None, HumanJudgment(HumanKind.EXPERT_MEAN, 2.0)),
    ]
    with pytest.raises(MissingColumn) as err:
        correlate_corpus(recs, "M")
    assert "b" in str(err.value)


def test_accr_projection_selects_dimension():
    h = HumanJudgment(HumanKind.ACCR, (10.0, 20.0, 30.0, 40.0))
    assert project_human(h, HumanProjection.ACCURACY) == [10.0]
    assert project_human(h, HumanProjection.RELEVANCE) == [40.0]
    assert project_human(h, HumanProjection.AUTO) == [25.0]
    with pytest.raises(MissingColumn):
        project_human(HumanJudgment(HumanKind.EXPERT_MEAN, 2.0), HumanProjection.ACCURACY, "x")


def test_raw_judgments_projection_repeats_metric():
    recs = [
        _record("a", 1.0, HumanJudgment(HumanKind.EXPERT_MEAN, 2.0, (1, 3))),
        _record("b", 2.0, HumanJudgment(HumanKind.EXPERT_MEAN, 3.0, (2, 4))),
    ]
    entry = correlate_corpus(recs, "M", HumanProjection.RAW_JUDGMENTS)
    assert entry.n == 4
    ob, _ = kendall_oracle([1, 1, 2, 2], [1, 3, 2, 4])
    assert entry.tau_b == pytest.approx(ob, abs=1e-12)
