"""
Reputation algebra: ledgers, weighting, closed form and fairness threshold.
"""
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from reputation_core import (
    FairnessParams,
    LocalScore,
    ScoreLedger,
    WeightMode,
    analytic_threshold_root,
    apply_feedback,
    closed_form_gr,
    discrete_gr,
    fairness_table,
    fairness_threshold,
    format_decimal,
    global_reputation,
    new_ledger,
    record_transaction,
    reset_ledger,
    scan_threshold,
    scorer_weight,
    simulate_unit_gr,
)

reputations = st.fractions(min_value=0, max_value=1000, max_denominator=50)


def test_fresh_ledger_is_zero():
    ledger = new_ledger("S1")
    assert (ledger.transactions, ledger.pos_accum, ledger.neg_accum) == (0, 0, 0)
    assert global_reputation(ledger) == 0


def test_global_reputation_formula():
    ledger = ScoreLedger("S1", 10, Fraction(9), Fraction(1))
    assert global_reputation(ledger) == Fraction(10 * 9, 2)


def test_unit_weight_ignores_scorer_reputation():
    ledger = apply_feedback(new_ledger("S1"), 1, Fraction(500), WeightMode.UNIT)
    assert ledger.pos_accum == 1
    assert ledger.transactions == 1


def test_zero_weight_scorer_only_counts_the_transaction():
    ledger = ScoreLedger("S1", 4, Fraction(4), Fraction(0))
    after = apply_feedback(ledger, -1, 0, WeightMode.REPUTATION_WEIGHTED)
    assert after.transactions == 5
    assert after.neg_accum == 0
    assert global_reputation(after) > global_reputation(ledger)


def test_invalid_score_rejected():
    with pytest.raises(ValueError):
        apply_feedback(new_ledger("S1"), 0, 1)
    with pytest.raises(ValueError):
        LocalScore.coerce(2)


def test_negative_scorer_reputation_rejected():
    with pytest.raises(ValueError):
        scorer_weight(-1, WeightMode.REPUTATION_WEIGHTED)


def test_negative_ledger_rejected():
    with pytest.raises(ValueError):
        ScoreLedger("S1", -1)
    with pytest.raises(ValueError):
        ScoreLedger("S1", 1, Fraction(-1))


def test_record_transaction_and_reset():
    ledger = ScoreLedger("S1", 3, Fraction(3), Fraction(1))
    assert record_transaction(ledger) == ScoreLedger("S1", 4, Fraction(3), Fraction(1))
    assert reset_ledger(ledger) == new_ledger("S1")


def test_format_decimal():
    assert format_decimal(Fraction(9000, 11)) == "818.181818"
    assert format_decimal(Fraction(0)) == "0.000000"


@settings(max_examples=200, deadline=None)
@given(
    t=st.integers(min_value=0, max_value=50),
    pos=reputations,
    neg=reputations,
    scorer=reputations,
    score=st.sampled_from([1, -1]),
)
def test_transaction_count_always_increments(t, pos, neg, scorer, score):
    ledger = ScoreLedger("S1", t, pos, neg)
    after = apply_feedback(ledger, score, scorer, WeightMode.REPUTATION_WEIGHTED)
    assert after.transactions == t + 1
    assert (after.pos_accum - pos) + (after.neg_accum - neg) == scorer


@settings(max_examples=1000, deadline=None)
@given(t=st.integers(min_value=0, max_value=50), pos=reputations, neg=reputations)
def test_negative_from_zero_reputation_scorer_never_lowers_gr(t, pos, neg):
    ledger = ScoreLedger("S1", t, pos, neg)
    after = apply_feedback(ledger, -1, 0, WeightMode.REPUTATION_WEIGHTED)
    assert global_reputation(after) >= global_reputation(ledger)


@settings(max_examples=1000, deadline=None)
@given(
    t=st.integers(min_value=0, max_value=50),
    pos=reputations,
    neg=reputations,
    low=reputations,
    extra=st.fractions(min_value=Fraction(1, 50), max_value=100, max_denominator=50),
)
def test_higher_reputation_scorer_counts_more(t, pos, neg, low, extra):
    ledger = ScoreLedger("S1", t, pos, neg)
    from_low = apply_feedback(ledger, 1, low, WeightMode.REPUTATION_WEIGHTED)
    from_high = apply_feedback(ledger, 1, low + extra, WeightMode.REPUTATION_WEIGHTED)
    assert global_reputation(from_high) > global_reputation(from_low)


def test_closed_form_spot_value():
    assert closed_form_gr(FairnessParams(100, 10)) == Fraction(90000, 110)
    assert float(closed_form_gr(FairnessParams(100, 10))) == pytest.approx(818.1818, rel=1e-6)
    assert closed_form_gr(FairnessParams(10, 10)) == 45


def test_unit_simulation_matches_closed_form_when_period_divides():
    for m in range(2, 13):
        for t in range(0, 201, m):
            assert simulate_unit_gr(FairnessParams(t, m)) == closed_form_gr(FairnessParams(t, m)), (t, m)


def test_unit_simulation_matches_discrete_sequence():
    for m in range(2, 13):
        for t in range(0, 61):
            assert simulate_unit_gr(FairnessParams(t, m)) == discrete_gr(FairnessParams(t, m)), (t, m)


def test_period_must_be_at_least_two():
    with pytest.raises(ValueError):
        FairnessParams(10, 1)
    with pytest.raises(ValueError):
        FairnessParams(-1, 2)


def test_threshold_spot_values():
    assert fairness_threshold(20, FairnessParams(100, 10)) == 58
    assert fairness_threshold(10, FairnessParams(50, 10)) == 51
    assert fairness_threshold(2, FairnessParams(0, 2)) == 1


def test_threshold_matches_scan_everywhere():
    for m1 in range(2, 13):
        for m2 in range(2, 13):
            for t2 in range(0, 201):
                q = FairnessParams(t2, m2)
                assert fairness_threshold(m1, q) == scan_threshold(m1, q), (m1, t2, m2)


@settings(max_examples=100, deadline=None)
@given(m1=st.integers(min_value=2, max_value=30), t2=st.integers(min_value=0, max_value=400),
       m2=st.integers(min_value=2, max_value=30))
def test_threshold_is_smallest_winner(m1, t2, m2):
    q = FairnessParams(t2, m2)
    t1 = fairness_threshold(m1, q)
    assert closed_form_gr(FairnessParams(t1, m1)) > closed_form_gr(q)
    if t1 > 0:
        assert closed_form_gr(FairnessParams(t1 - 1, m1)) <= closed_form_gr(q)


def test_analytic_root_brackets_threshold():
    q = FairnessParams(100, 10)
    root = analytic_threshold_root(20, closed_form_gr(q))
    assert 57 < root < 58
    with pytest.raises(ValueError):
        analytic_threshold_root(1, Fraction(1))


def test_fairness_table_columns():
    table = fairness_table(20, FairnessParams(100, 10), 60)
    assert table["t"][0] == 0 and table["t"][-1] == 60
    assert table["peer1_ahead"].index(True) == 58
    with pytest.raises(ValueError):
        fairness_table(20, FairnessParams(100, 10), -1)
