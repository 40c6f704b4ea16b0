import pytest

from sqldst.evaluation import (EvalReport, TurnTrace, build_report, change_jga,
                               copy_baseline, jga, per_domain_active_turns,
                               per_domain_jga, per_turn_index_stats, slot_value_f1)
from sqldst.retrieval import ExemplarPool, build_record, make_retriever


def test_jga_perfect():
    golds = [{"hotel-area": "west"}, {"hotel-area": "west", "hotel-stars": "4"}]
    assert jga(list(golds), golds) == 1.0


def test_jga_three_quarters():
    golds = [{"a-x": "1"}, {"a-x": "1", "a-y": "2"}, {"a-x": "1"}, {}]
    preds = [{"a-x": "1"}, {"a-x": "1"}, {"a-x": "1"}, {}]  # one turn misses a slot
    assert jga(preds, golds) == 0.75


def test_jga_empty_states_count_correct():
    assert jga([{}], [{}]) == 1.0


def test_jga_order_and_spelling_invariant():
    gold = [{"hotel-area": "west", "hotel-type": "guest house"}]
    pred = [{"hotel-type": "Guesthouse", "hotel-area": " WEST "}]
    assert jga(pred, gold) == 1.0


def test_jga_none_values_are_absent():
    assert jga([{"hotel-area": "none"}], [{}]) == 1.0


def test_jga_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        jga([{}], [{}, {}])


def test_per_domain_projection_isolates_domains():
    golds = [{"taxi-departure": "a", "hotel-area": "west"}]
    preds = [{"taxi-departure": "a", "hotel-area": "east"}]
    assert per_domain_jga(preds, golds, "taxi") == 1.0
    assert per_domain_jga(preds, golds, "hotel") == 0.0


def test_per_domain_vacuous_is_one():
    golds = [{"hotel-area": "west"}]
    preds = [{"hotel-area": "west"}]
    assert per_domain_jga(preds, golds, "train") == 1.0
    assert per_domain_active_turns(preds, golds, "train") == 0


def test_per_domain_unknown_domain(few_ont):
    with pytest.raises(ValueError, match="unknown domain"):
        per_domain_jga([], [], "spaceship", few_ont)


def test_per_domain_matches_brute_force():
    golds = [
        {"hotel-area": "west"},
        {"hotel-area": "west", "train-day": "monday"},
        {"train-day": "monday"},
        {},
        {"hotel-area": "east", "train-day": "friday"},
        {"hotel-stars": "4"},
    ]
    preds = [
        {"hotel-area": "west"},
        {"hotel-area": "east", "train-day": "monday"},
        {"train-day": "friday"},
        {"hotel-area": "west"},
        {"hotel-area": "east", "train-day": "friday"},
        {},
    ]
    for domain in ("hotel", "train"):
        hits = total = 0
        for p, g in zip(preds, golds):
            pp = {k: v for k, v in p.items() if k.startswith(domain + "-")}
            gp = {k: v for k, v in g.items() if k.startswith(domain + "-")}
            if pp or gp:
                total += 1
                hits += pp == gp
        assert per_domain_jga(preds, golds, domain) == pytest.approx(hits / total)


def test_change_jga():
    golds = [{"a-x": "1"}, {}, {"a-y": "NONE"}]
    assert change_jga(list(golds), golds) == 1.0
    assert change_jga([{}, {}, {}], golds) == pytest.approx(1 / 3)
    assert change_jga([{}, {}], [{}, {}]) == 1.0


def test_slot_value_f1_perfect_and_empty():
    golds = [{"a-x": "1", "a-y": "2"}]
    assert slot_value_f1(list(golds), golds) == 1.0
    assert slot_value_f1([{}], golds) == 0.0


def test_slot_value_f1_hand_case():
    # 3 gold pairs, 2 predicted, 2 matching: P=1, R=2/3, F1=0.8
    golds = [{"a-x": "1", "a-y": "2"}, {"a-z": "3"}]
    preds = [{"a-x": "1"}, {"a-z": "3"}]
    assert slot_value_f1(preds, golds) == pytest.approx(0.8)


def test_per_turn_index_stats_buckets():
    traces = [
        TurnTrace("d1", 0, {"a-x": "1"}, {"a-x": "1"}, {"a-x": "1"}, {"a-x": "1"}),
        TurnTrace("d1", 1, {"a-x": "1"}, {"a-x": "2"}, {}, {"a-x": "2"}),
        TurnTrace("d2", 0, {"a-x": "1"}, {"a-x": "1"}, {"a-x": "1"}, {"a-x": "1"}),
    ]
    rows = per_turn_index_stats(traces)
    assert rows == [(0, 1.0, 1.0, 2), (1, 0.0, 0.0, 1)]


def test_planted_error_decay_shape():
    # dialogue i errs exactly at turn i: change accuracy is flat across turn
    # index while accumulated-state accuracy is strictly non-increasing
    n, turns = 10, 10
    traces = []
    for i in range(n):
        state, pred_state = {}, {}
        for t in range(turns):
            gold_change = {f"d-s{t}": "v"}
            pred_change = {f"d-s{t}": "wrong"} if t == i else dict(gold_change)
            state = {**state, **gold_change}
            pred_state = {**pred_state, **pred_change}
            traces.append(TurnTrace(f"dlg{i}", t, dict(state), dict(pred_state),
                                    gold_change, pred_change))
    rows = per_turn_index_stats(traces)
    change_rates = [r[2] for r in rows]
    state_rates = [r[1] for r in rows]
    assert len(set(change_rates)) == 1  # flat
    assert all(a >= b for a, b in zip(state_rates, state_rates[1:]))  # non-increasing
    assert state_rates[0] > state_rates[-1]


def test_build_report_counts_and_errors():
    traces = [
        TurnTrace("d1", 0, {"hotel-area": "west"}, {"hotel-area": "west"},
                  {"hotel-area": "west"}, {"hotel-area": "west"}),
        TurnTrace("d1", 1, {"hotel-area": "west"}, {},
                  {}, {}, error="UnknownTable: boom"),
        TurnTrace("d2", 0, {}, {}, {}, {}),
    ]
    report = build_report(traces, domains=["hotel", "train"])
    assert report.n_dialogues == 2 and report.n_turns == 3
    assert report.error_log == [("d1", 1, "UnknownTable: boom")]
    assert report.jga_all == pytest.approx(2 / 3)
    assert report.jga_per_domain["train"] == 1.0
    assert sum(r[3] for r in report.per_turn_index_jga) == 3
    assert not report.vacuous


def test_build_report_empty_is_vacuous():
    report = build_report([], domains=["hotel"])
    assert report.vacuous and report.n_turns == 0
    assert report.jga_all == 1.0 and report.change_jga == 1.0


def test_report_dict_roundtrip():
    traces = [TurnTrace("d", 0, {"a-x": "1"}, {}, {"a-x": "1"}, {}, error="e")]
    report = build_report(traces, domains=["a"])
    again = EvalReport.from_dict(report.to_dict())
    assert again == report


def test_rates_in_unit_interval():
    traces = [TurnTrace("d", t, {"a-x": str(t)}, {"a-x": "0"}, {"a-x": str(t)}, {})
              for t in range(5)]
    report = build_report(traces, domains=["a"])
    for rate in [report.jga_all, report.change_jga, report.slot_value_f1,
                 *report.jga_per_domain.values()]:
        assert 0.0 <= rate <= 1.0


# --- copy baseline ---

def two_turn_dialogues():
    from sqldst.dialogues import DialogueRecord, Turn
    return [DialogueRecord("t1", (
        Turn("", "i want a hotel in the west", {"hotel-area": "west"}),
        Turn("sure", "four stars please", {"hotel-area": "west", "hotel-stars": "4"}),
    ))]


def test_copy_baseline_with_exact_twin():
    test_set = two_turn_dialogues()
    pool = ExemplarPool((
        build_record("p0", "[context] \n[system] \nQ: [user] i want a hotel in the west",
                     {"hotel-area": "west"}),
        build_record("p1", "[context] hotel-area: west\n[system] sure\nQ: [user] four stars please",
                     {"hotel-stars": "4"}),
    ))
    report = copy_baseline(pool, make_retriever("oracle", pool), test_set, domains=["hotel"])
    assert report.jga_all == 1.0 and report.n_turns == 2


def test_copy_baseline_empty_pool():
    with pytest.raises(ValueError, match="empty"):
        copy_baseline(ExemplarPool(()), None, two_turn_dialogues())
