"""
Simulator: scenario validation, determinism, ledger replay, directory
convergence and the bundled scenarios.
"""
import pytest

from servnet_sim import (
    AdversaryAction,
    EventLog,
    ScenarioValidationError,
    build_sim,
    check_directory_convergence,
    inject_adversary,
    load_scenario,
    parse_scenario,
    random_scenario,
    run,
    snapshot_csv,
    snapshot_from_events,
    snapshot_reputations,
)
from servnet_tool import build_report

SETUP_KINDS = {"setup.authority", "ledger.created", "record.authority", "election.held", "db.access"}


def _run(script, until=None):
    sim = build_sim(script)
    return sim, run(sim, until)


def test_honest_pair_binds_and_scores(honest_pair):
    sim, log = _run(honest_pair)
    assert log.count("contract.bound") == 2
    assert log.count("feedback.outcome", status="ACCEPTED") == 2
    rows = {r.server: r for r in snapshot_reputations(sim)}
    assert rows["S1"].T == 1 and rows["S2"].T == 1
    assert rows["S1"].GR > 0 and rows["S2"].GR > 0
    assert build_report(honest_pair.name, log, honest_pair.expectations).passed


@pytest.mark.parametrize("initiator,responder", [("S2", "S1"), ("S1", "S2"), ("S2", "S3")])
def test_authority_trades_with_its_own_leaves(initiator, responder):
    script = parse_scenario({
        "name": "own-subtree",
        "seed": 4,
        "duration": 60,
        "nodes": [
            {"id": "S1", "role": "authority"},
            {"id": "S2", "role": "leaf", "authority": "S1"},
            {"id": "S3", "role": "leaf", "authority": "S1"},
        ],
        "trade_schedule": [
            {"tick": 1, "initiator": initiator, "responder": responder, "share_size": 16, "duration": 10}
        ],
    })
    _, log = _run(script)
    assert log.count("contract.bound") == 2
    assert log.count("replay.rejected") == 0
    assert log.count("contract.aborted") == 0


def test_same_seed_same_bytes(honest_pair):
    first_sim, first = _run(honest_pair)
    second_sim, second = _run(honest_pair)
    assert first.to_jsonl() == second.to_jsonl()
    assert snapshot_csv(snapshot_reputations(first_sim)) == snapshot_csv(snapshot_reputations(second_sim))


def test_seed_changes_the_log(honest_pair):
    _, first = _run(honest_pair)
    _, other = _run(honest_pair.model_copy(update={"seed": 8}))
    assert first.to_jsonl() != other.to_jsonl()


def test_log_round_trips_through_jsonl(honest_pair, tmp_path):
    _, log = _run(honest_pair)
    path = log.write_jsonl(tmp_path / "events.jsonl")
    assert EventLog.read_jsonl(path).to_jsonl() == log.to_jsonl()


def test_events_are_totally_ordered(honest_pair):
    _, log = _run(honest_pair)
    keys = [(e.tick, e.seq) for e in log]
    assert keys == sorted(keys)
    assert [e.seq for e in log] == list(range(len(log)))


def test_empty_schedule_only_sets_up_and_elects(honest_pair):
    script = honest_pair.model_copy(update={"trade_schedule": [], "duration": 250})
    sim, log = _run(script)
    assert set(log.kinds()) <= SETUP_KINDS
    assert log.count("election.held", decision="KEEP") == 2
    assert all(r.T == 0 for r in snapshot_reputations(sim))


@pytest.mark.parametrize("seed", range(100))
def test_replaying_the_log_rebuilds_every_ledger(seed):
    sim, log = _run(random_scenario(seed))
    assert snapshot_from_events(log) == snapshot_reputations(sim)


@pytest.mark.parametrize("seed", range(20))
def test_directories_converge(seed):
    script = random_scenario(seed)
    sim, _ = _run(script, until=script.duration + 60)
    converged, diff = check_directory_convergence(sim)
    assert converged, diff


def test_random_scenario_is_reproducible():
    assert random_scenario(3) == random_scenario(3)
    assert random_scenario(3).trade_schedule != random_scenario(4).trade_schedule
    with pytest.raises(ValueError):
        random_scenario(1, nodes=2, authorities=3)


@pytest.mark.parametrize("name", ["honest_pair.json", "accountability.json", "rotation.json"])
def test_bundled_scenarios_meet_their_expectations(scenario_dir, name):
    script = load_scenario(scenario_dir / name)
    _, log = _run(script)
    report = build_report(script.name, log, script.expectations)
    assert report.passed, [(r.name, r.actual) for r in report.failures]


def test_failing_expectation_is_reported(scenario_dir):
    script = load_scenario(scenario_dir / "honest_pair_failing.json")
    _, log = _run(script)
    report = build_report(script.name, log, script.expectations)
    assert not report.passed
    assert [r.name for r in report.failures] == ["S2 is famous after one trade"]


def test_rotation_hands_over_and_locks_out(scenario_dir):
    sim, log = _run(load_scenario(scenario_dir / "rotation.json"))
    committed = log.select("rotation.committed")
    assert committed
    for event in committed:
        old, new = event.payload["old"], event.payload["new"]
        assert log.count("authority.installed", actor=new, old=old) >= 1
        assert log.count("authority.demoted", actor=old, new=new) >= 1
        assert log.count("db.lockout", actor=old) >= 1
    assert check_directory_convergence(sim)[0]


def test_rotation_db_access_and_notices(scenario_dir):
    _, log = _run(load_scenario(scenario_dir / "rotation.json"))
    events = list(log)
    for commit in log.select("rotation.committed"):
        old, new = commit.payload["old"], commit.payload["new"]
        later = [e for e in events if e.seq > commit.seq]
        reinstated = next((e.seq for e in later if e.kind == "rotation.committed" and e.payload["new"] == old), None)
        old_window = [e for e in later if reinstated is None or e.seq < reinstated]
        assert not [e for e in old_window if e.kind == "db.access" and e.actor == old]
        first_new = next(e for e in later if e.actor == new and e.kind.startswith("db."))
        assert first_new.kind == "db.access"
        for member in commit.payload["members"]:
            assert log.count("notice.accepted", actor=member, nonce=commit.payload["nonce"]) == 1


def test_waiting_feedback_follows_the_authority_change():
    # S3 drops S2's negative score, so S1 holds only the direct copy when it departs
    script = parse_scenario({
        "name": "handover-mid-feedback",
        "seed": 11,
        "duration": 120,
        "election_period": 10_000,
        "feedback_timeout": 40,
        "nodes": [
            {"id": "S1", "role": "authority"},
            {"id": "S2", "role": "leaf", "authority": "S1"},
            {"id": "S3", "role": "leaf", "authority": "S1",
             "policy": {"honesty": "DROP_FEEDBACK", "keeps_shares": False}},
            {"id": "S4", "role": "leaf", "authority": "S1"},
        ],
        "seed_ledgers": [{"node": "S4", "T": 10, "POS": 10}],
        "trade_schedule": [{"tick": 1, "initiator": "S2", "responder": "S3", "share_size": 16, "duration": 10}],
        "departures": [{"tick": 35, "node": "S1"}],
    })
    _, log = _run(script)
    assert log.count("feedback.dropped", actor="S3", scorer="S2") == 1
    [handover] = log.select("authority.feedback_handover", actor="S1", to="S4")
    assert handover.payload["slots"] == 1 and handover.payload["copies"] == 1
    assert log.count("net.send", actor="S1", dst="S4", message="feedback_copy") == 1
    [outcome] = log.select("feedback.outcome", scorer="S2", target="S3")
    assert outcome.actor == "S4"
    assert outcome.payload["status"] == "RECEIVER_DROPPED_RECOVERED"
    assert outcome.seq > handover.seq


def test_accountability_isolates_the_failing_node(scenario_dir):
    sim, log = _run(load_scenario(scenario_dir / "accountability.json"))
    rows = {r.server: r for r in snapshot_reputations(sim)}
    assert rows["S6"].GR == 0
    assert all(rows[s].GR > 0 for s in ("S2", "S3", "S4", "S5"))


# -- validation -------------------------------------------------------------------


def _doc(**overrides):
    doc = {
        "name": "v",
        "nodes": [{"id": "S1", "role": "authority"}, {"id": "S2"}],
        "trade_schedule": [{"tick": 1, "initiator": "S1", "responder": "S2", "share_size": 8, "duration": 5}],
    }
    doc.update(overrides)
    return doc


def test_valid_document_parses():
    script = parse_scenario(_doc())
    assert [n.id for n in script.nodes] == ["S1", "S2"]


def test_cross_references_are_checked():
    doc = _doc(
        nodes=[{"id": "S1", "role": "authority"}, {"id": "S1"}, {"id": "DB"}],
        trade_schedule=[{"tick": 1, "initiator": "S1", "responder": "S9", "share_size": 8, "duration": 5}],
    )
    with pytest.raises(ScenarioValidationError) as err:
        parse_scenario(doc)
    problems = err.value.problems
    assert "nodes: duplicate id S1" in problems
    assert "nodes: id DB is reserved" in problems
    assert "trade_schedule[0].responder: undeclared node S9" in problems


def test_field_errors_name_their_location():
    with pytest.raises(ScenarioValidationError) as err:
        parse_scenario(_doc(seed=-1, election_period=0))
    located = {p.split(":")[0] for p in err.value.problems}
    assert {"seed", "election_period"} <= located


def test_unknown_fields_are_refused():
    with pytest.raises(ScenarioValidationError):
        parse_scenario(_doc(colour="blue"))


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioValidationError):
        load_scenario(tmp_path / "nope.json")


def test_leaf_naming_a_non_authority_fails_at_setup():
    script = parse_scenario(_doc(nodes=[
        {"id": "S1", "role": "authority"},
        {"id": "S2", "role": "leaf", "authority": "S3"},
        {"id": "S3", "role": "leaf"},
    ]))
    with pytest.raises(ScenarioValidationError, match="not an initial authority"):
        build_sim(script)


# -- adversary injection ------------------------------------------------------------


def test_adversary_cannot_hold_someone_elses_key(honest_pair):
    sim = build_sim(honest_pair)
    action = AdversaryAction(kind="impersonate", at_tick=5, victim="S2", target="S1", with_key_of="S2")
    with pytest.raises(ValueError, match="unforgeable"):
        inject_adversary(sim, action)
    own = AdversaryAction(kind="impersonate", at_tick=5, victim="S2", target="S1", with_key_of=sim.adversary_id)
    assert inject_adversary(sim, own) is sim


def test_scripted_key_possession_is_a_scenario_error(honest_pair):
    action = AdversaryAction(kind="impersonate", at_tick=5, victim="S2", target="S1", with_key_of="S1")
    script = honest_pair.model_copy(update={"adversaries": [action]})
    with pytest.raises(ScenarioValidationError) as err:
        build_sim(script)
    assert err.value.problems[0].startswith("adversaries[0]:")


def test_adversary_action_in_the_past(honest_pair):
    sim = build_sim(honest_pair)
    run(sim, until=10)
    with pytest.raises(ValueError, match="past"):
        inject_adversary(sim, AdversaryAction(kind="impersonate", at_tick=5, victim="S2", target="S1"))
