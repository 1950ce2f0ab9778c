"""
Attack suite: every scenario passes with all checks on, and switching a
check off breaks exactly the scenarios that depend on it.
"""
from fractions import Fraction

import pytest

from servnet_sim import attack_scenarios, build_sim, run, run_attack_suite, snapshot_from_events, snapshot_reputations
from servnet_sim.attacks import run_attack

NAMES = [
    "contract-impersonation",
    "contract-mitm",
    "replay-messages-1-9",
    "replay-messages-10-11",
    "feedback-impersonation",
    "false-scorer",
    "feedback-dropper",
    "fake-authority-notice",
]


@pytest.fixture(scope="module")
def outcomes():
    return {o.name: o for o in run_attack_suite()}


def test_suite_covers_every_attack(outcomes):
    assert sorted(outcomes) == sorted(NAMES)


@pytest.mark.parametrize("name", NAMES)
def test_attack_is_defeated(outcomes, name):
    outcome = outcomes[name]
    assert outcome.passed, outcome.detail
    assert outcome.label == "PASS"


def test_suite_is_deterministic(outcomes):
    again = run_attack(next(s for s in attack_scenarios() if s.name == "contract-mitm"))
    assert again.log.to_jsonl() == outcomes["contract-mitm"].log.to_jsonl()


def test_without_nonce_cache_replays_succeed(outcomes):
    assert outcomes["replay-messages-1-9"].passed, outcomes["replay-messages-1-9"].detail
    results = {o.name: o.passed for o in run_attack_suite(disable=["nonce_cache"])}
    assert results["replay-messages-1-9"] is False


def test_every_early_message_is_replayed_and_rejected(outcomes):
    log = outcomes["replay-messages-1-9"].log
    assert log.count("adversary.capture_missing") == 0
    replayed = {e.payload["message"] for e in log.select("adversary.replayed")}
    assert {"reputation_relay", "reputation_attestation", "reputation_query"} <= replayed
    assert log.count("replay.rejected") == log.count("adversary.replayed") == 9


def test_without_transcript_check_tampering_succeeds():
    results = {o.name: o.passed for o in run_attack_suite(disable=["transcript_check"])}
    assert results["contract-mitm"] is False
    assert results["replay-messages-10-11"] is False


def test_unknown_control():
    with pytest.raises(ValueError, match="Unknown control"):
        attack_scenarios(disable=["firewall"])


def test_cheater_penalty_charges_the_flagged_scorer():
    script = next(s for s in attack_scenarios() if s.name == "false-scorer").script
    rows = {}
    for penalty in (0, 3):
        sim = build_sim(script.model_copy(update={"cheater_penalty": Fraction(penalty)}))
        log = run(sim)
        assert log.count("ledger.penalty", node="S2") == (1 if penalty else 0)
        assert snapshot_from_events(log) == snapshot_reputations(sim)
        rows[penalty] = next(r for r in snapshot_reputations(sim) if r.server == "S2")
    assert rows[3].NEG == rows[0].NEG + 3
    assert rows[3].T == rows[0].T + 1
