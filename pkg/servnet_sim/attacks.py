"""
Built-in attack scenarios.

Each scenario is an ordinary ScenarioScript plus a verdict over the log it
produces. Passing means the attack failed the way the protocol intends.
The nonce cache and the transcript check can be switched off for the
whole suite; the replay and tampering scenarios must then fail.

Usage:
  outcomes = run_attack_suite()
  outcomes = run_attack_suite(disable=["nonce_cache"])
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from servnet_sim.engine import build_sim, run
from servnet_sim.events import EventLog
from servnet_sim.scenario import (
    AdversaryAction,
    CaptureRef,
    Controls,
    Honesty,
    LedgerSeed,
    NodePolicy,
    NodeSpec,
    ScenarioScript,
    TradeEntry,
)
from servnet_sim.snapshot import SnapshotRow, snapshot_from_events

logger = logging.getLogger("servnet.attacks")

CONTROLS = ("nonce_cache", "transcript_check")
ATTACK_SEED = 4242
QUIET_ELECTIONS = 10_000

Verdict = Callable[[EventLog], Tuple[bool, str]]


@dataclass(frozen=True)
class AttackScenario:
    name: str
    script: ScenarioScript
    verdict: Verdict
    summary: str


@dataclass(frozen=True)
class AttackOutcome:
    name: str
    passed: bool
    detail: str
    log: EventLog

    @property
    def label(self) -> str:
        return "PASS" if self.passed else "FAIL"


def _nodes(policies: Optional[Dict[str, NodePolicy]] = None) -> List[NodeSpec]:
    """S1 and S3 are authorities; S2, S5 sit under S1 and S4 under S3."""
    policies = policies or {}
    layout = [("S1", "authority", None), ("S2", "leaf", "S1"), ("S3", "authority", None), ("S4", "leaf", "S3"),
              ("S5", "leaf", "S1")]
    return [
        NodeSpec(id=node, role=role, authority=authority, policy=policies.get(node, NodePolicy()))
        for node, role, authority in layout
    ]


def _script(name: str, **fields) -> ScenarioScript:
    base = dict(
        name=name,
        seed=ATTACK_SEED,
        nodes=_nodes(),
        authority_count=2,
        election_period=QUIET_ELECTIONS,
        duration=120,
    )
    base.update(fields)
    return ScenarioScript(**base)


def _trade(tick: int, duration: int = 30) -> TradeEntry:
    return TradeEntry(tick=tick, initiator="S2", responder="S4", share_size=64, duration=duration)


def _row(log: EventLog, server: str) -> Optional[SnapshotRow]:
    for row in snapshot_from_events(log):
        if row.server == server:
            return row
    return None


# -- scenarios ----------------------------------------------------------------


def contract_impersonation() -> AttackScenario:
    script = _script(
        "contract-impersonation",
        adversaries=[AdversaryAction(kind="impersonate", at_tick=5, victim="S2", target="S4")],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        bound = [e for e in log.select("contract.bound") if "S2" in (e.actor, e.payload.get("peer"))]
        forged = log.count("contract.aborted", actor="S4", reason="forged-binding")
        refused = log.count("adversary.sign_refused", victim="S2")
        ok = not bound and forged == 1 and refused >= 1
        return ok, f"bound with victim: {len(bound)}, forged-binding aborts: {forged}, refused signatures: {refused}"

    return AttackScenario(script.name, script, verdict, "impersonate S2 through a full contract with S4")


def contract_mitm() -> AttackScenario:
    script = _script(
        "contract-mitm",
        trade_schedule=[_trade(1)],
        adversaries=[
            AdversaryAction(kind="mitm_tamper", at_tick=0, link=["S2", "S4"], message="contract_request",
                            field="share_size", value=4096)
        ],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        bound = log.count("contract.bound")
        aborted = {e.actor for e in log.select("contract.aborted", reason="transcript-mismatch")}
        ok = bound == 0 and aborted == {"S2", "S4"}
        return ok, f"bound: {bound}, transcript-mismatch aborts at: {sorted(aborted)}"

    return AttackScenario(script.name, script, verdict, "rewrite S2's share size in message 1")


# Messages 1 to 9 of one S2 -> S4 contract, as (kind, src, dst).
_CONTRACT_TRAFFIC = [
    ("contract_request", "S2", "S4"),
    ("reputation_query", "S4", "S3"),
    ("reputation_relay", "S3", "S1"),
    ("reputation_attestation", "S1", "S4"),
    ("contract_counter", "S4", "S2"),
    ("reputation_query", "S2", "S1"),
    ("reputation_relay", "S1", "S3"),
    ("reputation_attestation", "S3", "S2"),
    ("contract_ack", "S2", "S4"),
]
REPLAY_TICK = 30


def replay_early_messages() -> AttackScenario:
    script = _script(
        "replay-messages-1-9",
        trade_schedule=[_trade(1, duration=200)],
        adversaries=[
            AdversaryAction(kind="replay", at_tick=REPLAY_TICK, capture=CaptureRef(message=kind, src=src, dst=dst))
            for kind, src, dst in _CONTRACT_TRAFFIC
        ],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        replayed = log.count("adversary.replayed")
        rejected = log.count("replay.rejected")
        reopened = [e for e in log.select("contract.opened") if e.tick >= REPLAY_TICK]
        bound = log.count("contract.bound")
        ok = replayed == len(_CONTRACT_TRAFFIC) and rejected == replayed and not reopened and bound == 2
        return ok, f"replayed: {replayed}, rejected: {rejected}, sessions opened by replays: {len(reopened)}"

    return AttackScenario(script.name, script, verdict, "replay every message 1-9 of a finished contract")


def replay_transcript_hashes() -> AttackScenario:
    script = _script(
        "replay-messages-10-11",
        trade_schedule=[_trade(1, duration=200), _trade(40, duration=200), _trade(80, duration=200)],
        adversaries=[
            AdversaryAction(kind="replay", at_tick=35, substitute=True,
                            capture=CaptureRef(message="transcript_hash", src="S2", dst="S4")),
            AdversaryAction(kind="replay", at_tick=75, substitute=True,
                            capture=CaptureRef(message="transcript_hash", src="S4", dst="S2")),
        ],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        mismatches = sorted(e.actor for e in log.select("contract.aborted", reason="transcript-mismatch"))
        ok = mismatches == ["S2", "S2", "S4"]
        return ok, f"transcript-mismatch aborts: {mismatches}"

    return AttackScenario(script.name, script, verdict, "substitute old messages 10 and 11 into later contracts")


def feedback_impersonation() -> AttackScenario:
    script = _script(
        "feedback-impersonation",
        trade_schedule=[_trade(1, duration=60)],
        adversaries=[AdversaryAction(kind="impersonate", at_tick=20, victim="S2", target="S4", protocol="feedback")],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        rejected = log.count("feedback.rejected", scorer="S2", reason="bad-signature")
        negatives = log.count("feedback.outcome", scorer="S2", target="S4", score=-1)
        ok = rejected >= 1 and negatives == 0
        return ok, f"rejected forged copies: {rejected}, negative scores applied: {negatives}"

    return AttackScenario(script.name, script, verdict, "send a negative score for S4 under S2's name")


_WARM = [LedgerSeed(node="S2", T=10, POS=10), LedgerSeed(node="S4", T=5, POS=5)]


def false_scorer() -> AttackScenario:
    script = _script(
        "false-scorer",
        nodes=_nodes({"S2": NodePolicy(honesty=Honesty.FALSE_SCORER)}),
        seed_ledgers=_WARM,
        trade_schedule=[_trade(1, duration=20)],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        flagged = log.count("feedback.outcome", status="GIVER_CHEATING_FLAGGED", scorer="S2", target="S4")
        row = _row(log, "S4")
        unchanged = row is not None and (row.POS, row.NEG) == (5, 0) and row.T == 6
        return flagged == 1 and unchanged, f"flagged: {flagged}, S4 ledger: {row}"

    return AttackScenario(script.name, script, verdict, "S2 sends different scores on the two feedback paths")


def feedback_dropper() -> AttackScenario:
    script = _script(
        "feedback-dropper",
        nodes=_nodes({"S4": NodePolicy(honesty=Honesty.DROP_FEEDBACK, keeps_shares=False)}),
        seed_ledgers=_WARM,
        trade_schedule=[_trade(1, duration=20)],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        dropped = log.count("feedback.dropped", actor="S4")
        recovered = log.count("feedback.outcome", status="RECEIVER_DROPPED_RECOVERED", target="S4")
        row = _row(log, "S4")
        charged = row is not None and row.NEG > 0
        ok = dropped == 1 and recovered == 1 and charged
        return ok, f"dropped: {dropped}, recovered: {recovered}, S4 ledger: {row}"

    return AttackScenario(script.name, script, verdict, "S4 loses S2's share and drops the negative score")


def fake_authority_notice() -> AttackScenario:
    script = _script(
        "fake-authority-notice",
        adversaries=[
            AdversaryAction(kind="fake_authority_msg", at_tick=5, claim_new="S2", claim_old="S1"),
            AdversaryAction(kind="fake_authority_msg", at_tick=6, variant="change_request", claim_new="S2",
                            claim_old="S1"),
        ],
    )

    def verdict(log: EventLog) -> Tuple[bool, str]:
        ignored = {e.actor for e in log.select("notice.ignored")}
        accepted = log.count("notice.accepted")
        rejected = log.count("rotation.rejected", claimed="S1")
        row = _row(log, "S2")
        ok = ignored == {"S1", "S2", "S3", "S4", "S5"} and accepted == 0 and rejected == 1
        ok = ok and row is not None and row.authority == "S1"
        return ok, f"ignored by: {sorted(ignored)}, accepted: {accepted}, forged requests rejected: {rejected}"

    return AttackScenario(script.name, script, verdict, "announce S2 as S1's successor without the DB")


SCENARIOS: List[Callable[[], AttackScenario]] = [
    contract_impersonation,
    contract_mitm,
    replay_early_messages,
    replay_transcript_hashes,
    feedback_impersonation,
    false_scorer,
    feedback_dropper,
    fake_authority_notice,
]


def attack_scenarios(disable: Iterable[str] = ()) -> List[AttackScenario]:
    """The suite, with the named controls switched off in every script."""
    disabled = set(disable)
    unknown = disabled - set(CONTROLS)
    if unknown:
        raise ValueError(f"Unknown control(s): {', '.join(sorted(unknown))}")
    controls = Controls(**{name: name not in disabled for name in CONTROLS})
    scenarios = []
    for make in SCENARIOS:
        scenario = make()
        script = scenario.script.model_copy(update={"controls": controls})
        scenarios.append(AttackScenario(scenario.name, script, scenario.verdict, scenario.summary))
    return scenarios


def run_attack(scenario: AttackScenario) -> AttackOutcome:
    log = run(build_sim(scenario.script))
    passed, detail = scenario.verdict(log)
    logger.info(f"{scenario.name}: {'PASS' if passed else 'FAIL'} ({detail})")
    return AttackOutcome(scenario.name, passed, detail, log)


def run_attack_suite(disable: Iterable[str] = ()) -> List[AttackOutcome]:
    return [run_attack(scenario) for scenario in attack_scenarios(disable)]
