"""
Run reports.

A report is a pure function of the event log and the scenario's
expectations: the snapshot inside it is rebuilt by replaying the log, so
the same events.jsonl always produces the same report bytes.
"""

import operator
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

from reputation_core import format_decimal
from servnet_sim import EventLog, SnapshotRow, snapshot_from_events
from servnet_sim.scenario import Expectation

# Event kinds worth a reader's attention in a finished run.
FLAGGED_KINDS = (
    "adversary.sign_refused",
    "alarm.rotation",
    "contract.aborted",
    "db.lockout",
    "feedback.dropped",
    "feedback.rejected",
    "notice.ignored",
    "replay.rejected",
    "revocation.unknown",
    "rotation.rejected",
    "rotation.rolled_back",
)
FLAGGED_STATUSES = ("GIVER_CHEATING_FLAGGED", "RECEIVER_DROPPED_RECOVERED")

OPERATORS: Dict[str, Callable[[Any, Any], bool]] = {
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    "<=": operator.le,
    ">": operator.gt,
    "<": operator.lt,
}


@dataclass(frozen=True)
class ExpectationResult:
    name: str
    passed: bool
    actual: Union[int, str]
    op: str
    expected: Union[int, float, str]


@dataclass
class RunReport:
    scenario: str
    snapshot: List[SnapshotRow]
    event_counts: Dict[str, int]
    flagged: List[Dict[str, Any]] = field(default_factory=list)
    expectations: List[ExpectationResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.expectations)

    @property
    def failures(self) -> List[ExpectationResult]:
        return [r for r in self.expectations if not r.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "passed": self.passed,
            "snapshot": [dict(zip(("server", "T", "POS", "NEG", "GR", "authority"), row.csv_row()))
                         for row in self.snapshot],
            "event_counts": self.event_counts,
            "flagged": self.flagged,
            "expectations": [
                {"name": r.name, "passed": r.passed, "actual": r.actual, "op": r.op, "expected": r.expected}
                for r in self.expectations
            ],
        }


def _as_number(value: Union[int, float, str]) -> Fraction:
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def evaluate_expectation(expectation: Expectation, log: EventLog, rows: List[SnapshotRow]) -> ExpectationResult:
    compare = OPERATORS[expectation.op]
    if expectation.count is not None:
        c = expectation.count
        actual: Any = log.count(c.kind, c.actor, **c.payload)
        try:
            passed = compare(actual, _as_number(expectation.value))
        except (ValueError, ZeroDivisionError):
            passed = False
        return ExpectationResult(expectation.name, passed, actual, expectation.op, expectation.value)

    s = expectation.snapshot
    assert s is not None
    row: Optional[SnapshotRow] = next((r for r in rows if r.server == s.server), None)
    if row is None:
        return ExpectationResult(expectation.name, False, "missing", expectation.op, expectation.value)
    value = row.field(s.field)
    if s.field == "authority":
        passed = compare(str(value), str(expectation.value))
        return ExpectationResult(expectation.name, passed, str(value), expectation.op, expectation.value)
    try:
        passed = compare(Fraction(value), _as_number(expectation.value))
    except (ValueError, ZeroDivisionError):
        passed = False
    shown = str(value) if s.field == "T" else format_decimal(Fraction(value))
    return ExpectationResult(expectation.name, passed, shown, expectation.op, expectation.value)


def flagged_events(log: EventLog) -> List[Dict[str, Any]]:
    flagged = []
    for event in log:
        if event.kind in FLAGGED_KINDS or (
            event.kind == "feedback.outcome" and event.payload.get("status") in FLAGGED_STATUSES
        ):
            flagged.append({"tick": event.tick, "seq": event.seq, "actor": event.actor, "kind": event.kind,
                            "payload": event.payload})
    return flagged


def build_report(scenario: str, log: EventLog, expectations: Iterable[Expectation] = ()) -> RunReport:
    rows = snapshot_from_events(log)
    return RunReport(
        scenario=scenario,
        snapshot=rows,
        event_counts=log.kinds(),
        flagged=flagged_events(log),
        expectations=[evaluate_expectation(e, log, rows) for e in expectations],
    )
