"""
Reputation snapshots.

A snapshot can be taken two ways: from the live DB at the end of a run,
or by replaying the ledger-changing events of a log. Both give the same
rows for the same run, which is what lets a saved log stand on its own.
"""

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from reputation_core import (
    ScoreLedger,
    WeightMode,
    apply_feedback,
    format_decimal,
    new_ledger,
    record_transaction,
    reset_ledger,
)
from servnet_protocol import FeedbackStatus

from servnet_sim.events import Event
from servnet_sim.scenario import NodeSpec, ScenarioScript, TradeEntry

if TYPE_CHECKING:
    from servnet_sim.engine import Sim

CSV_HEADER = ("server", "T", "POS", "NEG", "GR", "authority")


@dataclass(frozen=True)
class SnapshotRow:
    server: str
    T: int
    POS: Fraction
    NEG: Fraction
    GR: Fraction
    authority: str

    @classmethod
    def from_ledger(cls, ledger: ScoreLedger, authority: str) -> "SnapshotRow":
        return cls(ledger.owner, ledger.transactions, ledger.pos_accum, ledger.neg_accum, ledger.reputation, authority)

    def field(self, name: str) -> Union[int, Fraction, str]:
        return getattr(self, name)

    def csv_row(self) -> List[str]:
        return [
            self.server,
            str(self.T),
            format_decimal(self.POS),
            format_decimal(self.NEG),
            format_decimal(self.GR),
            self.authority,
        ]


def snapshot_reputations(sim: "Sim") -> List[SnapshotRow]:
    """One row per server the DB knows, sorted by server id. Revoked servers show authority ''."""
    rows = []
    for record in sim.db.records():
        rows.append(SnapshotRow.from_ledger(record.ledger, record.authority if record.active else ""))
    return sorted(rows, key=lambda r: r.server)


def snapshot_csv(rows: Iterable[SnapshotRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_row())
    return buffer.getvalue()


def write_snapshot_csv(rows: Iterable[SnapshotRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = path.with_suffix(path.suffix + ".tmp")
    temp_file.write_text(snapshot_csv(rows), encoding="utf-8")
    temp_file.replace(path)
    return path


def replay_ledgers(events: Iterable[Event]) -> Dict[str, Tuple[ScoreLedger, str]]:
    """Rebuild every ledger and authority of record from a log alone."""
    state: Dict[str, Tuple[ScoreLedger, str]] = {}

    def ledger_of(node: str) -> ScoreLedger:
        return state[node][0] if node in state else new_ledger(node)

    def authority_of(node: str) -> str:
        return state[node][1] if node in state else ""

    for event in events:
        p = event.payload
        if event.kind == "ledger.created":
            state[p["node"]] = (new_ledger(p["node"]), p.get("authority", ""))
        elif event.kind == "ledger.seeded":
            node = p["node"]
            state[node] = (ScoreLedger(node, p["T"], Fraction(p["POS"]), Fraction(p["NEG"])), authority_of(node))
        elif event.kind == "record.authority":
            state[p["node"]] = (ledger_of(p["node"]), p["authority"])
        elif event.kind == "ledger.reset":
            node = p["node"]
            state[node] = (reset_ledger(ledger_of(node)), "")
        elif event.kind == "ledger.penalty":
            node = p["node"]
            ledger = apply_feedback(ledger_of(node), -1, Fraction(p["weight"]), WeightMode.REPUTATION_WEIGHTED)
            state[node] = (ledger, authority_of(node))
        elif event.kind == "feedback.outcome":
            status = p["status"]
            target = p.get("target")
            if target is None:
                continue
            if status in (FeedbackStatus.ACCEPTED.value, FeedbackStatus.RECEIVER_DROPPED_RECOVERED.value):
                ledger = apply_feedback(ledger_of(target), p["score"], Fraction(p["scorer_gr"]), WeightMode(p["mode"]))
                state[target] = (ledger, authority_of(target))
            elif status == FeedbackStatus.GIVER_CHEATING_FLAGGED.value:
                state[target] = (record_transaction(ledger_of(target)), authority_of(target))
    return state


def snapshot_from_events(events: Iterable[Event]) -> List[SnapshotRow]:
    state = replay_ledgers(events)
    return [SnapshotRow.from_ledger(ledger, authority) for _, (ledger, authority) in sorted(state.items())]


def check_directory_convergence(sim: "Sim") -> Tuple[bool, Dict[str, Dict[str, Optional[str]]]]:
    """Compare every authority's directory with the DB's records.

    Returns (converged, diff) where diff maps each disagreeing authority
    to {node: what it believes} for the nodes it gets wrong.
    """
    truth = {r.node: r.authority for r in sim.db.records() if r.active}
    diff: Dict[str, Dict[str, Optional[str]]] = {}
    for authority_id in sim.authority_ids():
        directory = sim.nodes[authority_id].directory
        believed = directory.as_mapping() if directory is not None else {}
        wrong = {n: believed.get(n) for n in sorted(set(truth) | set(believed)) if believed.get(n) != truth.get(n)}
        if wrong:
            diff[authority_id] = wrong
    return not diff, diff


def random_scenario(
    seed: int,
    nodes: int = 6,
    authorities: int = 2,
    trades: int = 20,
    duration: int = 200,
    weight_mode: WeightMode = WeightMode.REPUTATION_WEIGHTED,
) -> ScenarioScript:
    """An honest scenario with a random trade schedule, for property tests."""
    if nodes < 2 or authorities < 1 or authorities > nodes:
        raise ValueError(f"Cannot build {nodes} nodes with {authorities} authorities")
    rng = np.random.default_rng(seed)
    ids = [f"S{i + 1}" for i in range(nodes)]
    specs = [NodeSpec(id=i) for i in ids]
    schedule = []
    last_trade = max(1, duration // 2)
    for _ in range(trades):
        a, b = rng.choice(nodes, size=2, replace=False)
        schedule.append(
            TradeEntry(
                tick=int(rng.integers(1, last_trade + 1)),
                initiator=ids[int(a)],
                responder=ids[int(b)],
                share_size=int(rng.integers(1, 129)),
                duration=int(rng.integers(5, 30)),
            )
        )
    schedule.sort(key=lambda t: t.tick)
    return ScenarioScript(
        name=f"random-{seed}",
        seed=seed,
        nodes=specs,
        authority_count=authorities,
        trade_schedule=schedule,
        duration=duration,
        weight_mode=weight_mode,
    )
