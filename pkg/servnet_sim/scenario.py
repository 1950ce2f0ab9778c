"""
Scenario scripts

A scenario is a JSON document validated by the pydantic models below; the
field-by-field schema is documented in docs/SCHEMA.md. Rationals (the
authority factor, acceptance thresholds, seeded accumulators) are written
as integers or "p/q" strings and held as exact Fractions.

Usage:
  script = load_scenario("data/scenarios/honest_pair.json")
  script = script.model_copy(update={"seed": 7})
"""

import json
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PlainSerializer, ValidationError, model_validator

from reputation_core import WeightMode
from servnet_protocol import DB_SERVER_ID


class ScenarioValidationError(ValueError):
    """A scenario that cannot be built. problems lists every offending entry."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


def _to_fraction(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValueError("expected a number or a 'p/q' string")
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, (int, str)):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"not a rational number: {value!r}") from None
    raise ValueError("expected a number or a 'p/q' string")


Rational = Annotated[Fraction, BeforeValidator(_to_fraction), PlainSerializer(str, return_type=str)]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, arbitrary_types_allowed=True)


class Honesty(str, Enum):
    HONEST = "HONEST"
    FAIL_CONTRACTS = "FAIL_CONTRACTS"
    DROP_FEEDBACK = "DROP_FEEDBACK"
    FALSE_SCORER = "FALSE_SCORER"


class NodePolicy(_Model):
    honesty: Honesty = Honesty.HONEST
    accept_threshold: Rational = Fraction(0)
    capacity: int = Field(default=1_000_000_000, ge=0)
    probation: int = Field(default=0, ge=0)
    keeps_shares: Optional[bool] = None
    counter_share_size: Optional[int] = Field(default=None, gt=0)
    counter_duration: Optional[int] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _non_negative_threshold(self) -> "NodePolicy":
        if self.accept_threshold < 0:
            raise ValueError("accept_threshold must be non-negative")
        return self

    @property
    def stores_reliably(self) -> bool:
        """Whether shares held by this node are still retrievable at expiry."""
        if self.keeps_shares is not None:
            return self.keeps_shares
        return self.honesty is not Honesty.FAIL_CONTRACTS


class NodeSpec(_Model):
    id: str = Field(min_length=1)
    policy: NodePolicy = NodePolicy()
    role: Literal["authority", "leaf", "auto"] = "auto"
    authority: Optional[str] = None
    joins_later: bool = False


class TradeEntry(_Model):
    tick: int = Field(ge=0)
    initiator: str
    responder: str
    share_size: int = Field(gt=0)
    duration: int = Field(gt=0)


class JoinEntry(_Model):
    tick: int = Field(ge=0)
    node: str
    authority: str


class DepartureEntry(_Model):
    tick: int = Field(ge=0)
    node: str


class LedgerSeed(_Model):
    node: str
    T: int = Field(ge=0)
    POS: Rational = Fraction(0)
    NEG: Rational = Fraction(0)

    @model_validator(mode="after")
    def _non_negative(self) -> "LedgerSeed":
        if self.POS < 0 or self.NEG < 0:
            raise ValueError("POS and NEG must be non-negative")
        return self


class CaptureRef(_Model):
    """Selects a previously transmitted message: the index-th of its kind on a link."""

    message: str
    src: str
    dst: str
    index: int = Field(default=0, ge=0)


class AdversaryAction(_Model):
    kind: Literal["impersonate", "mitm_tamper", "replay", "fake_authority_msg"]
    at_tick: int = Field(ge=0)
    # impersonate
    victim: Optional[str] = None
    target: Optional[str] = None
    protocol: Literal["contract", "feedback"] = "contract"
    share_size: int = Field(default=64, gt=0)
    duration: int = Field(default=10, gt=0)
    score: int = -1
    window: int = Field(default=30, gt=0)
    # mitm_tamper
    link: Optional[List[str]] = None
    message: Optional[str] = None
    field: Optional[str] = None
    value: Any = None
    # replay
    capture: Optional[CaptureRef] = None
    substitute: bool = False
    # fake_authority_msg
    variant: Literal["notice", "change_request"] = "notice"
    claim_new: Optional[str] = None
    claim_old: Optional[str] = None
    # scripted key possession; only the adversary's own keys are allowed
    with_key_of: Optional[str] = None

    @model_validator(mode="after")
    def _required_fields(self) -> "AdversaryAction":
        needed = {
            "impersonate": ("victim", "target"),
            "mitm_tamper": ("link", "message", "field"),
            "replay": ("capture",),
            "fake_authority_msg": ("claim_new", "claim_old"),
        }[self.kind]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} requires {', '.join(missing)}")
        if self.link is not None and len(self.link) != 2:
            raise ValueError("link must be [src, dst]")
        if self.score not in (1, -1):
            raise ValueError("score must be +1 or -1")
        return self


class Controls(_Model):
    nonce_cache: bool = True
    transcript_check: bool = True


class CountExpectation(_Model):
    kind: str
    actor: Optional[str] = None
    payload: Dict[str, Any] = Field(default_factory=dict)


class SnapshotExpectation(_Model):
    server: str
    field: Literal["T", "POS", "NEG", "GR", "authority"]


class Expectation(_Model):
    name: str
    count: Optional[CountExpectation] = None
    snapshot: Optional[SnapshotExpectation] = None
    op: Literal["==", "!=", ">=", "<=", ">", "<"] = "=="
    value: Union[int, float, str]

    @model_validator(mode="after")
    def _one_subject(self) -> "Expectation":
        if (self.count is None) == (self.snapshot is None):
            raise ValueError("expectation needs exactly one of count / snapshot")
        return self


class LinkDelay(_Model):
    src: str
    dst: str
    delay: int = Field(ge=1)


class ScenarioScript(_Model):
    name: str = "scenario"
    seed: int = Field(default=0, ge=0, lt=2**64)
    nodes: List[NodeSpec] = Field(min_length=1)
    authority_count: int = Field(default=1, ge=1)
    trade_schedule: List[TradeEntry] = Field(default_factory=list)
    joins: List[JoinEntry] = Field(default_factory=list)
    departures: List[DepartureEntry] = Field(default_factory=list)
    seed_ledgers: List[LedgerSeed] = Field(default_factory=list)
    adversaries: List[AdversaryAction] = Field(default_factory=list)
    adversary_id: str = "MALLORY"
    election_period: int = Field(default=100, ge=1)
    authority_factor: Rational = Fraction(1, 2)
    weight_mode: WeightMode = WeightMode.REPUTATION_WEIGHTED
    feedback_timeout: int = Field(default=10, ge=1)
    query_timeout: int = Field(default=10, ge=1)
    link_delay: int = Field(default=1, ge=1)
    link_delays: List[LinkDelay] = Field(default_factory=list)
    duration: int = Field(default=200, ge=0)
    security_backend: Literal["model", "crypto"] = "model"
    cheater_penalty: Rational = Fraction(0)
    controls: Controls = Controls()
    expectations: List[Expectation] = Field(default_factory=list)

    @model_validator(mode="after")
    def _references(self) -> "ScenarioScript":
        problems = script_problems(self)
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def node(self, node_id: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.id == node_id:
                return spec
        raise ValueError(f"Node {node_id} not found")

    @property
    def initial_roster(self) -> List[NodeSpec]:
        return [n for n in self.nodes if not n.joins_later]


def script_problems(script: ScenarioScript) -> List[str]:
    """Cross-field checks pydantic cannot express per field."""
    problems: List[str] = []
    ids = [n.id for n in script.nodes]
    declared = set(ids)
    for node_id in sorted({i for i in ids if ids.count(i) > 1}):
        problems.append(f"nodes: duplicate id {node_id}")
    for reserved in (DB_SERVER_ID, script.adversary_id):
        if reserved in declared:
            problems.append(f"nodes: id {reserved} is reserved")

    def need(where: str, node_id: Optional[str]) -> None:
        if node_id is not None and node_id not in declared:
            problems.append(f"{where}: undeclared node {node_id}")

    roster = [n for n in script.nodes if not n.joins_later]
    if not roster:
        problems.append("nodes: the initial roster is empty")
    fixed_authorities = [n for n in roster if n.role == "authority"]
    eligible = [n for n in roster if n.role != "leaf"]
    if script.authority_count > len(eligible):
        problems.append(f"authority_count: {script.authority_count} exceeds the {len(eligible)} eligible nodes")
    if len(fixed_authorities) > script.authority_count:
        problems.append(f"authority_count: {len(fixed_authorities)} nodes are declared authority")
    for i, spec in enumerate(script.nodes):
        if spec.authority is not None:
            need(f"nodes[{i}].authority", spec.authority)
            if spec.role == "authority" and spec.authority != spec.id:
                problems.append(f"nodes[{i}]: an authority is its own authority of record")
    joining = {j.node for j in script.joins}
    for spec in script.nodes:
        if spec.joins_later and spec.id not in joining:
            problems.append(f"nodes: {spec.id} joins later but has no join entry")
    for i, trade in enumerate(script.trade_schedule):
        need(f"trade_schedule[{i}].initiator", trade.initiator)
        need(f"trade_schedule[{i}].responder", trade.responder)
        if trade.initiator == trade.responder:
            problems.append(f"trade_schedule[{i}]: a node cannot trade with itself")
    for i, join in enumerate(script.joins):
        need(f"joins[{i}].node", join.node)
        need(f"joins[{i}].authority", join.authority)
    for i, departure in enumerate(script.departures):
        need(f"departures[{i}].node", departure.node)
    late = {n.id for n in script.nodes if n.joins_later}
    for i, seed in enumerate(script.seed_ledgers):
        need(f"seed_ledgers[{i}].node", seed.node)
        if seed.node in late:
            problems.append(f"seed_ledgers[{i}]: {seed.node} is not in the initial roster")
    for i, action in enumerate(script.adversaries):
        for attr in ("victim", "target", "claim_old"):
            need(f"adversaries[{i}].{attr}", getattr(action, attr))
        for end in action.link or []:
            need(f"adversaries[{i}].link", end)
        if action.capture is not None:
            for end in (action.capture.src, action.capture.dst):
                if end != DB_SERVER_ID:
                    need(f"adversaries[{i}].capture", end)
    for i, delay in enumerate(script.link_delays):
        for end in (delay.src, delay.dst):
            if end != DB_SERVER_ID:
                need(f"link_delays[{i}]", end)
    if script.cheater_penalty < 0:
        problems.append("cheater_penalty: must be non-negative")
    if script.authority_factor < 0:
        problems.append("authority_factor: must be non-negative")
    return problems


def _format_error(error: Dict[str, Any]) -> List[str]:
    location = ".".join(str(part) for part in error.get("loc", ()))
    message = error.get("msg", "invalid")
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]
    if not location:
        # cross-field problems arrive joined, each already naming its entry
        return message.split("; ")
    return [f"{location}: {message}"]


def parse_scenario(data: Any) -> ScenarioScript:
    """Validate a decoded JSON document.

    Raises:
        ScenarioValidationError: with one problem per offending field
    """
    try:
        return ScenarioScript.model_validate(data)
    except ValidationError as e:
        raise ScenarioValidationError([p for err in e.errors() for p in _format_error(err)]) from None


def load_scenario(path: Union[str, Path]) -> ScenarioScript:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioValidationError([f"{path}: {e.strerror}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioValidationError([f"{path}: line {e.lineno} column {e.colno}: {e.msg}"]) from None
    return parse_scenario(data)
