"""
Protocol layer: directory, DB server, contract state machine, feedback,
registration, elections, authority change and revocation.
"""
from dataclasses import replace
from fractions import Fraction

import pytest

from message_security import Nonce, TransactionId, UnsealError
from reputation_core import LocalScore, ScoreLedger, WeightMode, new_ledger
from servnet_protocol import (
    AbortReason,
    AuthorityDirectory,
    ContractContext,
    DbAccessError,
    DbClient,
    DbServer,
    ElectionDecision,
    FeedbackError,
    FeedbackInbox,
    FeedbackPath,
    FeedbackSlot,
    FeedbackStatus,
    ProtocolError,
    SendHash,
    SessionRole,
    SessionState,
    StartContract,
    Timeout,
    TradeParams,
    contract_advance,
    elect_authority,
    make_feedback,
    new_session,
    process_feedback,
    registration_round,
    revoke_server,
    rotate_authority_key,
    validate_feedback,
)
from servnet_protocol.authority import accept_notice, begin_rotation, best_leaf, confirm_rotation
from servnet_protocol.feedback import sign_feedback
from servnet_protocol.messages import (
    AuthorityChangeConfirm,
    FeedbackCopy,
    ReputationAttestation,
    TranscriptHash,
)
from servnet_protocol.revocation import ShareRecord, apply_revocation_notice

TXN = TransactionId(Nonce(1), Nonce(2))


# -- directory ------------------------------------------------------------------


def test_directory_add_get_remove():
    directory = AuthorityDirectory("A1")
    directory.add_node("S2", "A1", "pk-2")
    assert directory.node_exists("S2")
    assert directory.get_authority("S2") == "A1"
    assert directory.get_public_key("S2") == "pk-2"
    with pytest.raises(ValueError, match="already exists"):
        directory.add_node("S2", "A1", "pk-2")
    directory.remove_node("S2")
    assert not directory.node_exists("S2")
    with pytest.raises(ValueError, match="not found"):
        directory.remove_node("S2")


def test_directory_reassign_subtree():
    directory = AuthorityDirectory("A1", [("S1", "A1", "pk-1"), ("S2", "A1", "pk-2"), ("S3", "A2", "pk-3")])
    assert directory.reassign_subtree("A1", "S2") == ["S1", "S2"]
    assert directory.as_mapping() == {"S1": "S2", "S2": "S2", "S3": "A2"}
    assert directory.subtree("S2") == ["S1", "S2"]
    assert len(directory) == 3


# -- DB server ------------------------------------------------------------------


@pytest.fixture
def db(backend):
    return DbServer(backend, backend.keygen(100, "DB"))


@pytest.fixture
def client(db, backend):
    return DbClient(db, backend, "A1", db.issue_subtree_key("A1"))


def test_db_create_read_write(client):
    record = client.create("S3", "pk-3")
    assert record.authority == "A1"
    assert record.ledger == new_ledger("S3")
    client.write("S3", ScoreLedger("S3", 2, Fraction(3, 2), Fraction(0)))
    assert client.read("S3").ledger == ScoreLedger("S3", 2, Fraction(3, 2), Fraction(0))
    assert [r.node for r in client.subtree()] == ["S3"]


def test_db_create_twice_refused(client):
    client.create("S3", "pk-3")
    with pytest.raises(DbAccessError, match="already exists"):
        client.create("S3", "pk-3")


def test_db_refuses_records_outside_the_subtree(db, backend, client):
    client.create("S3", "pk-3")
    other = DbClient(db, backend, "A2", db.issue_subtree_key("A2"))
    with pytest.raises(DbAccessError):
        other.read("S3")
    assert other.subtree() == []


def test_db_refuses_unknown_key(db, backend, client):
    client.create("S3", "pk-3")
    intruder = DbClient(db, backend, "A1", backend.new_symmetric_key("guess"))
    with pytest.raises(UnsealError):
        intruder.read("S3")
    assert db.access_log[-1].ok is False


def test_db_revoke_resets_and_deactivates(db, client):
    client.create("S3", "pk-3")
    client.write("S3", ScoreLedger("S3", 5, Fraction(5), Fraction(0)))
    revoked = client.revoke("S3")
    assert revoked.ledger == new_ledger("S3")
    assert not db.record("S3").active
    with pytest.raises(DbAccessError, match="not found"):
        client.read("S3")


def test_db_retired_key_is_locked_out(client):
    client.create("S3", "pk-3")
    client.retire()
    with pytest.raises(UnsealError):
        client.read("S3")


# -- contract -------------------------------------------------------------------


class ContractRig:
    """Two contract parties under one authority A1, driven by hand."""

    def __init__(self, backend, nonces, decide_a=None, decide_b=None, transcript_check=True):
        self.backend = backend
        self.keys = {
            "S1": backend.keygen(1, "S1"),
            "S2": backend.keygen(2, "S2"),
            "A1": backend.keygen(3, "A1"),
        }
        roster = {"A1": self.keys["A1"].public}

        def context(node, decide):
            return ContractContext(
                node=node,
                backend=backend,
                key=self.keys[node].private,
                authority="A1",
                fresh_nonce=lambda: nonces.fresh_nonce(node),
                authorities=roster,
                decide=decide or (lambda *args: True),
                transcript_check=transcript_check,
            )

        self.ctx_a = context("S1", decide_a)
        self.ctx_b = context("S2", decide_b)
        self.a = new_session("c1", SessionRole.INITIATOR, "S1", "S2")
        self.b = new_session("c1", SessionRole.RESPONDER, "S2", "S1")

    def attest(self, subject, query_nonce, signer="A1", gr=Fraction(1)):
        unsigned = ReputationAttestation.unsigned("A1", subject, gr, 1, self.keys[subject].public, query_nonce)
        signature = self.backend.sign(unsigned.signed_part(), self.keys[signer].private, actor=signer)
        return replace(unsigned, signature=signature)

    def step_a(self, incoming):
        self.a, out = contract_advance(self.a, incoming, self.ctx_a)
        return out

    def step_b(self, incoming):
        self.b, out = contract_advance(self.b, incoming, self.ctx_b)
        return out

    def up_to_ack(self, tamper_msg1=None):
        """Messages 1 to 9b. Returns message 1 as the initiator sent it."""
        msg1 = self.step_a(StartContract(TradeParams(100, 20)))[0].message
        delivered = tamper_msg1(msg1) if tamper_msg1 else msg1
        self.step_b(delivered)
        counter = self.step_b(self.attest("S1", self.b.query_nonce))[0].message
        self.step_a(counter)
        ack = self.step_a(self.attest("S2", self.a.query_nonce))[0].message
        self.step_b(ack)
        return msg1


@pytest.fixture
def rig(backend, nonces):
    return ContractRig(backend, nonces)


def test_honest_contract_binds(rig):
    rig.up_to_ack()
    assert rig.a.state is SessionState.SENT_9
    assert rig.b.state is SessionState.AWAIT_HASH
    msg10 = rig.step_a(SendHash())[0].message
    msg11 = rig.step_b(msg10)[0].message
    rig.step_a(msg11)
    assert rig.a.bound and rig.b.bound
    assert rig.a.txn_id == rig.b.txn_id
    assert rig.b.peer_reputation == 1


def test_query_goes_to_own_authority(rig):
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    out = rig.step_b(msg1)
    assert [e.dst for e in out] == ["A1"]
    assert rig.b.state is SessionState.AWAIT_REP


def test_responder_rejects(backend, nonces):
    rig = ContractRig(backend, nonces, decide_b=lambda *args: False)
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    rig.step_b(msg1)
    reject = rig.step_b(rig.attest("S1", rig.b.query_nonce))[0].message
    assert rig.b.state is SessionState.REJECTED
    assert reject.nonce == msg1.nonce.succ()
    rig.step_a(reject)
    assert rig.a.state is SessionState.REJECTED


def test_initiator_rejects(backend, nonces):
    rig = ContractRig(backend, nonces, decide_a=lambda *args: False)
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    rig.step_b(msg1)
    counter = rig.step_b(rig.attest("S1", rig.b.query_nonce))[0].message
    rig.step_a(counter)
    reject = rig.step_a(rig.attest("S2", rig.a.query_nonce))[0].message
    assert rig.a.state is SessionState.REJECTED
    rig.step_b(reject)
    assert rig.b.state is SessionState.REJECTED


def test_replayed_request_is_stale(rig):
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    rig.step_b(msg1)
    second = new_session("c2", SessionRole.RESPONDER, "S2", "S1")
    second, out = contract_advance(second, msg1, rig.ctx_b)
    assert out == []
    assert second.abort_reason is AbortReason.STALE_OR_REPLAY


def test_attestation_for_another_query_is_stale(rig):
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    rig.step_b(msg1)
    rig.step_b(rig.attest("S1", Nonce(rig.b.query_nonce.value + 7)))
    assert rig.b.abort_reason is AbortReason.STALE_OR_REPLAY


def test_attestation_not_signed_by_authority(rig):
    msg1 = rig.step_a(StartContract(TradeParams(100, 20)))[0].message
    rig.step_b(msg1)
    rig.step_b(rig.attest("S1", rig.b.query_nonce, signer="S2"))
    assert rig.b.abort_reason is AbortReason.BAD_AUTHORITY_ATTESTATION


def test_illegal_message_aborts(rig):
    stray = TranscriptHash("S1", 10, b"\x00" * 32, rig.backend.sign(b"x", rig.keys["S1"].private, actor="S1"))
    rig.step_b(stray)
    assert rig.b.state is SessionState.ABORTED
    assert rig.b.abort_reason is AbortReason.PROTOCOL_VIOLATION


def test_terminal_session_ignores_input(rig):
    rig.step_b(TranscriptHash("S1", 10, b"", rig.backend.sign(b"x", rig.keys["S1"].private, actor="S1")))
    before = rig.b
    assert rig.step_b(SendHash()) == []
    assert rig.b == before


def test_timeout_only_fires_for_its_step(rig):
    rig.step_a(StartContract(TradeParams(100, 20)))
    assert rig.step_a(Timeout(rig.a.steps - 1)) == []
    assert rig.a.state is SessionState.SENT_1
    rig.step_a(Timeout(rig.a.steps))
    assert rig.a.abort_reason is AbortReason.TIMEOUT


def test_tampered_request_breaks_both_transcripts(rig):
    rig.up_to_ack(tamper_msg1=lambda m: replace(m, share_size=4096))
    msg10 = rig.step_a(SendHash())[0].message
    msg11 = rig.step_b(msg10)[0].message
    assert rig.b.abort_reason is AbortReason.TRANSCRIPT_MISMATCH
    rig.step_a(msg11)
    assert rig.a.abort_reason is AbortReason.TRANSCRIPT_MISMATCH


def test_tampered_request_binds_without_transcript_check(backend, nonces):
    rig = ContractRig(backend, nonces, transcript_check=False)
    rig.up_to_ack(tamper_msg1=lambda m: replace(m, share_size=4096))
    msg10 = rig.step_a(SendHash())[0].message
    rig.step_a(rig.step_b(msg10)[0].message)
    assert rig.a.bound and rig.b.bound


def test_hash_signed_by_someone_else_is_forged(rig):
    rig.up_to_ack()
    msg10 = rig.step_a(SendHash())[0].message
    forged = replace(msg10, signature=rig.backend.sign(msg10.transcript_hash, rig.keys["A1"].private, actor="A1"))
    rig.step_b(forged)
    assert rig.b.abort_reason is AbortReason.FORGED_BINDING


# -- feedback -------------------------------------------------------------------


def _slot(direct=None, forwarded=None):
    return FeedbackSlot(TXN, "S1", "S2", first_arrival=0, direct=direct, forwarded=forwarded)


def test_matching_copies_are_accepted(backend):
    key = backend.keygen(1, "S1")
    msg = sign_feedback("S1", TXN, 1, backend, key.private)
    outcome, ledger = process_feedback(_slot(msg, msg), new_ledger("S2"), Fraction(10), WeightMode.REPUTATION_WEIGHTED)
    assert outcome.status is FeedbackStatus.ACCEPTED
    assert ledger == ScoreLedger("S2", 1, Fraction(10), Fraction(0))


def test_conflicting_copies_flag_the_scorer(backend):
    key = backend.keygen(1, "S1")
    good = sign_feedback("S1", TXN, 1, backend, key.private)
    bad = sign_feedback("S1", TXN, -1, backend, key.private)
    slot = _slot(direct=bad, forwarded=good)
    outcome, ledger = process_feedback(slot, new_ledger("S2"), Fraction(10))
    assert outcome.status is FeedbackStatus.GIVER_CHEATING_FLAGGED
    assert ledger == ScoreLedger("S2", 1, Fraction(0), Fraction(0))
    again, _ = process_feedback(slot, ledger, Fraction(10))
    assert again.status is FeedbackStatus.DUPLICATE_IGNORED


def test_dropped_forward_recovers_from_direct_copy(backend):
    key = backend.keygen(1, "S1")
    msg = sign_feedback("S1", TXN, -1, backend, key.private)
    slot = _slot(direct=msg)
    assert process_feedback(slot, new_ledger("S2"), Fraction(1), WeightMode.UNIT) == (None, new_ledger("S2"))
    outcome, ledger = process_feedback(slot, new_ledger("S2"), Fraction(1), WeightMode.UNIT, timed_out=True)
    assert outcome.status is FeedbackStatus.RECEIVER_DROPPED_RECOVERED
    assert outcome.score == LocalScore.NEGATIVE
    assert ledger.neg_accum == 1


def test_forwarded_copy_alone_accepted_after_wait(backend):
    key = backend.keygen(1, "S1")
    msg = sign_feedback("S1", TXN, 1, backend, key.private)
    outcome, _ = process_feedback(_slot(forwarded=msg), new_ledger("S2"), Fraction(1), timed_out=True)
    assert outcome.status is FeedbackStatus.ACCEPTED


def test_inbox_hands_over_only_undecided_slots(backend):
    key = backend.keygen(1, "S1")
    waiting = sign_feedback("S1", TXN, -1, backend, key.private)
    settled = sign_feedback("S1", TransactionId(Nonce(3), Nonce(4)), 1, backend, key.private)
    inbox = FeedbackInbox("A1")
    inbox.receive(FeedbackCopy(FeedbackPath.DIRECT.value, "S2", waiting), tick=3)
    for path in (FeedbackPath.DIRECT, FeedbackPath.FORWARDED):
        slot, _ = inbox.receive(FeedbackCopy(path.value, "S2", settled), tick=3)
    process_feedback(slot, new_ledger("S2"), Fraction(1))

    pending, copies = inbox.hand_over()
    assert [s.txn_id for s in pending] == [TXN]
    assert copies == [FeedbackCopy(FeedbackPath.DIRECT.value, "S2", waiting)]
    assert inbox.pending() == [] and inbox.get(TXN, "S1") is None
    assert inbox.get(settled.txn_id, "S1").decided


def test_feedback_needs_a_bound_contract(backend):
    key = backend.keygen(1, "S1")
    with pytest.raises(FeedbackError, match="not a bound contract"):
        make_feedback("S1", TXN, 1, target="S2", target_authority="A1", backend=backend, key=key.private, bound=())
    with pytest.raises(FeedbackError, match="already sent"):
        make_feedback("S1", TXN, 1, target="S2", target_authority="A1", backend=backend, key=key.private,
                      bound={TXN}, already_sent={TXN})


def test_feedback_copies_are_addressed_both_ways(backend):
    key = backend.keygen(1, "S1")
    envelopes = make_feedback("S1", TXN, 1, target="S2", target_authority="A1", backend=backend,
                              key=key.private, bound={TXN})
    assert [(e.dst, e.message.path) for e in envelopes] == [
        ("S2", FeedbackPath.TO_TARGET.value),
        ("A1", FeedbackPath.DIRECT.value),
    ]
    assert envelopes[0].message.feedback == envelopes[1].message.feedback


def test_validate_feedback_signature(backend):
    key = backend.keygen(1, "S1")
    other = backend.keygen(2, "S2")
    copy = FeedbackCopy(FeedbackPath.DIRECT.value, "S2", sign_feedback("S1", TXN, 1, backend, key.private))
    assert validate_feedback(copy, backend, key.public) is None
    assert validate_feedback(copy, backend, other.public) == "bad-signature"
    assert validate_feedback(copy, backend, None) == "unknown-scorer"


# -- registration ---------------------------------------------------------------


def test_registration_floods_every_authority(backend, nonces):
    directories = {"A1": AuthorityDirectory("A1"), "A2": AuthorityDirectory("A2")}
    authority_keys = {"A1": backend.keygen(3, "A1"), "A2": backend.keygen(4, "A2")}
    newcomer = backend.keygen(9, "S9")
    result = registration_round("S9", "A1", backend=backend, keypair=newcomer, nonce=nonces.fresh_nonce("S9"),
                                directories=directories, authority_keys=authority_keys)
    assert result.accepted
    assert result.ledger == new_ledger("S9")
    assert directories["A2"].get_authority("S9") == "A1"
    assert directories["A1"].get_public_key("S9") == newcomer.public

    again = registration_round("S9", "A2", backend=backend, keypair=newcomer, nonce=nonces.fresh_nonce("S9"),
                               directories=directories, authority_keys=authority_keys)
    assert not again.accepted
    assert "already exists" in again.detail


def test_registration_with_unknown_authority(backend, nonces):
    result = registration_round("S9", "A7", backend=backend, keypair=backend.keygen(9, "S9"),
                                nonce=nonces.fresh_nonce("S9"), directories={}, authority_keys={})
    assert not result.accepted


# -- elections ------------------------------------------------------------------


def test_election_examples():
    assert elect_authority({"A": Fraction(18), "L": Fraction(10)}, "A").decision is ElectionDecision.CHANGE
    assert elect_authority({"A": Fraction(18), "L": Fraction(8)}, "A").decision is ElectionDecision.KEEP
    assert elect_authority({"A": Fraction(18), "L": Fraction(9)}, "A").decision is ElectionDecision.KEEP
    equal = elect_authority({"A": Fraction(5), "L": Fraction(5)}, "A", Fraction(1))
    assert equal.decision is ElectionDecision.KEEP
    assert equal.successor == "A"


def test_election_without_leaves_keeps():
    result = elect_authority({"A": Fraction(0)}, "A")
    assert result.decision is ElectionDecision.KEEP
    assert result.contender is None


def test_best_leaf_breaks_ties_by_name():
    assert best_leaf({"A": Fraction(1), "S3": Fraction(4), "S2": Fraction(4), "S1": Fraction(2)}, "A") == "S2"


# -- authority change -----------------------------------------------------------


@pytest.fixture
def subtree(db, backend, client):
    new = backend.keygen(2, "S2")
    client.create("S2", new.public)
    client.create("S3", "pk-3")
    return new


def test_rotation_commits(db, backend, nonces, client, subtree):
    run = rotate_authority_key("A1", "S2", db, old_key=client.key, new_keypair=subtree, backend=backend,
                               fresh_nonce=nonces.fresh_nonce)
    assert run.outcome.committed
    assert run.leaves == ("S2", "S3")
    assert db.record("S3").authority == "S2"
    assert accept_notice(run.notice, backend, db.public_key)
    with pytest.raises(UnsealError):
        client.read("S3")
    assert DbClient(db, backend, "S2", run.subtree_key).read("S3").authority == "S2"


def test_rotation_rolls_back_on_wrong_nonce(db, backend, nonces, client, subtree):
    request = begin_rotation("A1", "S2", client.key, backend, nonces.fresh_nonce("A1"))
    grant = db.handle_change_request(
        request, lambda n: subtree.public if n == "S2" else None, lambda: nonces.fresh_nonce("DB")
    )
    _, key = confirm_rotation(grant, new="S2", keypair=subtree, backend=backend, db_key=db.public_key)
    wrong = AuthorityChangeConfirm(authority="S2", box=backend.seal(AuthorityChangeConfirm.sealed_part(Nonce(1)), key))
    outcome = db.handle_change_confirm(wrong)
    assert not outcome.committed
    assert db.record("S3").authority == "A1"
    assert client.read("S3").authority == "A1"


def test_change_request_with_wrong_key_is_refused(db, backend, nonces, client, subtree):
    request = begin_rotation("A1", "S2", backend.new_symmetric_key("forged"), backend, nonces.fresh_nonce("A1"))
    with pytest.raises(UnsealError):
        db.handle_change_request(request, lambda n: subtree.public, lambda: nonces.fresh_nonce("DB"))


def test_change_to_a_stranger_is_refused(db, backend, nonces, client, subtree):
    stranger = backend.keygen(7, "S7")
    request = begin_rotation("A1", "S7", client.key, backend, nonces.fresh_nonce("A1"))
    with pytest.raises(ProtocolError, match="not a leaf"):
        db.handle_change_request(request, lambda n: stranger.public, lambda: nonces.fresh_nonce("DB"))


# -- revocation -----------------------------------------------------------------


def test_revocation_settles_shares_and_floods(db, backend, nonces, client):
    authority = backend.keygen(3, "A1")
    client.create("S3", "pk-3")
    client.write("S3", ScoreLedger("S3", 4, Fraction(4), Fraction(0)))
    shares = [
        ShareRecord("S2", "S3", 100, 50, TXN, live=True),
        ShareRecord("S4", "S3", 10, 5, TransactionId(Nonce(3), Nonce(4)), live=False),
        ShareRecord("S3", "S2", 64, 50, TXN),
    ]
    result = revoke_server("S3", authority="A1", shares=shares, client=client, backend=backend,
                           keypair=authority, nonce=nonces.fresh_nonce("A1"), authorities=["A1", "A2"])
    assert [kind for kind, _ in result.events] == ["transfer.return", "transfer.residual", "ledger.reset"]
    assert result.ledger == new_ledger("S3")
    assert [e.dst for e in result.messages] == ["A1", "A2"]
    assert shares[0].settled and shares[1].settled and not shares[2].settled

    directory = AuthorityDirectory("A2", [("S3", "A1", "pk-3")])
    roster = {"A1": authority.public}
    assert apply_revocation_notice(result.notice, directory, backend, roster)
    assert not directory.node_exists("S3")
    assert not apply_revocation_notice(result.notice, directory, backend, roster)
