"""Locking-contract state machine: escrow released by key presentation.

Phases move along Incepted -> Cancelled, Incepted -> Locked,
Locked -> ClaimedByBuyer | ReclaimedBySeller.  Ids are burned forever once
used.  At claim time only the presented key's commitment matters, not who
submits it: funds always go to the address bound at incept/confirm, so a
stolen key cannot redirect them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

from .chainsim import CallEnv, Contract
from .errors import (
    ArgumentMismatch,
    DuplicateId,
    HashMismatch,
    InsufficientBalance,
    UnauthorizedCaller,
    WrongPhase,
    ZeroAmount,
)

INCEPTED = "Incepted"
CANCELLED = "Cancelled"
LOCKED = "Locked"
CLAIMED = "ClaimedByBuyer"
RECLAIMED = "ReclaimedBySeller"

EVENT_INCEPTED = "TransferIncepted"
EVENT_CONFIRMED = "TransferConfirmed"
EVENT_CLAIMED = "TokenClaimed"
EVENT_RECLAIMED = "TokenReclaimed"


@dataclass
class LockingTxRecord:
    id: int
    amount: int
    frm: str
    to: str
    hash_seller: str
    enc_seller: str
    hash_buyer: Optional[str] = None
    enc_buyer: Optional[str] = None
    phase: str = INCEPTED

    def state(self) -> dict:
        return {
            "id": self.id,
            "amount": self.amount,
            "from": self.frm,
            "to": self.to,
            "hash_seller": self.hash_seller,
            "enc_seller": self.enc_seller,
            "hash_buyer": self.hash_buyer,
            "enc_buyer": self.enc_buyer,
            "phase": self.phase,
        }

    def copy(self) -> "LockingTxRecord":
        return LockingTxRecord(
            self.id, self.amount, self.frm, self.to, self.hash_seller,
            self.enc_seller, self.hash_buyer, self.enc_buyer, self.phase,
        )


class LockingContract(Contract):
    def __init__(self, address: str, committer: Callable[[str], str]):
        super().__init__(address)
        self.committer = committer
        self.records: Dict[int, LockingTxRecord] = {}

    # buyer opens the transaction; caller becomes the receiving address
    def m_inceptTransfer(self, env: CallEnv, id, amount, frm, key_hashed_seller, key_encrypted_seller):
        if id in self.records:
            raise DuplicateId(f"id {id} already used")
        if amount <= 0:
            raise ZeroAmount("amount must be positive")
        record = LockingTxRecord(
            id=id, amount=amount, frm=frm, to=env.caller,
            hash_seller=key_hashed_seller, enc_seller=key_encrypted_seller,
        )
        self.records[id] = record
        env.emit(self.address, EVENT_INCEPTED, id, frm, record.to,
                 key_hashed_seller, key_encrypted_seller)

    def m_cancelTransfer(self, env: CallEnv, id, amount, frm, key_hashed_seller, key_encrypted_seller):
        record = self.records.get(id)
        if record is None or record.phase != INCEPTED:
            raise WrongPhase(f"id {id} is not in {INCEPTED}")
        if env.caller != record.to:
            raise UnauthorizedCaller("only the incepting buyer can cancel")
        if (amount, frm) != (record.amount, record.frm):
            raise ArgumentMismatch("cancel arguments do not match inception")
        for supplied, stored in (
            (key_hashed_seller, record.hash_seller),
            (key_encrypted_seller, record.enc_seller),
        ):
            if supplied is not None and supplied != stored:
                raise ArgumentMismatch("cancel key fields do not match inception")
        record.phase = CANCELLED

    # seller funds the escrow; caller becomes the paying address
    def m_confirmTransfer(self, env: CallEnv, id, amount, to, key_hashed_buyer, key_encrypted_buyer):
        record = self.records.get(id)
        if record is None or record.phase != INCEPTED:
            raise WrongPhase(f"id {id} is not in {INCEPTED}")
        if env.caller != record.frm:
            raise UnauthorizedCaller("only the named seller can confirm")
        if (amount, to) != (record.amount, record.to):
            raise ArgumentMismatch("confirm arguments do not match inception")
        if env.ledger.balance(record.frm) < record.amount:
            raise InsufficientBalance("seller cannot fund the escrow")
        record.hash_buyer = key_hashed_buyer
        record.enc_buyer = key_encrypted_buyer
        env.ledger.lock(self.address, id, record.frm, record.amount)
        record.phase = LOCKED
        env.emit(self.address, EVENT_CONFIRMED, id, record.frm, record.to,
                 key_hashed_buyer, key_encrypted_buyer)

    def m_transferWithKey(self, env: CallEnv, id, key):
        record = self.records.get(id)
        if record is None or record.phase != LOCKED:
            raise WrongPhase(f"id {id} is not in {LOCKED}")
        commitment = self.committer(key)
        if commitment == record.hash_buyer:
            env.ledger.release(self.address, id, record.to)
            record.phase = CLAIMED
            env.emit(self.address, EVENT_CLAIMED, id)
        elif commitment == record.hash_seller:
            env.ledger.release(self.address, id, record.frm)
            record.phase = RECLAIMED
            env.emit(self.address, EVENT_RECLAIMED, id)
        else:
            raise HashMismatch("key matches neither stored commitment")

    def state(self) -> dict:
        return {
            "type": "LockingContract",
            "records": {str(i): r.state() for i, r in sorted(self.records.items())},
        }

    def clone(self) -> "LockingContract":
        other = LockingContract(self.address, self.committer)
        other.records = {i: r.copy() for i, r in self.records.items()}
        return other
