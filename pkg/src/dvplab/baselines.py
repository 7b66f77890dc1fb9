"""Comparison protocols that the analyzer attacks.

Three artifacts live here: a classical hashed-timelock escrow pair, a
wrapper that embeds an HTLC behind the locking-contract interface (plus
the timeout-gated decryption contract that goes with it), and the
symmetric double-locking scheme driven by the five secrets S, B, C, X, Y.
None of these are fixed or hardened; their race conditions are the point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Set

from .chainsim import CallEnv, Contract
from .decryption import DecryptionContract, FAILED_REQUESTED, PAID_REQUESTED
from .errors import (
    ArgumentMismatch,
    DuplicateId,
    HashMismatch,
    InsufficientBalance,
    InvalidConfig,
    TooEarly,
    UnauthorizedCaller,
    WrongPhase,
    ZeroAmount,
)
from .locking import (
    CLAIMED,
    EVENT_CLAIMED,
    EVENT_CONFIRMED,
    INCEPTED,
    LOCKED,
    LockingContract,
)

HTLC_LOCKED = "Locked"
HTLC_COMPLETED = "Completed"
HTLC_REFUNDED = "Refunded"

WRAPPER_CANCELLED = "CancelledPendingRefund"

EVENT_HTLC_LOCKED = "HtlcLocked"
EVENT_HTLC_COMPLETED = "HtlcCompleted"
EVENT_HTLC_REFUNDED = "HtlcRefunded"
EVENT_WRAPPER_CANCELLED = "TransferCancelled"


@dataclass
class HtlcRecord:
    id: int
    amount: int
    sender: str
    receiver: str
    hash: str
    timeout: int
    phase: str = HTLC_LOCKED

    def state(self) -> dict:
        return {
            "id": self.id, "amount": self.amount, "sender": self.sender,
            "receiver": self.receiver, "hash": self.hash,
            "timeout": self.timeout, "phase": self.phase,
        }

    def copy(self) -> "HtlcRecord":
        return HtlcRecord(self.id, self.amount, self.sender, self.receiver,
                          self.hash, self.timeout, self.phase)


class HtlcContract(Contract):
    """Plain hash-timelock escrow: complete with the preimage, refund at timeout."""

    def __init__(self, address: str, committer: Callable[[str], str]):
        super().__init__(address)
        self.committer = committer
        self.records: Dict[int, HtlcRecord] = {}

    def m_lock(self, env: CallEnv, id, amount, receiver, hashv, timeout):
        if id in self.records:
            raise DuplicateId(f"id {id} already used")
        if amount <= 0:
            raise ZeroAmount("amount must be positive")
        if env.ledger.balance(env.caller) < amount:
            raise InsufficientBalance("sender cannot fund the lock")
        env.ledger.lock(self.address, id, env.caller, amount)
        self.records[id] = HtlcRecord(id, amount, env.caller, receiver, hashv, timeout)
        env.emit(self.address, EVENT_HTLC_LOCKED, id, env.caller, receiver, hashv, timeout)

    def m_complete(self, env: CallEnv, id, preimage):
        record = self.records.get(id)
        if record is None or record.phase != HTLC_LOCKED:
            raise WrongPhase(f"id {id} is not locked")
        if self.committer(preimage) != record.hash:
            raise HashMismatch("preimage does not match the stored hash")
        env.ledger.release(self.address, id, record.receiver)
        record.phase = HTLC_COMPLETED
        env.emit(self.address, EVENT_HTLC_COMPLETED, id)

    def m_refund(self, env: CallEnv, id):
        record = self.records.get(id)
        if record is None or record.phase != HTLC_LOCKED:
            raise WrongPhase(f"id {id} is not locked")
        if env.clock < record.timeout:
            raise TooEarly(f"refund opens at tick {record.timeout}")
        env.ledger.release(self.address, id, record.sender)
        record.phase = HTLC_REFUNDED
        env.emit(self.address, EVENT_HTLC_REFUNDED, id)

    def state(self) -> dict:
        return {
            "type": "HtlcContract",
            "records": {str(i): r.state() for i, r in sorted(self.records.items())},
        }

    def clone(self) -> "HtlcContract":
        other = HtlcContract(self.address, self.committer)
        other.records = {i: r.copy() for i, r in self.records.items()}
        return other


class WrappedLockingContract(LockingContract):
    """Locking interface over an underlying HTLC.

    The escrow is the HTLC's: confirmTransfer drives the HTLC lock (hash =
    success-key commitment, timeout T2), a success key completes it, and a
    failure key only flips the wrapper into a cancelled state that blocks
    completion; the tokens come back through the HTLC refund at T2.
    """

    def __init__(self, address: str, committer: Callable[[str], str], htlc_address: str, t2: int):
        super().__init__(address, committer)
        self.htlc_address = htlc_address
        self.t2 = t2

    def m_confirmTransfer(self, env: CallEnv, id, amount, to, key_hashed_buyer, key_encrypted_buyer):
        record = self.records.get(id)
        if record is None or record.phase != INCEPTED:
            raise WrongPhase(f"id {id} is not in {INCEPTED}")
        if env.caller != record.frm:
            raise UnauthorizedCaller("only the named seller can confirm")
        if (amount, to) != (record.amount, record.to):
            raise ArgumentMismatch("confirm arguments do not match inception")
        record.hash_buyer = key_hashed_buyer
        record.enc_buyer = key_encrypted_buyer
        env.invoke(
            self.htlc_address, "lock", record.frm,
            (id, record.amount, record.to, key_hashed_buyer, self.t2),
        )
        record.phase = LOCKED
        env.emit(self.address, EVENT_CONFIRMED, id, record.frm, record.to,
                 key_hashed_buyer, key_encrypted_buyer)

    def m_transferWithKey(self, env: CallEnv, id, key):
        record = self.records.get(id)
        if record is None or record.phase != LOCKED:
            raise WrongPhase(f"id {id} is not in {LOCKED}")
        commitment = self.committer(key)
        if commitment == record.hash_buyer:
            env.invoke(self.htlc_address, "complete", record.to, (id, key))
            record.phase = CLAIMED
            env.emit(self.address, EVENT_CLAIMED, id)
        elif commitment == record.hash_seller:
            # option invalidated; tokens return via the HTLC refund at T2
            record.phase = WRAPPER_CANCELLED
            env.emit(self.address, EVENT_WRAPPER_CANCELLED, id)
        else:
            raise HashMismatch("key matches neither stored commitment")

    def state(self) -> dict:
        base = super().state()
        base["type"] = "WrappedLockingContract"
        base["t2"] = self.t2
        return base

    def clone(self) -> "WrappedLockingContract":
        other = WrappedLockingContract(self.address, self.committer, self.htlc_address, self.t2)
        other.records = {i: r.copy() for i, r in self.records.items()}
        return other


class TimedDecryptionContract(DecryptionContract):
    """Decryption contract for the wrapper: past T1 only the failure path runs."""

    def __init__(self, address: str, oracle_addresses: Set[str], t1: int, t2: int, **kwargs):
        if t1 >= t2:
            raise InvalidConfig(f"T1 ({t1}) must be smaller than the HTLC timeout T2 ({t2})")
        super().__init__(address, oracle_addresses, **kwargs)
        self.t1 = t1
        self.t2 = t2

    def m_transferAndDecrypt(self, env: CallEnv, id, amount, to, key_encrypted_success, key_encrypted_failure):
        record = self._checked_record(id, "frm", env.caller)
        if (amount, to, key_encrypted_success, key_encrypted_failure) != (
            record.amount, record.to, record.enc_success, record.enc_failure,
        ):
            raise ArgumentMismatch("arguments do not match inception")
        if env.clock > self.t1:
            self._request_decryption(env, record, FAILED_REQUESTED, record.enc_failure)
        elif self._attempt_payment(env, record):
            self._request_decryption(env, record, PAID_REQUESTED, record.enc_success)
        else:
            self._request_decryption(env, record, FAILED_REQUESTED, record.enc_failure)

    def state(self) -> dict:
        base = super().state()
        base["type"] = "TimedDecryptionContract"
        base["t1"] = self.t1
        return base

    def clone(self) -> "TimedDecryptionContract":
        other = TimedDecryptionContract(
            self.address, self.oracle_addresses, self.t1, self.t2,
            release_mode=self.release_mode, threshold_public=self.threshold_public,
            fault_ids=self.fault_ids,
        )
        other.records = {i: r.copy() for i, r in self.records.items()}
        return other


# --------------------------------------------------------------------------
# Double locking (one transaction per contract pair; no ids)
# --------------------------------------------------------------------------

DL_START = "Start"
DL_INCEPTED = "Incepted"
DL_CONFIRMED = "Confirmed"
DL_CANCELLED = "Cancelled"
DL_LOCKED = "Locked"
DL_DONE_BUYER = "DoneBuyer"
DL_DONE_SELLER = "DoneSeller"


class DoubleLockAssetContract(Contract):
    """Asset-side contract of the double-locking scheme.

    incept stores H(S), H(Y); confirm stores H(B), H(C), H(X) and escrows
    the asset; the seller may cancel with C until the buyer locks by
    presenting X and Y; afterwards only B (to the buyer) or S (to the
    seller) release the escrow.
    """

    def __init__(self, address: str, committer: Callable[[str], str],
                 buyer: str, seller: str, amount: int):
        super().__init__(address)
        self.committer = committer
        self.buyer = buyer
        self.seller = seller
        self.amount = amount
        self.phase = DL_START
        self.hashes: Dict[str, Optional[str]] = {
            "S": None, "Y": None, "B": None, "C": None, "X": None,
        }

    def m_incept(self, env: CallEnv, h_s, h_y):
        if self.phase != DL_START:
            raise WrongPhase("asset contract already incepted")
        if env.caller != self.buyer:
            raise UnauthorizedCaller("incept is the buyer's call")
        self.hashes["S"], self.hashes["Y"] = h_s, h_y
        self.phase = DL_INCEPTED

    def m_confirm(self, env: CallEnv, h_b, h_c, h_x):
        if self.phase != DL_INCEPTED:
            raise WrongPhase("confirm needs an incepted contract")
        if env.caller != self.seller:
            raise UnauthorizedCaller("confirm is the seller's call")
        if env.ledger.balance(self.seller) < self.amount:
            raise InsufficientBalance("seller cannot fund the asset lock")
        self.hashes["B"], self.hashes["C"], self.hashes["X"] = h_b, h_c, h_x
        env.ledger.lock(self.address, 0, self.seller, self.amount)
        self.phase = DL_CONFIRMED

    def m_cancel(self, env: CallEnv, c_preimage):
        if self.phase != DL_CONFIRMED:
            raise WrongPhase("cancel only between confirm and lock")
        if env.caller != self.seller:
            raise UnauthorizedCaller("cancel is the seller's call")
        if self.committer(c_preimage) != self.hashes["C"]:
            raise HashMismatch("cancel preimage does not match H(C)")
        env.ledger.release(self.address, 0, self.seller)
        self.phase = DL_CANCELLED

    def m_lock(self, env: CallEnv, h_b, h_s, x_preimage, y_preimage):
        if self.phase != DL_CONFIRMED:
            raise WrongPhase("lock needs a confirmed contract")
        if env.caller != self.buyer:
            raise UnauthorizedCaller("lock is the buyer's call")
        if h_b != self.hashes["B"] or h_s != self.hashes["S"]:
            raise ArgumentMismatch("hash arguments do not match stored values")
        if self.committer(x_preimage) != self.hashes["X"]:
            raise HashMismatch("X preimage does not match H(X)")
        if self.committer(y_preimage) != self.hashes["Y"]:
            raise HashMismatch("Y preimage does not match H(Y)")
        self.phase = DL_LOCKED

    def m_retrieve(self, env: CallEnv, key):
        commitment = self.committer(key)
        if commitment == self.hashes["B"]:
            if self.phase not in (DL_CONFIRMED, DL_LOCKED):
                raise WrongPhase("nothing to retrieve with B")
            env.ledger.release(self.address, 0, self.buyer)
            self.phase = DL_DONE_BUYER
        elif commitment == self.hashes["S"]:
            if self.phase != DL_LOCKED:
                raise WrongPhase("S only releases a locked asset")
            env.ledger.release(self.address, 0, self.seller)
            self.phase = DL_DONE_SELLER
        else:
            raise HashMismatch("key matches no stored hash")

    def state(self) -> dict:
        return {"type": "DoubleLockAsset", "phase": self.phase, "hashes": dict(self.hashes)}

    def clone(self) -> "DoubleLockAssetContract":
        other = DoubleLockAssetContract(
            self.address, self.committer, self.buyer, self.seller, self.amount
        )
        other.phase = self.phase
        other.hashes = dict(self.hashes)
        return other


class DoubleLockPaymentContract(Contract):
    """Payment-side contract of the double-locking scheme.

    incept stores the five hashes (H(Y) included: retrieval with (B, Y)
    must be checkable server-side or the seller could collect early).
    cancel closes an unconfirmed inception, or refunds a confirmed lock
    against the preimage C.  confirm checks X and escrows the payment.
    retrieve pays the seller for (B, Y) and the buyer for S.
    """

    def __init__(self, address: str, committer: Callable[[str], str],
                 buyer: str, seller: str, amount: int):
        super().__init__(address)
        self.committer = committer
        self.buyer = buyer
        self.seller = seller
        self.amount = amount
        self.phase = DL_START
        self.hashes: Dict[str, Optional[str]] = {
            "B": None, "S": None, "C": None, "X": None, "Y": None,
        }

    def m_incept(self, env: CallEnv, h_b, h_s, h_c, h_x, h_y):
        if self.phase != DL_START:
            raise WrongPhase("payment contract already incepted")
        if env.caller != self.buyer:
            raise UnauthorizedCaller("incept is the buyer's call")
        self.hashes.update({"B": h_b, "S": h_s, "C": h_c, "X": h_x, "Y": h_y})
        self.phase = DL_INCEPTED

    def m_cancel(self, env: CallEnv, *args):
        if self.phase == DL_INCEPTED:
            if env.caller != self.buyer:
                raise UnauthorizedCaller("pre-confirm cancel is the buyer's call")
            stored = (self.hashes["B"], self.hashes["S"], self.hashes["C"],
                      self.hashes["X"], self.hashes["Y"])
            if tuple(args) != stored:
                raise ArgumentMismatch("cancel hashes do not match inception")
            self.phase = DL_CANCELLED
            return
        if self.phase == DL_CONFIRMED:
            if len(args) != 1:
                raise ArgumentMismatch("post-confirm cancel takes the C preimage")
            if self.committer(args[0]) != self.hashes["C"]:
                raise HashMismatch("cancel preimage does not match H(C)")
            env.ledger.release(self.address, 0, self.buyer)
            self.phase = DL_CANCELLED
            return
        raise WrongPhase("nothing to cancel")

    def m_confirm(self, env: CallEnv, h_b, h_s, h_c, x_preimage):
        if self.phase != DL_INCEPTED:
            raise WrongPhase("confirm needs an incepted contract")
        if env.caller != self.seller:
            raise UnauthorizedCaller("confirm is the seller's call")
        if (h_b, h_s, h_c) != (self.hashes["B"], self.hashes["S"], self.hashes["C"]):
            raise ArgumentMismatch("hash arguments do not match inception")
        if self.committer(x_preimage) != self.hashes["X"]:
            raise HashMismatch("X preimage does not match H(X)")
        if env.ledger.balance(self.buyer) < self.amount:
            raise InsufficientBalance("buyer cannot fund the payment lock")
        env.ledger.lock(self.address, 0, self.buyer, self.amount)
        self.phase = DL_CONFIRMED

    def m_retrieve(self, env: CallEnv, *args):
        if self.phase != DL_CONFIRMED:
            raise WrongPhase("nothing to retrieve")
        if len(args) == 2:
            b_preimage, y_preimage = args
            if self.committer(b_preimage) != self.hashes["B"]:
                raise HashMismatch("B preimage does not match H(B)")
            if self.committer(y_preimage) != self.hashes["Y"]:
                raise HashMismatch("Y preimage does not match H(Y)")
            env.ledger.release(self.address, 0, self.seller)
            self.phase = DL_DONE_SELLER
        elif len(args) == 1:
            if self.committer(args[0]) != self.hashes["S"]:
                raise HashMismatch("S preimage does not match H(S)")
            env.ledger.release(self.address, 0, self.buyer)
            self.phase = DL_DONE_BUYER
        else:
            raise ArgumentMismatch("retrieve takes (B, Y) or (S)")

    def state(self) -> dict:
        return {"type": "DoubleLockPayment", "phase": self.phase, "hashes": dict(self.hashes)}

    def clone(self) -> "DoubleLockPaymentContract":
        other = DoubleLockPaymentContract(
            self.address, self.committer, self.buyer, self.seller, self.amount
        )
        other.phase = self.phase
        other.hashes = dict(self.hashes)
        return other
