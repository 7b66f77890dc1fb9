"""Decryption-contract state machine: conditional payment plus key request.

transferAndDecrypt and cancelAndDecrypt are mutually exclusive (first one
wins).  Exactly one TransferKeyRequested event is ever emitted per id,
carrying the success ciphertext when the payment went through and the
failure ciphertext otherwise.  Key release comes back through releaseKey:
in single mode the registered oracle submits the full document; in
threshold mode each oracle node submits a partial, which the contract
either reconstructs on-chain at quorum or merely republishes, depending on
how the instance was configured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Set

from . import crypto
from .chainsim import CallEnv, Contract
from .errors import (
    ArgumentMismatch,
    DuplicateId,
    DuplicatePartial,
    InvalidShare,
    MalformedDocument,
    UnauthorizedCaller,
    UnauthorizedOracle,
    UndecryptableCiphertext,
    WrongPhase,
    ZeroAmount,
)
from .keycodec import EncryptedKey, canonical_deserialize
from .oracle import EVENT_KEY_REQUESTED, key_to_text

INCEPTED = "Incepted"
PAID_REQUESTED = "PaidRequested"
FAILED_REQUESTED = "FailedRequested"
CANCEL_REQUESTED = "CancelRequested"
KEY_RELEASED = "KeyReleased"

REQUESTED_PHASES = (PAID_REQUESTED, FAILED_REQUESTED, CANCEL_REQUESTED)

EVENT_INCEPTED = "TransferIncepted"
EVENT_KEY_RELEASED = "TransferKeyReleased"

RELEASE_SINGLE = "single"
RELEASE_RECONSTRUCT = "reconstruct"
RELEASE_PUBLISH = "publish"


@dataclass
class DecryptionTxRecord:
    id: int
    amount: int
    frm: str
    to: str
    enc_success: str
    enc_failure: str
    phase: str = INCEPTED
    requested: Optional[str] = None
    released_key: Optional[str] = None
    partials: Dict[str, str] = field(default_factory=dict)  # sender -> partial text

    def state(self) -> dict:
        return {
            "id": self.id,
            "amount": self.amount,
            "from": self.frm,
            "to": self.to,
            "enc_success": self.enc_success,
            "enc_failure": self.enc_failure,
            "phase": self.phase,
            "requested": self.requested,
            "released_key": self.released_key,
            "partials": sorted(self.partials.items()),
        }

    def copy(self) -> "DecryptionTxRecord":
        other = DecryptionTxRecord(
            self.id, self.amount, self.frm, self.to, self.enc_success,
            self.enc_failure, self.phase, self.requested, self.released_key,
        )
        other.partials = dict(self.partials)
        return other


class DecryptionContract(Contract):
    def __init__(
        self,
        address: str,
        oracle_addresses: Set[str],
        release_mode: str = RELEASE_SINGLE,
        threshold_public: Optional[crypto.ThresholdPublic] = None,
        fault_ids: Optional[Set[int]] = None,
    ):
        super().__init__(address)
        self.oracle_addresses = set(oracle_addresses)
        self.release_mode = release_mode
        self.threshold_public = threshold_public
        self.fault_ids = set(fault_ids or ())  # injectable payment faults
        self.records: Dict[int, DecryptionTxRecord] = {}

    # receiver of the payment opens the transaction
    def m_inceptTransfer(self, env: CallEnv, id, amount, frm, key_encrypted_success, key_encrypted_failure):
        if id in self.records:
            raise DuplicateId(f"id {id} already used")
        if amount <= 0:
            raise ZeroAmount("amount must be positive")
        record = DecryptionTxRecord(
            id=id, amount=amount, frm=frm, to=env.caller,
            enc_success=key_encrypted_success, enc_failure=key_encrypted_failure,
        )
        self.records[id] = record
        env.emit(self.address, EVENT_INCEPTED, id, frm, record.to,
                 key_encrypted_success, key_encrypted_failure)

    def _checked_record(self, id, caller_field, caller):
        record = self.records.get(id)
        if record is None or record.phase != INCEPTED:
            raise WrongPhase(f"id {id} is not in {INCEPTED}")
        if caller != getattr(record, caller_field):
            raise UnauthorizedCaller(f"caller is not the recorded {caller_field}")
        return record

    def _request_decryption(self, env: CallEnv, record, phase, encrypted_text):
        record.phase = phase
        record.requested = encrypted_text
        env.emit(self.address, EVENT_KEY_REQUESTED, record.id, encrypted_text)

    def _attempt_payment(self, env: CallEnv, record) -> bool:
        if record.id in self.fault_ids:
            return False
        return env.ledger.try_transfer(record.frm, record.to, record.amount)

    # payer triggers the conditional transfer
    def m_transferAndDecrypt(self, env: CallEnv, id, amount, to, key_encrypted_success, key_encrypted_failure):
        record = self._checked_record(id, "frm", env.caller)
        if (amount, to, key_encrypted_success, key_encrypted_failure) != (
            record.amount, record.to, record.enc_success, record.enc_failure,
        ):
            raise ArgumentMismatch("arguments do not match inception")
        if self._attempt_payment(env, record):
            self._request_decryption(env, record, PAID_REQUESTED, record.enc_success)
        else:
            self._request_decryption(env, record, FAILED_REQUESTED, record.enc_failure)

    # receiver withdraws the offer; failure key gets decrypted
    def m_cancelAndDecrypt(self, env: CallEnv, id, frm, key_encrypted_success, key_encrypted_failure):
        record = self._checked_record(id, "to", env.caller)
        if (frm, key_encrypted_success, key_encrypted_failure) != (
            record.frm, record.enc_success, record.enc_failure,
        ):
            raise ArgumentMismatch("arguments do not match inception")
        self._request_decryption(env, record, CANCEL_REQUESTED, record.enc_failure)

    def m_releaseKey(self, env: CallEnv, id, key):
        record = self.records.get(id)
        if record is None or record.phase not in REQUESTED_PHASES:
            raise WrongPhase(f"id {id} has no open decryption request")
        if env.caller not in self.oracle_addresses:
            raise UnauthorizedOracle("caller is not a registered oracle")
        if self.release_mode == RELEASE_SINGLE:
            record.released_key = key
            record.phase = KEY_RELEASED
            env.emit(self.address, EVENT_KEY_RELEASED, env.caller, id, key)
            return
        # threshold modes: collect one partial per oracle sender
        if env.caller in record.partials:
            raise DuplicatePartial(f"{env.caller} already submitted a partial")
        try:
            partial = crypto.PartialDecryption.from_text(key)
        except MalformedDocument as exc:
            raise InvalidShare(f"unparseable partial: {exc}") from exc
        ciphertext = EncryptedKey.from_text(record.requested)
        if not crypto.verify_partial(partial, ciphertext, self.threshold_public):
            raise InvalidShare("partial fails verification against commitments")
        record.partials[env.caller] = key
        if self.release_mode == RELEASE_PUBLISH:
            env.emit(self.address, EVENT_KEY_RELEASED, env.caller, id, key)
            return
        # on-contract reconstruction at quorum
        parsed = [crypto.PartialDecryption.from_text(t) for t in record.partials.values()]
        distinct = {p.share_index for p in parsed}
        if len(distinct) >= self.threshold_public.config.k:
            plaintext = crypto.combine(parsed, ciphertext, self.threshold_public)
            try:
                key_text = key_to_text(canonical_deserialize(plaintext))
            except MalformedDocument as exc:
                raise UndecryptableCiphertext(str(exc)) from exc
            record.released_key = key_text
            record.phase = KEY_RELEASED
            env.emit(self.address, EVENT_KEY_RELEASED, self.address, id, key_text)

    def state(self) -> dict:
        return {
            "type": "DecryptionContract",
            "mode": self.release_mode,
            "records": {str(i): r.state() for i, r in sorted(self.records.items())},
        }

    def clone(self) -> "DecryptionContract":
        other = DecryptionContract(
            self.address, self.oracle_addresses, self.release_mode,
            self.threshold_public, self.fault_ids,
        )
        other.records = {i: r.copy() for i, r in self.records.items()}
        return other
