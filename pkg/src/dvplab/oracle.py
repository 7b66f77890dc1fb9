"""The stateless decryption oracle.

A node holds nothing but key material and configuration.  Its observable
behaviour is a pure function of (key material, input ciphertext, call
context): issuance never retains the generated document, verification
reports the routing fields and the hash without the payload, and
decryption succeeds only when the caller context matches the contract and
transaction embedded in the document.

Threshold mode splits the secret scalar across n nodes.  Each node reacts
to a decryption request with a partial result; quorum assembly happens
either on the contract or by whoever collects the published partials.
The ensemble facade also answers ``verify``/``decrypt`` by assembling a
quorum internally, which is how a distributed operator would serve the
off-chain endpoints.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

from . import crypto
from .errors import (
    EligibilityMismatch,
    InvalidConfig,
    MalformedDocument,
    UndecryptableCiphertext,
)
from .keycodec import (
    SCHEME_SINGLE,
    SCHEME_THRESHOLD,
    ContractRef,
    EncryptedKey,
    HashedKey,
    ReleaseKey,
    TxId,
    canonical_deserialize,
    canonical_serialize,
    hash_key,
    hash_text,
    unpack_envelope,
)

EVENT_KEY_REQUESTED = "TransferKeyRequested"


@dataclass(frozen=True)
class OracleConfig:
    hash_eq_enc: bool = False      # commitments are ciphertexts, not digests
    eligibility_checks: bool = True


@dataclass(frozen=True)
class EncryptedHashedKey:
    encrypted: EncryptedKey
    hashed: str


@dataclass(frozen=True)
class KeyVerification:
    contract: ContractRef
    transaction: TxId
    hashed: str


@dataclass(frozen=True)
class OracleContext:
    """Provenance of a decryption request, supplied by the chain simulator."""

    caller_contract: ContractRef
    caller_transaction: TxId


@dataclass(frozen=True)
class OracleReaction:
    """What a node does with a delivered event: maybe a call, plus a log note."""

    submit: Optional[Tuple[str, tuple]] = None
    note: str = ""


def key_to_text(doc: ReleaseKey) -> str:
    return canonical_serialize(doc).decode("ascii")


def parse_ciphertext(encrypted_text: str) -> EncryptedKey:
    try:
        return EncryptedKey.from_text(encrypted_text)
    except MalformedDocument as exc:
        raise UndecryptableCiphertext(str(exc)) from exc


@lru_cache(maxsize=8192)
def _decrypt_raw(ciphertext: bytes, scheme_tag: str, secret: int) -> bytes:
    # pure-function memo; the oracle's observable behaviour is unchanged
    return crypto.decrypt(EncryptedKey(ciphertext, scheme_tag), secret)


def _parse_document(plaintext: bytes) -> ReleaseKey:
    try:
        return canonical_deserialize(plaintext)
    except MalformedDocument as exc:
        raise UndecryptableCiphertext(f"decrypted bytes are not a key document: {exc}") from exc


def make_committer(public: int, scheme_tag: str, config: OracleConfig) -> Callable[[str], str]:
    """Build the commitment function contracts use to check presented keys.

    Plain mode commits by digest.  In the ciphertext-as-hash mode the
    commitment is the deterministic encryption of the document, so a
    contract holding the oracle's public material can recompute it from a
    presented key and compare bytes.
    """
    if not config.hash_eq_enc:
        return hash_text

    def commit(key_text: str) -> str:
        try:
            doc = canonical_deserialize(key_text.encode("ascii"))
        except (MalformedDocument, UnicodeEncodeError):
            return "unmatchable:" + hash_text(key_text)
        ct = crypto.encrypt(
            canonical_serialize(doc),
            public,
            None,
            scheme_tag,
            contract=doc.contract.text(),
            transaction=doc.transaction.text(),
            deterministic=True,
        )
        return ct.text()

    return commit


def _issue(
    public: int,
    scheme_tag: str,
    config: OracleConfig,
    contract: ContractRef,
    transaction: TxId,
    rng: random.Random,
) -> EncryptedHashedKey:
    doc = ReleaseKey(contract, transaction, rng.randbytes(32))
    plaintext = canonical_serialize(doc)
    deterministic = config.hash_eq_enc
    encrypted = crypto.encrypt(
        plaintext,
        public,
        rng,
        scheme_tag,
        contract=contract.text(),
        transaction=transaction.text(),
        deterministic=deterministic,
    )
    hashed = encrypted.text() if config.hash_eq_enc else hash_key(doc).text()
    # doc goes out of scope here: nothing about it is retained
    return EncryptedHashedKey(encrypted, hashed)


def _verification_for(doc: ReleaseKey, hashed: str) -> KeyVerification:
    return KeyVerification(doc.contract, doc.transaction, hashed)


def _check_context(doc: ReleaseKey, ctx: OracleContext) -> None:
    if doc.contract != ctx.caller_contract or doc.transaction != ctx.caller_transaction:
        raise EligibilityMismatch(
            "request context does not match the contract/transaction in the key"
        )


class DecryptionOracle:
    """Single trusted oracle: one keypair, three stateless endpoints."""

    def __init__(self, keypair: crypto.OracleKeyPair, config: OracleConfig = OracleConfig()):
        self._keypair = keypair
        self.config = config

    @classmethod
    def generate(cls, seed: int, config: OracleConfig = OracleConfig()) -> "DecryptionOracle":
        return cls(crypto.keygen(seed), config)

    @property
    def public_component(self) -> int:
        return self._keypair.public_component

    def request_encrypted_hashed_key(
        self, contract: ContractRef, transaction: TxId, rng: random.Random
    ) -> EncryptedHashedKey:
        return _issue(self.public_component, SCHEME_SINGLE, self.config, contract, transaction, rng)

    def _decrypt_document(self, encrypted: EncryptedKey) -> ReleaseKey:
        plaintext = _decrypt_raw(
            encrypted.ciphertext, encrypted.scheme_tag, self._keypair.secret_component
        )
        return _parse_document(plaintext)

    def verify(self, encrypted: EncryptedKey) -> KeyVerification:
        doc = self._decrypt_document(encrypted)
        hashed = encrypted.text() if self.config.hash_eq_enc else hash_key(doc).text()
        return _verification_for(doc, hashed)

    def decrypt(self, encrypted: EncryptedKey, ctx: OracleContext) -> ReleaseKey:
        doc = self._decrypt_document(encrypted)
        if self.config.eligibility_checks:
            _check_context(doc, ctx)
        return doc

    def on_event(self, name: str, payload: Sequence, ctx: OracleContext) -> OracleReaction:
        if name != EVENT_KEY_REQUESTED:
            return OracleReaction(note="ignored event " + name)
        tx_id, encrypted_text = payload[0], payload[1]
        try:
            doc = self.decrypt(parse_ciphertext(str(encrypted_text)), ctx)
        except UndecryptableCiphertext as exc:
            return OracleReaction(note=f"drop: {exc}")
        except EligibilityMismatch:
            return OracleReaction(note="drop: EligibilityMismatch")
        return OracleReaction(submit=("releaseKey", (tx_id, key_to_text(doc))))


class ThresholdOracleNode:
    """One share holder.  Reacts to requests with a partial decryption."""

    def __init__(
        self,
        name: str,
        share: crypto.ThresholdShare,
        public: crypto.ThresholdPublic,
        config: OracleConfig = OracleConfig(),
    ):
        self.name = name
        self.share = share
        self.public = public
        self.config = config

    def request_encrypted_hashed_key(
        self, contract: ContractRef, transaction: TxId, rng: random.Random
    ) -> EncryptedHashedKey:
        return _issue(
            self.public.public_component, SCHEME_THRESHOLD, self.config, contract, transaction, rng
        )

    def on_event(self, name: str, payload: Sequence, ctx: OracleContext) -> OracleReaction:
        if name != EVENT_KEY_REQUESTED:
            return OracleReaction(note="ignored event " + name)
        tx_id, encrypted_text = payload[0], payload[1]
        try:
            ct = parse_ciphertext(str(encrypted_text))
            envelope = unpack_envelope(ct.ciphertext)
        except (UndecryptableCiphertext, MalformedDocument) as exc:
            return OracleReaction(note=f"drop: {exc}")
        if self.config.eligibility_checks:
            if (
                envelope.contract != ctx.caller_contract.text()
                or envelope.transaction != ctx.caller_transaction.text()
            ):
                return OracleReaction(note="drop: EligibilityMismatch")
        try:
            partial = crypto.partial_decrypt(ct, self.share, self.name)
        except (crypto.SchemeMismatch, MalformedDocument) as exc:
            return OracleReaction(note=f"drop: {exc}")
        return OracleReaction(submit=("releaseKey", (tx_id, partial.to_text())))


class OracleService:
    """Facade over a single oracle or a threshold ensemble."""

    def __init__(
        self,
        mode: str,
        config: OracleConfig,
        single: Optional[DecryptionOracle] = None,
        nodes: Optional[List[ThresholdOracleNode]] = None,
        public: Optional[crypto.ThresholdPublic] = None,
    ):
        self.mode = mode
        self.config = config
        self._single = single
        self._nodes = nodes or []
        self._public = public
        self._plain_cache: dict = {}  # facade-level memo; nodes stay bare

    @classmethod
    def single(cls, seed: int, config: OracleConfig = OracleConfig()) -> "OracleService":
        return cls("single", config, single=DecryptionOracle.generate(seed, config))

    @classmethod
    def threshold(
        cls, cfg: crypto.ThresholdConfig, seed: int, config: OracleConfig = OracleConfig()
    ) -> "OracleService":
        public, shares = crypto.threshold_keygen(cfg, seed)
        nodes = [
            ThresholdOracleNode(f"oracle-{s.index}", s, public, config) for s in shares
        ]
        return cls("threshold", config, nodes=nodes, public=public)

    @property
    def threshold_public(self) -> Optional[crypto.ThresholdPublic]:
        return self._public

    def node_names(self) -> List[str]:
        if self.mode == "single":
            return ["oracle-0"]
        return [node.name for node in self._nodes]

    def node(self, name: str):
        if self.mode == "single":
            if name != "oracle-0":
                raise InvalidConfig(f"unknown oracle node {name}")
            return self._single
        for candidate in self._nodes:
            if candidate.name == name:
                return candidate
        raise InvalidConfig(f"unknown oracle node {name}")

    def public_component(self) -> int:
        if self.mode == "single":
            return self._single.public_component
        return self._public.public_component

    def scheme_tag(self) -> str:
        return SCHEME_SINGLE if self.mode == "single" else SCHEME_THRESHOLD

    def committer(self) -> Callable[[str], str]:
        return make_committer(self.public_component(), self.scheme_tag(), self.config)

    def request_encrypted_hashed_key(
        self, contract: ContractRef, transaction: TxId, rng: random.Random
    ) -> EncryptedHashedKey:
        return _issue(
            self.public_component(), self.scheme_tag(), self.config, contract, transaction, rng
        )

    def _quorum_plaintext(self, encrypted: EncryptedKey) -> bytes:
        cached = self._plain_cache.get(encrypted.ciphertext)
        if cached is not None:
            return cached
        partials = [
            crypto.partial_decrypt(encrypted, node.share, node.name)
            for node in self._nodes[: self._public.config.k]
        ]
        plaintext = crypto.combine(partials, encrypted, self._public)
        self._plain_cache[encrypted.ciphertext] = plaintext
        return plaintext

    def _document(self, encrypted: EncryptedKey) -> ReleaseKey:
        if self.mode == "single":
            return self._single._decrypt_document(encrypted)
        try:
            plaintext = self._quorum_plaintext(encrypted)
        except (crypto.SchemeMismatch, MalformedDocument) as exc:
            raise UndecryptableCiphertext(str(exc)) from exc
        return _parse_document(plaintext)

    def verify(self, encrypted: EncryptedKey) -> KeyVerification:
        if self.mode == "single":
            return self._single.verify(encrypted)
        doc = self._document(encrypted)
        hashed = encrypted.text() if self.config.hash_eq_enc else hash_key(doc).text()
        return _verification_for(doc, hashed)

    def decrypt(self, encrypted: EncryptedKey, ctx: OracleContext) -> ReleaseKey:
        if self.mode == "single":
            return self._single.decrypt(encrypted, ctx)
        doc = self._document(encrypted)
        if self.config.eligibility_checks:
            _check_context(doc, ctx)
        return doc

    def combine_partial_texts(self, encrypted_text: str, partial_texts: Sequence[str]) -> str:
        """Party-side reconstruction from published partials."""
        ct = parse_ciphertext(encrypted_text)
        partials = [crypto.PartialDecryption.from_text(t) for t in partial_texts]
        plaintext = crypto.combine(partials, ct, self._public)
        return key_to_text(_parse_document(plaintext))
