"""Release-key documents and their wire formats.

A release key is a small document: the chain-qualified address of the
contract allowed to request its decryption, the transaction id it belongs
to, and 32 random bytes.  Three encodings exist:

* canonical text -- three lines (contract ref, decimal tx id, base64
  payload).  This is the form that is hashed and the form a released key
  takes when submitted on-chain.
* XML -- the interoperability format (root element ``releaseKey`` with
  ``contract`` and ``transaction`` attributes, payload as element text).
* ciphertext envelope -- the byte layout of an encrypted key, parsed here
  so that codecs stay independent of the group arithmetic in
  :mod:`dvplab.crypto`.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

from .errors import MalformedDocument

XML_NAMESPACE = "http://finnmath.net/erc/ILockingContract"

KEY_VALUE_BYTES = 32
DIGEST_BYTES = 32

SCHEME_SINGLE = "single"
SCHEME_THRESHOLD = "threshold"

_ENVELOPE_VERSION = 1
_SCHEME_CODES = {SCHEME_SINGLE: 1, SCHEME_THRESHOLD: 2}
_SCHEME_NAMES = {code: name for name, code in _SCHEME_CODES.items()}

_NAMESPACE_RE = re.compile(r"^[a-z][a-z0-9]{0,15}$")
_CHAIN_ID_RE = re.compile(r"^(0|[1-9][0-9]*)$")
_ADDRESS_RE = re.compile(r"^0x[0-9a-fA-F]{40}$")

MAX_TX_ID = 2**256 - 1


@dataclass(frozen=True)
class ContractRef:
    """Chain-qualified contract identifier, ``namespace:chain_id:address``."""

    namespace: str
    chain_id: str
    address: str

    def __post_init__(self):
        if not _NAMESPACE_RE.match(self.namespace):
            raise MalformedDocument(f"bad namespace {self.namespace!r}")
        if not _CHAIN_ID_RE.match(self.chain_id):
            raise MalformedDocument(f"bad chain id {self.chain_id!r}")
        if not _ADDRESS_RE.match(self.address):
            raise MalformedDocument(f"bad address {self.address!r}")
        # addresses compare case-insensitively; store them lowercased
        object.__setattr__(self, "address", self.address.lower())

    def text(self) -> str:
        return f"{self.namespace}:{self.chain_id}:{self.address}"

    @classmethod
    def parse(cls, text: str) -> "ContractRef":
        parts = text.split(":")
        if len(parts) != 3:
            raise MalformedDocument(f"contract ref needs exactly two colons: {text!r}")
        return cls(parts[0], parts[1], parts[2])


@dataclass(frozen=True)
class TxId:
    """Transaction id, an unsigned 256-bit integer with minimal decimal form."""

    value: int

    def __post_init__(self):
        if not isinstance(self.value, int) or not 0 <= self.value <= MAX_TX_ID:
            raise MalformedDocument(f"tx id out of range: {self.value!r}")

    def text(self) -> str:
        return str(self.value)

    @classmethod
    def parse(cls, text: str) -> "TxId":
        if not _CHAIN_ID_RE.match(text):
            raise MalformedDocument(f"tx id is not minimal decimal: {text!r}")
        return cls(int(text))


@dataclass(frozen=True)
class ReleaseKey:
    contract: ContractRef
    transaction: TxId
    value: bytes

    def __post_init__(self):
        if len(self.value) != KEY_VALUE_BYTES:
            raise MalformedDocument(
                f"key payload must be {KEY_VALUE_BYTES} bytes, got {len(self.value)}"
            )


@dataclass(frozen=True)
class HashedKey:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_BYTES:
            raise MalformedDocument("hashed key must be a 32-byte digest")

    def text(self) -> str:
        return self.digest.hex()

    @classmethod
    def parse(cls, text: str) -> "HashedKey":
        try:
            return cls(bytes.fromhex(text))
        except ValueError as exc:
            raise MalformedDocument(f"bad digest hex: {text!r}") from exc


@dataclass(frozen=True)
class EncryptedKey:
    """Opaque ciphertext; base64 text form, scheme tag in the envelope."""

    ciphertext: bytes
    scheme_tag: str

    def __post_init__(self):
        if self.scheme_tag not in _SCHEME_CODES:
            raise MalformedDocument(f"unknown scheme tag {self.scheme_tag!r}")

    def text(self) -> str:
        return base64.b64encode(self.ciphertext).decode("ascii")

    @classmethod
    def from_text(cls, text: str) -> "EncryptedKey":
        try:
            raw = base64.b64decode(text, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise MalformedDocument("ciphertext is not valid base64") from exc
        return cls(raw, unpack_envelope(raw).scheme_tag)


@dataclass(frozen=True)
class Envelope:
    """Decoded ciphertext layout: header is cleartext, body is opaque."""

    scheme_tag: str
    contract: str
    transaction: str
    c1: bytes
    mac: bytes
    body: bytes


def pack_envelope(
    scheme_tag: str, contract: str, transaction: str, c1: bytes, mac: bytes, body: bytes
) -> bytes:
    header = f"{contract}|{transaction}".encode("utf-8")
    if len(header) > 0xFFFF or len(c1) > 0xFFFF:
        raise MalformedDocument("envelope field too long")
    return (
        bytes([_ENVELOPE_VERSION, _SCHEME_CODES[scheme_tag]])
        + len(header).to_bytes(2, "big")
        + header
        + len(c1).to_bytes(2, "big")
        + c1
        + mac
        + body
    )


def unpack_envelope(raw: bytes) -> Envelope:
    try:
        if raw[0] != _ENVELOPE_VERSION:
            raise MalformedDocument(f"unknown envelope version {raw[0]}")
        scheme = _SCHEME_NAMES.get(raw[1])
        if scheme is None:
            raise MalformedDocument(f"unknown scheme code {raw[1]}")
        pos = 2
        hlen = int.from_bytes(raw[pos : pos + 2], "big")
        pos += 2
        header = raw[pos : pos + hlen].decode("utf-8")
        if len(raw[pos : pos + hlen]) != hlen:
            raise MalformedDocument("truncated envelope header")
        pos += hlen
        contract, _, transaction = header.partition("|")
        clen = int.from_bytes(raw[pos : pos + 2], "big")
        pos += 2
        c1 = raw[pos : pos + clen]
        if len(c1) != clen:
            raise MalformedDocument("truncated envelope c1")
        pos += clen
        mac = raw[pos : pos + 16]
        if len(mac) != 16:
            raise MalformedDocument("truncated envelope mac")
        body = raw[pos + 16 :]
        return Envelope(scheme, contract, transaction, c1, mac, body)
    except IndexError as exc:
        raise MalformedDocument("truncated envelope") from exc
    except UnicodeDecodeError as exc:
        raise MalformedDocument("corrupt envelope header") from exc


def canonical_serialize(key: ReleaseKey) -> bytes:
    """Deterministic injective byte encoding; the input to hashing/encryption."""
    payload = base64.b64encode(key.value).decode("ascii")
    return f"{key.contract.text()}\n{key.transaction.text()}\n{payload}".encode("ascii")


def canonical_deserialize(data: bytes) -> ReleaseKey:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedDocument("canonical form must be ascii") from exc
    lines = text.split("\n")
    if len(lines) != 3:
        raise MalformedDocument("canonical form has exactly three lines")
    contract = ContractRef.parse(lines[0])
    transaction = TxId.parse(lines[1])
    try:
        value = base64.b64decode(lines[2], validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedDocument("bad base64 payload") from exc
    return ReleaseKey(contract, transaction, value)


def hash_key(key: ReleaseKey) -> HashedKey:
    return HashedKey(hashlib.sha256(canonical_serialize(key)).digest())


def hash_text(key_text: str) -> str:
    """Digest of a key presented as text, as a contract would compute it."""
    return hashlib.sha256(key_text.encode("utf-8", errors="replace")).hexdigest()


def to_xml(key: ReleaseKey) -> str:
    root = ET.Element(f"{{{XML_NAMESPACE}}}releaseKey")
    root.set("contract", key.contract.text())
    root.set("transaction", key.transaction.text())
    root.text = base64.b64encode(key.value).decode("ascii")
    ET.register_namespace("", XML_NAMESPACE)
    body = ET.tostring(root, encoding="unicode")
    return '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n' + body


def from_xml(text: str) -> ReleaseKey:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedDocument(f"unparseable XML: {exc}") from exc
    local = root.tag.rsplit("}", 1)[-1]
    if local != "releaseKey":
        raise MalformedDocument(f"unexpected root element {root.tag!r}")
    contract_attr = root.get("contract")
    transaction_attr = root.get("transaction")
    if contract_attr is None:
        raise MalformedDocument("missing required attribute 'contract'")
    if transaction_attr is None:
        raise MalformedDocument("missing required attribute 'transaction'")
    payload = "".join("".join(root.itertext()).split())
    try:
        value = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedDocument("element text is not valid base64") from exc
    return ReleaseKey(ContractRef.parse(contract_attr), TxId.parse(transaction_attr), value)


def looks_like_key_text(text: str) -> bool:
    """Cheap structural check used when classifying observed values."""
    try:
        canonical_deserialize(text.encode("ascii"))
        return True
    except (MalformedDocument, UnicodeEncodeError):
        return False
