"""Public-key encryption of release keys and k-of-n threshold decryption.

Construction: ElGamal key encapsulation over a Schnorr group, with a
SHA-256 stream wrap of the serialized key document and a binding MAC over
the cleartext routing header and the body.  Threshold mode shares the
ElGamal secret scalar with a Shamir polynomial; partial decryptions are
``c1^share`` accompanied by a Chaum-Pedersen proof against Feldman
commitments, and are combined by Lagrange interpolation in the exponent.

The group parameters are deterministic and desk-scale: q is the smallest
prime >= 2**255, p = k*q + 1 for the smallest k >= 2**257 making p prime,
and g = 2^((p-1)/q) mod p.  This gives fast, reproducible arithmetic that
is algebraically real but NOT sized for production security.  Do not use
this module to protect anything of value.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import random

from .errors import (
    InsufficientQuorum,
    InvalidConfig,
    InvalidShare,
    MalformedDocument,
    SchemeMismatch,
    UndecryptableCiphertext,
)
from .keycodec import (
    SCHEME_SINGLE,
    SCHEME_THRESHOLD,
    EncryptedKey,
    Envelope,
    pack_envelope,
    unpack_envelope,
)

# Group order q = 2**255 + 95, modulus p = (2**257 + 10)*q + 1 (513 bits).
Q = 2**255 + 95
P = (2**257 + 10) * Q + 1
G = pow(2, (P - 1) // Q, P)

_P_BYTES = (P.bit_length() + 7) // 8


def _i2b(x: int) -> bytes:
    return x.to_bytes(_P_BYTES, "big")


def _b2i(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


def _hash_to_scalar(*parts: bytes) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return int.from_bytes(h.digest() + hashlib.sha256(h.digest()).digest(), "big") % Q


def _stream(sym_key: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(sym_key + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _sym_key(c1: int, kem: int) -> bytes:
    return hashlib.sha256(b"dvp-kem" + _i2b(c1) + _i2b(kem)).digest()


def _mac(sym_key: bytes, header: bytes, body: bytes) -> bytes:
    return hashlib.sha256(b"dvp-mac" + sym_key + header + body).digest()[:16]


@dataclass(frozen=True)
class OracleKeyPair:
    public_component: int
    secret_component: int


@dataclass(frozen=True)
class ThresholdConfig:
    n: int
    k: int

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.k > self.n:
            raise InvalidConfig(f"need 1 <= k <= n, got k={self.k} n={self.n}")


@dataclass(frozen=True)
class ThresholdShare:
    index: int
    value: int


@dataclass(frozen=True)
class ThresholdPublic:
    """Everything needed to encrypt, verify partials and combine."""

    config: ThresholdConfig
    public_component: int
    commitments: Tuple[int, ...]  # g^a_j for polynomial coefficients a_0..a_{k-1}

    def share_commitment(self, index: int) -> int:
        acc = 1
        for j, commitment in enumerate(self.commitments):
            acc = acc * pow(commitment, pow(index, j, Q), P) % P
        return acc


@dataclass(frozen=True)
class PartialDecryption:
    share_index: int
    share_value: int
    sender: str
    proof: Tuple[int, int]  # Chaum-Pedersen (challenge, response)

    def to_text(self) -> str:
        return json.dumps(
            {
                "i": self.share_index,
                "v": format(self.share_value, "x"),
                "s": self.sender,
                "e": format(self.proof[0], "x"),
                "z": format(self.proof[1], "x"),
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_text(cls, text: str) -> "PartialDecryption":
        try:
            obj = json.loads(text)
            return cls(int(obj["i"]), int(obj["v"], 16), str(obj["s"]),
                       (int(obj["e"], 16), int(obj["z"], 16)))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedDocument(f"bad partial decryption text: {exc}") from exc


def keygen(seed: int) -> OracleKeyPair:
    rng = random.Random(f"dvp-keygen:{seed}")
    secret = rng.randrange(1, Q)
    return OracleKeyPair(pow(G, secret, P), secret)


def _derive_r(public: int, plaintext: bytes, header: bytes) -> int:
    # convergent randomness: recomputable by anyone holding the plaintext
    digest = hashlib.sha256(b"dvp-detr" + _i2b(public) + header + plaintext).digest()
    return (int.from_bytes(digest + digest, "big") % (Q - 1)) + 1


def encrypt(
    plaintext: bytes,
    public: int,
    rng: Optional[random.Random],
    scheme_tag: str = SCHEME_SINGLE,
    contract: str = "",
    transaction: str = "",
    deterministic: bool = False,
) -> EncryptedKey:
    """Encrypt ``plaintext`` to the holder(s) of the matching secret.

    The contract/transaction routing header travels in cleartext but is
    bound by the MAC, so tampering is detected at decryption time.  With
    ``deterministic`` the encapsulation randomness is derived from the
    plaintext itself, making the ciphertext recomputable from the document
    (used when ciphertexts stand in for hashes).
    """
    if not plaintext:
        raise MalformedDocument("refusing to encrypt empty plaintext")
    header = f"{contract}|{transaction}".encode("utf-8")
    if deterministic:
        r = _derive_r(public, plaintext, header)
    else:
        if rng is None:
            raise InvalidConfig("encrypt needs an rng unless deterministic")
        r = rng.randrange(1, Q)
    c1 = pow(G, r, P)
    kem = pow(public, r, P)
    sym = _sym_key(c1, kem)
    body = bytes(a ^ b for a, b in zip(plaintext, _stream(sym, len(plaintext))))
    mac = _mac(sym, header, body)
    raw = pack_envelope(scheme_tag, contract, transaction, _i2b(c1), mac, body)
    return EncryptedKey(raw, scheme_tag)


def _open_envelope(ct: EncryptedKey) -> Envelope:
    env = unpack_envelope(ct.ciphertext)
    if env.scheme_tag != ct.scheme_tag:
        raise MalformedDocument("scheme tag disagrees with envelope")
    return env


def _recover(env: Envelope, kem: int) -> bytes:
    c1 = _b2i(env.c1)
    sym = _sym_key(c1, kem)
    header = f"{env.contract}|{env.transaction}".encode("utf-8")
    if _mac(sym, header, env.body) != env.mac:
        raise UndecryptableCiphertext("integrity check failed")
    return bytes(a ^ b for a, b in zip(env.body, _stream(sym, len(env.body))))


def decrypt(ct: EncryptedKey, secret: int) -> bytes:
    try:
        env = _open_envelope(ct)
        kem = pow(_b2i(env.c1), secret, P)
    except MalformedDocument as exc:
        raise UndecryptableCiphertext(str(exc)) from exc
    return _recover(env, kem)


def threshold_keygen(cfg: ThresholdConfig, seed: int) -> Tuple[ThresholdPublic, List[ThresholdShare]]:
    rng = random.Random(f"dvp-threshold-keygen:{seed}:{cfg.n}:{cfg.k}")
    coeffs = [rng.randrange(1, Q) for _ in range(cfg.k)]
    shares = []
    for index in range(1, cfg.n + 1):
        acc = 0
        for j, coeff in enumerate(coeffs):
            acc = (acc + coeff * pow(index, j, Q)) % Q
        shares.append(ThresholdShare(index, acc))
    public = ThresholdPublic(
        cfg, pow(G, coeffs[0], P), tuple(pow(G, c, P) for c in coeffs)
    )
    return public, shares


def partial_decrypt(ct: EncryptedKey, share: ThresholdShare, sender: str) -> PartialDecryption:
    if ct.scheme_tag != SCHEME_THRESHOLD:
        raise SchemeMismatch("partial decryption needs a threshold ciphertext")
    env = _open_envelope(ct)
    c1 = _b2i(env.c1)
    value = pow(c1, share.value, P)
    # Chaum-Pedersen proof of log_G(g^share) == log_c1(value), with a
    # deterministic nonce so identical inputs give identical partials.
    nonce = _hash_to_scalar(b"dvp-nonce", share.value.to_bytes(64, "big"), env.c1, sender.encode())
    nonce = nonce or 1
    a1 = pow(G, nonce, P)
    a2 = pow(c1, nonce, P)
    commitment = pow(G, share.value, P)
    challenge = _hash_to_scalar(
        b"dvp-dleq", _i2b(c1), _i2b(commitment), _i2b(value), _i2b(a1), _i2b(a2)
    )
    response = (nonce + challenge * share.value) % Q
    return PartialDecryption(share.index, value, sender, (challenge, response))


def verify_partial(partial: PartialDecryption, ct: EncryptedKey, public: ThresholdPublic) -> bool:
    try:
        env = _open_envelope(ct)
    except MalformedDocument:
        return False
    if not 1 <= partial.share_index <= public.config.n:
        return False
    c1 = _b2i(env.c1)
    commitment = public.share_commitment(partial.share_index)
    challenge, response = partial.proof
    challenge %= Q
    inv_e = Q - challenge
    a1 = pow(G, response, P) * pow(commitment, inv_e, P) % P
    a2 = pow(c1, response, P) * pow(partial.share_value, inv_e, P) % P
    expected = _hash_to_scalar(
        b"dvp-dleq", _i2b(c1), _i2b(commitment), _i2b(partial.share_value), _i2b(a1), _i2b(a2)
    )
    return expected == challenge


def _lagrange_at_zero(indices: List[int]) -> Dict[int, int]:
    coeffs = {}
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num = num * j % Q
                den = den * ((j - i) % Q) % Q
        coeffs[i] = num * pow(den, Q - 2, Q) % Q
    return coeffs


def combine(
    partials: Iterable[PartialDecryption], ct: EncryptedKey, public: ThresholdPublic
) -> bytes:
    """Reconstruct the plaintext from >= k verified partial decryptions."""
    if ct.scheme_tag != SCHEME_THRESHOLD:
        raise SchemeMismatch("combine needs a threshold ciphertext")
    by_index: Dict[int, PartialDecryption] = {}
    for partial in partials:
        by_index.setdefault(partial.share_index, partial)
    if len(by_index) < public.config.k:
        raise InsufficientQuorum(
            f"have {len(by_index)} distinct shares, need {public.config.k}"
        )
    for partial in by_index.values():
        if not verify_partial(partial, ct, public):
            raise InvalidShare(f"share {partial.share_index} failed verification")
    chosen = sorted(by_index)[: public.config.k]
    lagrange = _lagrange_at_zero(chosen)
    env = _open_envelope(ct)
    kem = 1
    for i in chosen:
        kem = kem * pow(by_index[i].share_value, lagrange[i], P) % P
    return _recover(env, kem)
