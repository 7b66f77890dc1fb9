import random

import pytest

from dvplab.errors import MalformedDocument
from dvplab.keycodec import (
    ContractRef,
    EncryptedKey,
    HashedKey,
    ReleaseKey,
    TxId,
    canonical_deserialize,
    canonical_serialize,
    from_xml,
    hash_key,
    hash_text,
    looks_like_key_text,
    to_xml,
)

SAMPLE_CONTRACT = "eip155:1:0x1234567890abcdef1234567890abcdef12345678"
SAMPLE_PAYLOAD = "zZsnePj9ZLPkelpSKUUcg93VGNOPC2oBwX1oCcVwa+U="

SAMPLE_XML = (
    '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>\n'
    f'<releaseKey contract="{SAMPLE_CONTRACT}" transaction="3141" '
    'xmlns="http://finnmath.net/erc/ILockingContract">\n'
    "    <!-- random data -->\n"
    f"    {SAMPLE_PAYLOAD}\n"
    "</releaseKey>\n"
)


def random_key(rng):
    return ReleaseKey(
        ContractRef("eip155", str(rng.randrange(1, 100)), "0x" + rng.getrandbits(160).to_bytes(20, "big").hex()),
        TxId(rng.randrange(0, 2**64)),
        rng.randbytes(32),
    )


class TestContractRef:
    def test_parse_and_text_roundtrip(self):
        ref = ContractRef.parse(SAMPLE_CONTRACT)
        assert ref.namespace == "eip155"
        assert ref.chain_id == "1"
        assert ref.text() == SAMPLE_CONTRACT

    def test_mixed_case_address_normalizes(self):
        ref = ContractRef.parse("eip155:1:0x1234567890ABCDEF1234567890abcdef12345678")
        assert ref.address == "0x1234567890abcdef1234567890abcdef12345678"

    def test_exactly_two_colons(self):
        with pytest.raises(MalformedDocument):
            ContractRef.parse("eip155:1:2:0x1234567890abcdef1234567890abcdef12345678")
        with pytest.raises(MalformedDocument):
            ContractRef.parse("eip155-1")

    def test_bad_pieces(self):
        with pytest.raises(MalformedDocument):
            ContractRef("EIP", "1", "0x" + "a" * 40)
        with pytest.raises(MalformedDocument):
            ContractRef("eip155", "01", "0x" + "a" * 40)
        with pytest.raises(MalformedDocument):
            ContractRef("eip155", "1", "0x" + "a" * 39)


class TestTxId:
    def test_minimal_decimal(self):
        assert TxId.parse("0").value == 0
        assert TxId.parse("3141").text() == "3141"
        with pytest.raises(MalformedDocument):
            TxId.parse("007")
        with pytest.raises(MalformedDocument):
            TxId.parse("-1")

    def test_range(self):
        TxId(2**256 - 1)
        with pytest.raises(MalformedDocument):
            TxId(2**256)


class TestCanonicalSerialization:
    def test_sample_fields_layout(self):
        key = ReleaseKey(
            ContractRef.parse(SAMPLE_CONTRACT),
            TxId(3141),
            __import__("base64").b64decode(SAMPLE_PAYLOAD),
        )
        data = canonical_serialize(key)
        lines = data.decode("ascii").split("\n")
        assert lines == [SAMPLE_CONTRACT, "3141", SAMPLE_PAYLOAD]

    def test_deterministic(self):
        rng = random.Random(7)
        key = random_key(rng)
        assert canonical_serialize(key) == canonical_serialize(key)

    def test_thousand_random_keys_distinct(self):
        rng = random.Random(42)
        serialized = {canonical_serialize(random_key(rng)) for _ in range(1000)}
        assert len(serialized) == 1000

    def test_roundtrip(self):
        rng = random.Random(5)
        for _ in range(50):
            key = random_key(rng)
            assert canonical_deserialize(canonical_serialize(key)) == key

    def test_value_must_be_32_bytes(self):
        with pytest.raises(MalformedDocument):
            ReleaseKey(ContractRef.parse(SAMPLE_CONTRACT), TxId(1), b"short")


class TestHashing:
    def test_deterministic_and_32_bytes(self):
        rng = random.Random(1)
        for _ in range(20):
            key = random_key(rng)
            digest = hash_key(key)
            assert digest == hash_key(key)
            assert len(digest.digest) == 32

    def test_no_collisions_over_1000_pairs(self):
        rng = random.Random(9)
        digests = set()
        for _ in range(1000):
            digests.add(hash_key(random_key(rng)).text())
        assert len(digests) == 1000

    def test_hash_text_matches_hash_key_on_canonical_text(self):
        rng = random.Random(3)
        key = random_key(rng)
        text = canonical_serialize(key).decode("ascii")
        assert hash_text(text) == hash_key(key).text()


class TestXml:
    def test_paper_sample_parses(self):
        key = from_xml(SAMPLE_XML)
        assert key.contract.text() == SAMPLE_CONTRACT
        assert key.transaction.value == 3141
        assert len(key.value) == 32

    def test_roundtrip_identity(self):
        rng = random.Random(11)
        for _ in range(100):
            key = random_key(rng)
            assert from_xml(to_xml(key)) == key

    def test_missing_contract_attribute(self):
        bad = SAMPLE_XML.replace(f'contract="{SAMPLE_CONTRACT}" ', "")
        with pytest.raises(MalformedDocument):
            from_xml(bad)

    def test_missing_transaction_attribute(self):
        bad = SAMPLE_XML.replace(' transaction="3141"', "")
        with pytest.raises(MalformedDocument):
            from_xml(bad)

    def test_bad_base64_body(self):
        bad = SAMPLE_XML.replace(SAMPLE_PAYLOAD, "&amp;&amp;not-base64!!")
        with pytest.raises(MalformedDocument):
            from_xml(bad)

    def test_non_numeric_transaction(self):
        bad = SAMPLE_XML.replace('transaction="3141"', 'transaction="abc"')
        with pytest.raises(MalformedDocument):
            from_xml(bad)

    def test_wrong_root(self):
        with pytest.raises(MalformedDocument):
            from_xml("<nope/>")

    def test_unparseable(self):
        with pytest.raises(MalformedDocument):
            from_xml("this is not xml")

    def test_namespace_preserved_verbatim(self):
        rng = random.Random(2)
        text = to_xml(random_key(rng))
        assert 'xmlns="http://finnmath.net/erc/ILockingContract"' in text


class TestEncryptedKeyText:
    def test_from_text_rejects_garbage(self):
        with pytest.raises(MalformedDocument):
            EncryptedKey.from_text("!!!not-base64!!!")
        with pytest.raises(MalformedDocument):
            EncryptedKey.from_text("YWJj")  # valid base64, not an envelope

    def test_hashed_key_text_roundtrip(self):
        digest = HashedKey(bytes(range(32)))
        assert HashedKey.parse(digest.text()) == digest


def test_looks_like_key_text():
    rng = random.Random(4)
    key = random_key(rng)
    assert looks_like_key_text(canonical_serialize(key).decode("ascii"))
    assert not looks_like_key_text("garbage")
    assert not looks_like_key_text("a\nb\nc")
