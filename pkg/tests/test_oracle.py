import random

import pytest

from dvplab import crypto
from dvplab.errors import EligibilityMismatch, UndecryptableCiphertext
from dvplab.keycodec import (
    ContractRef,
    EncryptedKey,
    ReleaseKey,
    TxId,
    canonical_serialize,
)
from dvplab.oracle import (
    DecryptionOracle,
    OracleConfig,
    OracleContext,
    OracleService,
    ThresholdOracleNode,
    key_to_text,
    make_committer,
)

REF_A = ContractRef.parse("eip155:2:0x" + "ab" * 20)
REF_B = ContractRef.parse("eip155:2:0x" + "cd" * 20)


def ctx(ref, tx):
    return OracleContext(caller_contract=ref, caller_transaction=TxId(tx))


@pytest.fixture
def oracle():
    return DecryptionOracle.generate(99)


@pytest.fixture
def rng():
    return random.Random(1234)


class TestIssuanceAndVerify:
    def test_verify_echoes_issuance(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        result = oracle.verify(issued.encrypted)
        assert result.contract == REF_A
        assert result.transaction == TxId(7)
        assert result.hashed == issued.hashed

    def test_issuances_are_fresh(self, oracle, rng):
        a = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        b = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        assert a.encrypted.text() != b.encrypted.text()
        assert a.hashed != b.hashed

    def test_corrupted_ciphertext_fails_verify(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        flip = random.Random(5)
        for _ in range(30):
            raw = bytearray(issued.encrypted.ciphertext)
            raw[flip.randrange(len(raw))] ^= 1 << flip.randrange(8)
            with pytest.raises(UndecryptableCiphertext):
                oracle.verify(EncryptedKey(bytes(raw), issued.encrypted.scheme_tag))

    def test_wrong_oracle_fails_verify(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        stranger = DecryptionOracle.generate(100)
        with pytest.raises(UndecryptableCiphertext):
            stranger.verify(issued.encrypted)

    def test_verification_never_contains_the_secret(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        doc = oracle.decrypt(issued.encrypted, ctx(REF_A, 7))
        secret_b64 = canonical_serialize(doc).decode().split("\n")[2]
        result = oracle.verify(issued.encrypted)
        assert secret_b64 not in result.hashed
        assert secret_b64 not in result.contract.text()
        assert secret_b64 not in issued.hashed


class TestEligibility:
    def test_matching_context_returns_full_key(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        doc = oracle.decrypt(issued.encrypted, ctx(REF_A, 7))
        assert isinstance(doc, ReleaseKey)
        assert doc.contract == REF_A
        assert doc.transaction == TxId(7)

    def test_wrong_transaction_rejected(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        with pytest.raises(EligibilityMismatch):
            oracle.decrypt(issued.encrypted, ctx(REF_A, 8))

    def test_wrong_contract_rejected(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        with pytest.raises(EligibilityMismatch):
            oracle.decrypt(issued.encrypted, ctx(REF_B, 7))

    def test_checks_can_be_disabled(self, rng):
        lax = DecryptionOracle.generate(99, OracleConfig(eligibility_checks=False))
        issued = lax.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        doc = lax.decrypt(issued.encrypted, ctx(REF_B, 9))
        assert doc.contract == REF_A


class TestEventLoop:
    def test_success_reaction_submits_release(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        reaction = oracle.on_event(
            "TransferKeyRequested", (7, issued.encrypted.text()), ctx(REF_A, 7)
        )
        assert reaction.submit is not None
        method, args = reaction.submit
        assert method == "releaseKey"
        assert args[0] == 7
        assert oracle.config.hash_eq_enc is False
        from dvplab.keycodec import hash_text

        assert hash_text(args[1]) == issued.hashed

    def test_foreign_event_is_dropped(self, oracle, rng):
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        reaction = oracle.on_event(
            "TransferKeyRequested", (7, issued.encrypted.text()), ctx(REF_B, 7)
        )
        assert reaction.submit is None
        assert "EligibilityMismatch" in reaction.note

    def test_other_events_ignored(self, oracle):
        reaction = oracle.on_event("TransferIncepted", (7, "x"), ctx(REF_A, 7))
        assert reaction.submit is None

    def test_threshold_nodes_emit_partials(self, rng):
        service = OracleService.threshold(crypto.ThresholdConfig(n=3, k=2), 17)
        issued = service.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        submissions = []
        for name in service.node_names():
            reaction = service.node(name).on_event(
                "TransferKeyRequested", (7, issued.encrypted.text()), ctx(REF_A, 7)
            )
            assert reaction.submit is not None
            submissions.append(reaction.submit[1][1])
        parsed = [crypto.PartialDecryption.from_text(t) for t in submissions]
        assert {p.share_index for p in parsed} == {1, 2, 3}
        combined = service.combine_partial_texts(issued.encrypted.text(), submissions[:2])
        from dvplab.keycodec import hash_text

        assert hash_text(combined) == issued.hashed

    def test_threshold_node_eligibility_gate(self, rng):
        service = OracleService.threshold(crypto.ThresholdConfig(n=3, k=2), 17)
        issued = service.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        node = service.node("oracle-1")
        reaction = node.on_event(
            "TransferKeyRequested", (7, issued.encrypted.text()), ctx(REF_A, 8)
        )
        assert reaction.submit is None


class TestStatelessness:
    def test_single_node_holds_only_key_material_and_config(self, oracle, rng):
        before = dict(vars(oracle))
        assert set(before) == {"_keypair", "config"}
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        oracle.verify(issued.encrypted)
        oracle.decrypt(issued.encrypted, ctx(REF_A, 7))
        oracle.on_event("TransferKeyRequested", (7, issued.encrypted.text()), ctx(REF_A, 7))
        assert vars(oracle) == before

    def test_threshold_node_holds_only_share_and_config(self, rng):
        service = OracleService.threshold(crypto.ThresholdConfig(n=2, k=2), 3)
        node = service.node("oracle-1")
        assert set(vars(node)) == {"name", "share", "public", "config"}
        before = dict(vars(node))
        issued = service.request_encrypted_hashed_key(REF_A, TxId(5), rng)
        node.on_event("TransferKeyRequested", (5, issued.encrypted.text()), ctx(REF_A, 5))
        assert vars(node) == before

    def test_same_inputs_same_outputs(self, rng):
        # behaviour is a pure function of key material, ciphertext, context
        a = DecryptionOracle.generate(55)
        b = DecryptionOracle.generate(55)
        issued = a.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        assert a.verify(issued.encrypted) == b.verify(issued.encrypted)
        assert a.decrypt(issued.encrypted, ctx(REF_A, 7)) == b.decrypt(
            issued.encrypted, ctx(REF_A, 7)
        )


class TestHashEqEncMode:
    def test_hashed_field_carries_ciphertext(self, rng):
        config = OracleConfig(hash_eq_enc=True)
        oracle = DecryptionOracle.generate(12, config)
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        assert issued.hashed == issued.encrypted.text()
        assert oracle.verify(issued.encrypted).hashed == issued.hashed

    def test_committer_recomputes_ciphertext_from_key_text(self, rng):
        config = OracleConfig(hash_eq_enc=True)
        oracle = DecryptionOracle.generate(12, config)
        issued = oracle.request_encrypted_hashed_key(REF_A, TxId(7), rng)
        doc = oracle.decrypt(issued.encrypted, ctx(REF_A, 7))
        committer = make_committer(oracle.public_component, "single", config)
        assert committer(key_to_text(doc)) == issued.hashed
        assert committer("garbage").startswith("unmatchable:")

    def test_plain_mode_committer_is_digest(self):
        committer = make_committer(123, "single", OracleConfig())
        from dvplab.keycodec import hash_text

        assert committer("abc") == hash_text("abc")
