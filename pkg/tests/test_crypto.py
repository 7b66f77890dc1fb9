import itertools
import random

import pytest

from dvplab import crypto
from dvplab.errors import (
    InsufficientQuorum,
    InvalidConfig,
    InvalidShare,
    SchemeMismatch,
    UndecryptableCiphertext,
)
from dvplab.keycodec import SCHEME_SINGLE, SCHEME_THRESHOLD, EncryptedKey


def test_group_parameters_are_sound():
    assert pow(crypto.G, crypto.Q, crypto.P) == 1
    assert crypto.G != 1
    # q is prime enough for our use: check small factors
    for small in (2, 3, 5, 7, 11, 13):
        assert crypto.Q % small != 0


class TestKeygen:
    def test_same_seed_same_pair(self):
        assert crypto.keygen(42) == crypto.keygen(42)

    def test_different_seeds_differ(self):
        assert crypto.keygen(1).public_component != crypto.keygen(2).public_component

    def test_roundtrip_on_fresh_pair(self):
        pair = crypto.keygen(7)
        rng = random.Random(0)
        ct = crypto.encrypt(b"x" * 32, pair.public_component, rng)
        assert crypto.decrypt(ct, pair.secret_component) == b"x" * 32


class TestEncrypt:
    def setup_method(self):
        self.pair = crypto.keygen(3)
        self.rng = random.Random(33)

    def test_decrypt_inverts_encrypt(self):
        for size in (1, 31, 32, 100, 1000):
            message = random.Random(size).randbytes(size)
            ct = crypto.encrypt(message, self.pair.public_component, self.rng)
            assert crypto.decrypt(ct, self.pair.secret_component) == message

    def test_probabilistic(self):
        message = b"same plaintext, fresh randomness"
        a = crypto.encrypt(message, self.pair.public_component, self.rng)
        b = crypto.encrypt(message, self.pair.public_component, self.rng)
        assert a.ciphertext != b.ciphertext

    def test_avalanche_no_shared_body_bytes(self):
        # flipping one plaintext bit must not leave recognizable structure:
        # same randomness stream is never reused, so compare across many runs
        message = bytearray(b"a" * 64)
        base = crypto.encrypt(bytes(message), self.pair.public_component, self.rng)
        message[0] ^= 1
        flipped = crypto.encrypt(bytes(message), self.pair.public_component, self.rng)
        # headers agree (routing metadata), the rest must not be identical
        assert base.ciphertext[:4] == flipped.ciphertext[:4]
        bodies = (base.ciphertext[-64:], flipped.ciphertext[-64:])
        matching = sum(x == y for x, y in zip(*bodies))
        assert matching < 16  # ~64 expected matches per 256 under independence

    def test_empty_plaintext_refused(self):
        with pytest.raises(Exception):
            crypto.encrypt(b"", self.pair.public_component, self.rng)

    def test_wrong_key_fails(self):
        other = crypto.keygen(4)
        ct = crypto.encrypt(b"m" * 32, self.pair.public_component, self.rng)
        with pytest.raises(UndecryptableCiphertext):
            crypto.decrypt(ct, other.secret_component)

    def test_bit_flip_detected(self):
        ct = crypto.encrypt(b"m" * 32, self.pair.public_component, self.rng)
        rng = random.Random(8)
        for _ in range(40):
            raw = bytearray(ct.ciphertext)
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            corrupted = EncryptedKey(bytes(raw), ct.scheme_tag)
            with pytest.raises(UndecryptableCiphertext):
                crypto.decrypt(corrupted, self.pair.secret_component)

    def test_deterministic_mode_recomputable(self):
        message = b"d" * 40
        a = crypto.encrypt(message, self.pair.public_component, None, deterministic=True)
        b = crypto.encrypt(message, self.pair.public_component, None, deterministic=True)
        assert a.ciphertext == b.ciphertext
        assert crypto.decrypt(a, self.pair.secret_component) == message


class TestThreshold:
    def test_config_validation(self):
        with pytest.raises(InvalidConfig):
            crypto.ThresholdConfig(n=3, k=4)
        with pytest.raises(InvalidConfig):
            crypto.ThresholdConfig(n=0, k=0)

    def test_degenerate_one_of_one(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=1, k=1), 5)
        rng = random.Random(1)
        ct = crypto.encrypt(b"deg" * 12, public.public_component, rng, SCHEME_THRESHOLD)
        partial = crypto.partial_decrypt(ct, shares[0], "only")
        assert crypto.combine([partial], ct, public) == b"deg" * 12

    def test_two_of_three_subset_algebra(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=3, k=2), 9)
        rng = random.Random(2)
        message = random.Random(99).randbytes(48)
        ct = crypto.encrypt(message, public.public_component, rng, SCHEME_THRESHOLD)
        partials = [crypto.partial_decrypt(ct, s, f"o{s.index}") for s in shares]
        for subset in itertools.combinations(partials, 2):
            assert crypto.combine(list(subset), ct, public) == message
        for lone in partials:
            with pytest.raises(InsufficientQuorum):
                crypto.combine([lone], ct, public)

    def test_exhaustive_subsets_up_to_n4(self):
        rng = random.Random(6)
        for n in range(1, 5):
            for k in range(1, n + 1):
                public, shares = crypto.threshold_keygen(
                    crypto.ThresholdConfig(n=n, k=k), seed=n * 10 + k
                )
                message = rng.randbytes(40)
                ct = crypto.encrypt(message, public.public_component, rng, SCHEME_THRESHOLD)
                partials = [crypto.partial_decrypt(ct, s, f"o{s.index}") for s in shares]
                for size in range(0, n + 1):
                    for subset in itertools.combinations(partials, size):
                        if size >= k:
                            assert crypto.combine(list(subset), ct, public) == message
                        else:
                            with pytest.raises(InsufficientQuorum):
                                crypto.combine(list(subset), ct, public)

    def test_partials_deterministic(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=3, k=2), 1)
        ct = crypto.encrypt(b"p" * 32, public.public_component, random.Random(3), SCHEME_THRESHOLD)
        assert crypto.partial_decrypt(ct, shares[0], "a") == crypto.partial_decrypt(ct, shares[0], "a")

    def test_duplicate_indices_do_not_count(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=3, k=2), 2)
        ct = crypto.encrypt(b"q" * 32, public.public_component, random.Random(4), SCHEME_THRESHOLD)
        p1 = crypto.partial_decrypt(ct, shares[0], "a")
        p1bis = crypto.partial_decrypt(ct, shares[0], "b")
        with pytest.raises(InsufficientQuorum):
            crypto.combine([p1, p1bis], ct, public)

    def test_single_scheme_rejected_for_partials(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=2, k=2), 3)
        pair = crypto.keygen(5)
        ct = crypto.encrypt(b"s" * 32, pair.public_component, random.Random(5), SCHEME_SINGLE)
        with pytest.raises(SchemeMismatch):
            crypto.partial_decrypt(ct, shares[0], "a")

    def test_tampered_share_detected(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=3, k=2), 7)
        ct = crypto.encrypt(b"t" * 32, public.public_component, random.Random(6), SCHEME_THRESHOLD)
        good = crypto.partial_decrypt(ct, shares[0], "a")
        evil = crypto.PartialDecryption(
            good.share_index, good.share_value * crypto.G % crypto.P, good.sender, good.proof
        )
        other = crypto.partial_decrypt(ct, shares[1], "b")
        assert crypto.verify_partial(good, ct, public)
        assert not crypto.verify_partial(evil, ct, public)
        with pytest.raises(InvalidShare):
            crypto.combine([evil, other], ct, public)

    def test_subset_independence(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=4, k=2), 8)
        message = b"independent of the chosen quorum!"
        ct = crypto.encrypt(message, public.public_component, random.Random(7), SCHEME_THRESHOLD)
        partials = [crypto.partial_decrypt(ct, s, f"o{s.index}") for s in shares]
        results = {
            crypto.combine(list(subset), ct, public)
            for subset in itertools.combinations(partials, 2)
        }
        assert results == {message}

    def test_partial_text_roundtrip(self):
        public, shares = crypto.threshold_keygen(crypto.ThresholdConfig(n=2, k=2), 4)
        ct = crypto.encrypt(b"r" * 32, public.public_component, random.Random(9), SCHEME_THRESHOLD)
        partial = crypto.partial_decrypt(ct, shares[1], "node")
        assert crypto.PartialDecryption.from_text(partial.to_text()) == partial
