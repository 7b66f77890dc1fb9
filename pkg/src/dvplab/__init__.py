"""dvplab: a deterministic two-chain delivery-versus-payment laboratory.

Implements a stateless key-release settlement protocol end to end
(locking and decryption contract state machines, a decryption oracle with
single and k-of-n threshold modes, the release-key document formats), the
HTLC and double-locking baselines it is compared against, and a bounded
interleaving analyzer that checks atomicity and reproduces the baselines'
race-condition attacks.
"""

__version__ = "0.1.0"
