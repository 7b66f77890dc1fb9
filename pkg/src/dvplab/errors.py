"""Shared exception taxonomy.

Contract-level errors derive from ContractError; the chain engine converts
them into rejected calls (state rolled back, arguments already leaked).
Everything else is raised to the caller directly.
"""


class DvpError(Exception):
    """Base class for all errors raised by this package."""


class MalformedDocument(DvpError):
    """A key document (XML, canonical text or envelope) failed to parse."""


class InvalidConfig(DvpError):
    """Bad threshold/timeout parameters."""


class SchemeMismatch(DvpError):
    """Operation applied to a ciphertext of the wrong scheme."""


class UndecryptableCiphertext(DvpError):
    """Ciphertext does not decrypt under this key material (or is corrupt)."""


class InsufficientQuorum(DvpError):
    """Fewer than k distinct partial decryptions supplied."""


class InvalidShare(DvpError):
    """A partial decryption failed verification against its commitment."""


class EligibilityMismatch(DvpError):
    """Decryption context does not match the contract/transaction inside K."""


class UnconstructibleArgument(DvpError):
    """A party tried to pass a value it has never observed."""


class ScenarioError(DvpError):
    """Bad scenario file or run configuration."""


class TraceError(DvpError):
    """Bad trace file (parse error, version mismatch, truncation)."""


class ContractError(DvpError):
    """Base class for errors that reject a chain call."""


class WrongPhase(ContractError):
    pass


class DuplicateId(ContractError):
    pass


class ZeroAmount(ContractError):
    pass


class ArgumentMismatch(ContractError):
    pass


class UnauthorizedCaller(ContractError):
    pass


class InsufficientBalance(ContractError):
    pass


class HashMismatch(ContractError):
    pass


class UnauthorizedOracle(ContractError):
    pass


class DuplicatePartial(ContractError):
    pass


class TooEarly(ContractError):
    pass


class UnknownMethod(ContractError):
    pass
