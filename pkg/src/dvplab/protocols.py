"""Honest-party orchestration of the protocols under study.

A Scenario describes one configured run: which protocol, which branch the
honest parties intend, which chain hosts the locking contract, the oracle
mode, amounts and seeds.  ``build`` assembles the world (chains, parties,
contracts, oracle, key issuance) and ``run`` drives it to quiescence with
the honest strategies, checking the terminal outcome.

Strategies are stateless: they look at the world and emit the next action
their party would take.  The eager driver applies them directly; the
analyzer reuses the same strategies (with ``exploration=True``, which also
enables the defensive options) as decision branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from . import crypto
from .baselines import (
    DoubleLockAssetContract,
    DoubleLockPaymentContract,
    HtlcContract,
    TimedDecryptionContract,
    WrappedLockingContract,
    WRAPPER_CANCELLED,
    HTLC_LOCKED,
)
from .chainsim import World, address_for
from .decryption import (
    DecryptionContract,
    EVENT_KEY_RELEASED,
    INCEPTED as DEC_INCEPTED,
    RELEASE_PUBLISH,
    RELEASE_RECONSTRUCT,
    RELEASE_SINGLE,
)
from .errors import DvpError, ScenarioError, UndecryptableCiphertext, MalformedDocument
from .keycodec import ContractRef, EncryptedKey, TxId
from .locking import CANCELLED, INCEPTED, LOCKED, LockingContract
from .oracle import OracleConfig, OracleService

PROTOCOLS = ("erc7573", "replay", "htlc", "htlc_wrapper", "double_lock")
BRANCHES = ("success", "seller_cancel", "buyer_cancel_pre_lock", "payment_failure")
ADVERSARIES = ("none", "buyer", "seller", "both")


@dataclass
class Scenario:
    protocol: str = "erc7573"
    branch: str = "success"
    locking_side: str = "asset"
    oracle_mode: str = "single"            # "single" or "threshold:k:n"
    threshold_release: str = RELEASE_RECONSTRUCT
    hash_eq_enc: bool = False
    eligibility: bool = True
    adversary: str = "none"
    seed: int = 0
    tx_id: int = 7
    extra_tx_id: int = 8
    amount_asset: int = 10
    amount_payment: int = 100
    buyer_payment_funds: Optional[int] = None
    seller_asset_funds: Optional[int] = None
    t1: int = 3
    t2: int = 6
    max_ticks: Optional[int] = None
    depth: int = 24
    max_states: Optional[int] = None

    _BOOLS = ("hash_eq_enc", "eligibility")
    _INTS = (
        "seed", "tx_id", "extra_tx_id", "amount_asset", "amount_payment",
        "buyer_payment_funds", "seller_asset_funds", "t1", "t2", "max_ticks",
        "depth", "max_states",
    )

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ScenarioError(f"unknown protocol {self.protocol!r}")
        if self.branch not in BRANCHES:
            raise ScenarioError(f"unknown branch {self.branch!r}")
        if self.locking_side not in ("asset", "payment"):
            raise ScenarioError(f"locking_side must be asset or payment")
        if self.adversary not in ADVERSARIES:
            raise ScenarioError(f"unknown adversary {self.adversary!r}")
        if self.threshold_release not in (RELEASE_RECONSTRUCT, RELEASE_PUBLISH):
            raise ScenarioError(f"unknown threshold_release {self.threshold_release!r}")
        self.parse_oracle_mode()
        if self.amount_asset <= 0 or self.amount_payment <= 0:
            raise ScenarioError("amounts must be positive")
        if self.tx_id == self.extra_tx_id:
            raise ScenarioError("tx_id and extra_tx_id must differ")
        if self.protocol in ("htlc", "htlc_wrapper") and self.t1 >= self.t2:
            raise ScenarioError("t1 must be smaller than t2")

    def parse_oracle_mode(self) -> Optional[crypto.ThresholdConfig]:
        if self.oracle_mode == "single":
            return None
        parts = self.oracle_mode.split(":")
        if len(parts) == 3 and parts[0] == "threshold":
            try:
                k, n = int(parts[1]), int(parts[2])
            except ValueError:
                raise ScenarioError(f"bad oracle_mode {self.oracle_mode!r}")
            try:
                return crypto.ThresholdConfig(n=n, k=k)
            except DvpError as exc:
                raise ScenarioError(str(exc))
        raise ScenarioError(f"bad oracle_mode {self.oracle_mode!r}")

    def ticks_budget(self) -> int:
        if self.max_ticks is not None:
            return self.max_ticks
        if self.protocol in ("htlc", "htlc_wrapper"):
            return self.t2 + 1
        return 0

    def to_dict(self) -> dict:
        out = {}
        for name in (
            "protocol", "branch", "locking_side", "oracle_mode", "threshold_release",
            "hash_eq_enc", "eligibility", "adversary", "seed", "tx_id", "extra_tx_id",
            "amount_asset", "amount_payment", "buyer_payment_funds",
            "seller_asset_funds", "t1", "t2", "max_ticks", "depth", "max_states",
        ):
            out[name] = getattr(self, name)
        return out

    @classmethod
    def from_dict(cls, data: dict, source: str = "<dict>") -> "Scenario":
        scenario = cls()
        for key, raw in data.items():
            if not hasattr(scenario, key) or key.startswith("_"):
                raise ScenarioError(f"{source}: unknown scenario key {key!r}")
            if key in cls._BOOLS:
                if isinstance(raw, bool):
                    value = raw
                elif str(raw).lower() in ("1", "true", "on", "yes"):
                    value = True
                elif str(raw).lower() in ("0", "false", "off", "no"):
                    value = False
                else:
                    raise ScenarioError(f"{source}: bad boolean for {key}: {raw!r}")
            elif key in cls._INTS:
                if raw is None or raw == "none":
                    value = None
                else:
                    try:
                        value = int(raw)
                    except (TypeError, ValueError):
                        raise ScenarioError(f"{source}: bad integer for {key}: {raw!r}")
            else:
                value = str(raw)
            setattr(scenario, key, value)
        scenario.validate()
        return scenario

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        data = {}
        try:
            with open(path, "r", encoding="utf-8") as handle:
                for lineno, line in enumerate(handle, start=1):
                    stripped = line.strip()
                    if not stripped or stripped.startswith("#"):
                        continue
                    if "=" not in stripped:
                        raise ScenarioError(f"{path}:{lineno}: expected key=value")
                    key, _, value = stripped.partition("=")
                    key, value = key.strip(), value.strip()
                    if key in data:
                        raise ScenarioError(f"{path}:{lineno}: duplicate key {key!r}")
                    data[key] = value
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario file: {exc}") from exc
        return cls.from_dict(data, source=path)


@dataclass(frozen=True)
class KeyPairInfo:
    enc: str
    hashed: str
    requester: str


@dataclass
class Context:
    """Static facts about a built world: bindings, amounts, baselines."""

    scenario: Scenario
    lock_chain: str = "asset"
    dec_chain: str = "payment"
    lock_contract: str = ""
    dec_contract: str = ""
    lock_to: str = "buyer"
    lock_from: str = "seller"
    lock_amount: int = 0
    dec_amount: int = 0
    success: Optional[KeyPairInfo] = None
    failure: Optional[KeyPairInfo] = None
    htlc_asset: str = ""
    htlc_payment: str = ""
    secrets: Dict[str, str] = field(default_factory=dict)
    secret_holders: Dict[str, str] = field(default_factory=dict)
    hashes: Dict[str, str] = field(default_factory=dict)
    initial_balances: Dict[str, Dict[str, int]] = field(default_factory=dict)

    @property
    def tx_id(self) -> int:
        return self.scenario.tx_id

    def party_addr(self, world: World, party: str, chain: str) -> str:
        return world.parties[party].addresses[chain]


def _fund(world: World, ctx: Context) -> None:
    scenario = ctx.scenario
    seller_assets = scenario.seller_asset_funds
    if seller_assets is None:
        seller_assets = scenario.amount_asset
    buyer_funds = scenario.buyer_payment_funds
    if buyer_funds is None:
        buyer_funds = 0 if scenario.branch == "payment_failure" else scenario.amount_payment
    world.chains["asset"].ledger.credit(ctx.party_addr(world, "seller", "asset"), seller_assets)
    world.chains["payment"].ledger.credit(ctx.party_addr(world, "buyer", "payment"), buyer_funds)
    ctx.initial_balances = {
        party: {
            chain: world.chains[chain].ledger.balance(world.parties[party].addresses[chain])
            for chain in world.chains
        }
        for party in world.parties
    }


def _oracle_service(scenario: Scenario) -> OracleService:
    config = OracleConfig(
        hash_eq_enc=scenario.hash_eq_enc, eligibility_checks=scenario.eligibility
    )
    threshold = scenario.parse_oracle_mode()
    if threshold is None:
        return OracleService.single(scenario.seed, config)
    return OracleService.threshold(threshold, scenario.seed, config)


def _fresh_secret(world: World, label: str) -> str:
    return f"secret-{label}:{world.rng.getrandbits(128):032x}"


def _submit_exec(world: World, party: str, chain: str, contract: str, method: str, args: tuple):
    seq = world.submit(
        chain, world.parties[party].addresses[chain], contract, method, args, party=party
    )
    call = world.exec_call(seq)
    if call.status != "executed":
        raise DvpError(f"setup call {method} rejected: {call.error}")
    return call


def build(scenario: Scenario) -> Tuple[World, Context]:
    scenario.validate()
    world = World(scenario.seed)
    world.add_chain("asset", "1")
    world.add_chain("payment", "2")
    world.add_party("buyer")
    world.add_party("seller")
    service = _oracle_service(scenario)
    world.set_oracle(service)
    committer = service.committer()
    ctx = Context(scenario=scenario)
    _fund(world, ctx)

    oracle_addrs = set(world.oracle_addresses.values())
    if scenario.protocol in ("erc7573", "replay"):
        ctx.lock_chain = scenario.locking_side
        ctx.dec_chain = "payment" if ctx.lock_chain == "asset" else "asset"
        ctx.lock_to = "buyer" if ctx.lock_chain == "asset" else "seller"
        ctx.lock_from = "seller" if ctx.lock_to == "buyer" else "buyer"
        ctx.lock_amount = (
            scenario.amount_asset if ctx.lock_chain == "asset" else scenario.amount_payment
        )
        ctx.dec_amount = (
            scenario.amount_payment if ctx.dec_chain == "payment" else scenario.amount_asset
        )
        ctx.lock_contract = address_for(f"contract:lock@{ctx.lock_chain}")
        ctx.dec_contract = address_for(f"contract:dec@{ctx.dec_chain}")
        release_mode = RELEASE_SINGLE if service.mode == "single" else scenario.threshold_release
        world.register_contract(ctx.lock_chain, LockingContract(ctx.lock_contract, committer))
        world.register_contract(
            ctx.dec_chain,
            DecryptionContract(
                ctx.dec_contract,
                oracle_addrs,
                release_mode=release_mode,
                threshold_public=service.threshold_public,
            ),
        )
        world.seed_public_knowledge()
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        success = world.request_key(ctx.lock_from, dec_ref, scenario.tx_id)
        failure = world.request_key(ctx.lock_to, dec_ref, scenario.tx_id)
        ctx.success = KeyPairInfo(success.encrypted.text(), success.hashed, ctx.lock_from)
        ctx.failure = KeyPairInfo(failure.encrypted.text(), failure.hashed, ctx.lock_to)
        if scenario.protocol == "replay":
            _setup_replay(world, ctx)
    elif scenario.protocol == "htlc":
        ctx.htlc_asset = address_for("contract:htlc@asset")
        ctx.htlc_payment = address_for("contract:htlc@payment")
        world.register_contract("asset", HtlcContract(ctx.htlc_asset, committer))
        world.register_contract("payment", HtlcContract(ctx.htlc_payment, committer))
        world.seed_public_knowledge()
        secret = _fresh_secret(world, "B")
        ctx.secrets["B"] = secret
        ctx.secret_holders["B"] = "seller"
        ctx.hashes["B"] = committer(secret)
        world._absorb(secret, parties=["seller"])
        world._absorb(ctx.hashes["B"])  # hash agreed off-chain by both parties
    elif scenario.protocol == "htlc_wrapper":
        ctx.lock_chain, ctx.dec_chain = "asset", "payment"
        ctx.lock_to, ctx.lock_from = "buyer", "seller"
        ctx.lock_amount, ctx.dec_amount = scenario.amount_asset, scenario.amount_payment
        ctx.htlc_asset = address_for("contract:htlc@asset")
        ctx.lock_contract = address_for("contract:wrapper@asset")
        ctx.dec_contract = address_for("contract:timed-dec@payment")
        world.register_contract("asset", HtlcContract(ctx.htlc_asset, committer))
        world.register_contract(
            "asset",
            WrappedLockingContract(ctx.lock_contract, committer, ctx.htlc_asset, scenario.t2),
        )
        world.register_contract(
            "payment",
            TimedDecryptionContract(
                ctx.dec_contract, oracle_addrs, scenario.t1, scenario.t2,
                release_mode=RELEASE_SINGLE if service.mode == "single" else scenario.threshold_release,
                threshold_public=service.threshold_public,
            ),
        )
        world.seed_public_knowledge()
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        success = world.request_key(ctx.lock_from, dec_ref, scenario.tx_id)
        failure = world.request_key(ctx.lock_to, dec_ref, scenario.tx_id)
        ctx.success = KeyPairInfo(success.encrypted.text(), success.hashed, ctx.lock_from)
        ctx.failure = KeyPairInfo(failure.encrypted.text(), failure.hashed, ctx.lock_to)
    elif scenario.protocol == "double_lock":
        asset_addr = address_for("contract:dl-asset@asset")
        payment_addr = address_for("contract:dl-payment@payment")
        buyer_asset = ctx.party_addr(world, "buyer", "asset")
        seller_asset = ctx.party_addr(world, "seller", "asset")
        buyer_pay = ctx.party_addr(world, "buyer", "payment")
        seller_pay = ctx.party_addr(world, "seller", "payment")
        world.register_contract(
            "asset",
            DoubleLockAssetContract(asset_addr, committer, buyer_asset, seller_asset,
                                    scenario.amount_asset),
        )
        world.register_contract(
            "payment",
            DoubleLockPaymentContract(payment_addr, committer, buyer_pay, seller_pay,
                                      scenario.amount_payment),
        )
        ctx.htlc_asset = asset_addr      # reused as "the asset-side contract"
        ctx.htlc_payment = payment_addr
        world.seed_public_knowledge()
        holders = {"S": "buyer", "Y": "buyer", "B": "seller", "C": "seller", "X": "seller"}
        for label, holder in holders.items():
            secret = _fresh_secret(world, label)
            ctx.secrets[label] = secret
            ctx.secret_holders[label] = holder
            ctx.hashes[label] = committer(secret)
            world._absorb(secret, parties=[holder])
            world._absorb(ctx.hashes[label])  # hashes exchanged at trade agreement
    return world, ctx


def _setup_replay(world: World, ctx: Context) -> None:
    """Advance an erc7573 world to the locked state the replay attack targets."""
    scenario = ctx.scenario
    tx = scenario.tx_id
    lock_to_addr = ctx.party_addr(world, ctx.lock_to, ctx.lock_chain)
    lock_from_addr = ctx.party_addr(world, ctx.lock_from, ctx.lock_chain)
    dec_from_addr = ctx.party_addr(world, ctx.lock_to, ctx.dec_chain)
    _submit_exec(
        world, ctx.lock_to, ctx.lock_chain, ctx.lock_contract, "inceptTransfer",
        (tx, ctx.lock_amount, lock_from_addr, ctx.failure.hashed, ctx.failure.enc),
    )
    _submit_exec(
        world, ctx.lock_from, ctx.dec_chain, ctx.dec_contract, "inceptTransfer",
        (tx, ctx.dec_amount, dec_from_addr, ctx.success.enc, ctx.failure.enc),
    )
    world.verify_key(ctx.lock_from, ctx.failure.enc)
    world.verify_key(ctx.lock_to, ctx.success.enc)
    _submit_exec(
        world, ctx.lock_from, ctx.lock_chain, ctx.lock_contract, "confirmTransfer",
        (tx, ctx.lock_amount, lock_to_addr, ctx.success.hashed, ctx.success.enc),
    )


# --------------------------------------------------------------------------
# Pure checks shared by strategies and tests
# --------------------------------------------------------------------------


def verify_consistency(
    world: World,
    party: str,
    encrypted_text: str,
    hashed_text: str,
    expected_contract: str,
    expected_tx: int,
) -> bool:
    """True iff the oracle vouches that E(K) belongs to (contract, tx, H(K))."""
    knowledge = world.parties[party].knowledge
    if encrypted_text not in knowledge or hashed_text not in knowledge:
        return False
    try:
        result = world.oracle.verify(EncryptedKey.from_text(encrypted_text))
    except (UndecryptableCiphertext, MalformedDocument):
        return False
    return (
        result.contract.text() == expected_contract
        and result.transaction.value == expected_tx
        and result.hashed == hashed_text
    )


def _lock_record(world: World, ctx: Context):
    contract = world.chains[ctx.lock_chain].contracts[ctx.lock_contract]
    return contract.records.get(ctx.tx_id)


def _dec_record(world: World, ctx: Context):
    contract = world.chains[ctx.dec_chain].contracts[ctx.dec_contract]
    return contract.records.get(ctx.tx_id)


def _has_submitted(world: World, caller: str, contract: str, method: str, args=None) -> bool:
    for call in world.calls:
        if call.caller == caller and call.contract == contract and call.method == method:
            if args is None or call.args == tuple(args):
                return True
    return False


def _verify_recorded(world: World, party: str, encrypted: str) -> bool:
    for action in world.actions:
        if (
            action.get("kind") == "verify"
            and action.get("party") == party
            and action.get("encrypted") == encrypted
        ):
            return True
    return False


def _released_partials(world: World, ctx: Context) -> List[str]:
    texts = []
    for event in world.events.values():
        if event.emitter == ctx.dec_contract and event.name == EVENT_KEY_RELEASED:
            sender, tx_id, text = event.payload[0], event.payload[1], event.payload[2]
            if tx_id == ctx.tx_id and world.value_kinds.get(text) == "partial":
                texts.append(text)
    return sorted(set(texts))


def _submit(party: str, chain: str, contract: str, method: str, args: tuple) -> dict:
    return {
        "kind": "submit", "party": party, "chain": chain,
        "contract": contract, "method": method, "args": list(args),
    }


class Strategy:
    def next_actions(self, world: World, party: str) -> List[dict]:
        raise NotImplementedError


class Erc7573Strategy(Strategy):
    """Honest behaviour for the key-release DvP, parameterized by branch.

    With ``exploration=True`` every legitimate option is offered (pay,
    cancel, claim, reclaim) regardless of the branch script, so the
    analyzer can hand the choice to the search.
    """

    def __init__(self, ctx: Context, branch: Optional[str] = None, exploration: bool = False):
        self.ctx = ctx
        self.branch = branch or ctx.scenario.branch
        self.exploration = exploration
        self.committer = None  # built lazily; needs only public material

    def _commit(self, world: World, text: str) -> str:
        if self.committer is None:
            self.committer = world.oracle.committer()
        return self.committer(text)

    def _claim_actions(self, world: World, party: str, record, wanted_hash: str) -> List[dict]:
        ctx = self.ctx
        actions = []
        if record is None or record.phase != LOCKED or wanted_hash is None:
            return actions
        my_lock_addr = ctx.party_addr(world, party, ctx.lock_chain)
        for text in world.known_values(party, "keydoc"):
            if self._commit(world, text) == wanted_hash:
                if not _has_submitted(world, my_lock_addr, ctx.lock_contract,
                                      "transferWithKey", (ctx.tx_id, text)):
                    actions.append(_submit(party, ctx.lock_chain, ctx.lock_contract,
                                           "transferWithKey", (ctx.tx_id, text)))
                return actions
        # publish-mode threshold: reconstruct off-chain once a quorum is out
        dec = _dec_record(world, ctx)
        if dec is not None and dec.requested is not None:
            partials = _released_partials(world, ctx)
            public = world.oracle.threshold_public
            if public is not None and len(partials) >= public.config.k:
                already = any(
                    a.get("kind") == "combine" and a.get("party") == party
                    and a.get("encrypted") == dec.requested
                    for a in world.actions
                )
                if not already:
                    actions.append({
                        "kind": "combine", "party": party,
                        "encrypted": dec.requested,
                        "partials": partials[: public.config.k],
                    })
        return actions

    def next_actions(self, world: World, party: str) -> List[dict]:
        ctx = self.ctx
        tx = ctx.tx_id
        lock = _lock_record(world, ctx)
        dec = _dec_record(world, ctx)
        actions: List[dict] = []
        my_lock_addr = ctx.party_addr(world, party, ctx.lock_chain)
        my_dec_addr = ctx.party_addr(world, party, ctx.dec_chain)
        lock_to_addr = ctx.party_addr(world, ctx.lock_to, ctx.lock_chain)
        lock_from_addr = ctx.party_addr(world, ctx.lock_from, ctx.lock_chain)
        dec_from_addr = ctx.party_addr(world, ctx.lock_to, ctx.dec_chain)
        dec_ref = world.contract_refs[ctx.dec_contract].text()

        if party == ctx.lock_to:
            # open the locking side
            if lock is None and not _has_submitted(world, my_lock_addr, ctx.lock_contract, "inceptTransfer"):
                actions.append(_submit(party, ctx.lock_chain, ctx.lock_contract, "inceptTransfer",
                                       (tx, ctx.lock_amount, lock_from_addr,
                                        ctx.failure.hashed, ctx.failure.enc)))
            # check the counterparty's key pair before paying
            if (
                lock is not None and lock.phase == LOCKED and dec is not None
                and not _verify_recorded(world, party, dec.enc_success)
            ):
                actions.append({"kind": "verify", "party": party, "encrypted": dec.enc_success})
            pay_intended = self.exploration or self.branch in ("success", "payment_failure")
            if (
                pay_intended
                and lock is not None and lock.phase == LOCKED
                and dec is not None and dec.phase == DEC_INCEPTED
                and verify_consistency(world, party, dec.enc_success, lock.hash_buyer, dec_ref, tx)
                and not _has_submitted(world, my_dec_addr, ctx.dec_contract, "transferAndDecrypt")
            ):
                actions.append(_submit(party, ctx.dec_chain, ctx.dec_contract, "transferAndDecrypt",
                                       (tx, ctx.dec_amount, ctx.party_addr(world, ctx.lock_from, ctx.dec_chain),
                                        dec.enc_success, dec.enc_failure)))
            cancel_intended = self.exploration or self.branch == "buyer_cancel_pre_lock"
            if (
                cancel_intended
                and lock is not None and lock.phase == INCEPTED
                and (dec is not None or self.exploration)
                and not _has_submitted(world, my_lock_addr, ctx.lock_contract, "cancelTransfer")
            ):
                actions.append(_submit(party, ctx.lock_chain, ctx.lock_contract, "cancelTransfer",
                                       (tx, ctx.lock_amount, lock_from_addr,
                                        ctx.failure.hashed, ctx.failure.enc)))
            actions.extend(self._claim_actions(world, party, lock,
                                               lock.hash_buyer if lock else None))
        else:
            # open the decryption side once the lock inception is visible
            if (
                lock is not None and dec is None
                and not _has_submitted(world, my_dec_addr, ctx.dec_contract, "inceptTransfer")
            ):
                actions.append(_submit(party, ctx.dec_chain, ctx.dec_contract, "inceptTransfer",
                                       (tx, ctx.dec_amount, dec_from_addr,
                                        ctx.success.enc, lock.enc_seller)))
            if dec is not None and not _verify_recorded(world, party, dec.enc_failure):
                actions.append({"kind": "verify", "party": party, "encrypted": dec.enc_failure})
            confirm_intended = self.exploration or self.branch != "buyer_cancel_pre_lock"
            if (
                confirm_intended
                and lock is not None and lock.phase == INCEPTED and dec is not None
                and verify_consistency(world, party, dec.enc_failure, lock.hash_seller, dec_ref, tx)
                and not _has_submitted(world, my_lock_addr, ctx.lock_contract, "confirmTransfer")
            ):
                actions.append(_submit(party, ctx.lock_chain, ctx.lock_contract, "confirmTransfer",
                                       (tx, ctx.lock_amount, lock_to_addr,
                                        ctx.success.hashed, ctx.success.enc)))
            if self.exploration:
                cancel_wanted = dec is not None and dec.phase == DEC_INCEPTED
            else:
                cancel_wanted = (
                    (self.branch == "seller_cancel"
                     and lock is not None and lock.phase == LOCKED
                     and dec is not None and dec.phase == DEC_INCEPTED)
                    or (self.branch == "buyer_cancel_pre_lock"
                        and lock is not None and lock.phase == CANCELLED
                        and dec is not None and dec.phase == DEC_INCEPTED)
                )
            if cancel_wanted and not _has_submitted(world, my_dec_addr, ctx.dec_contract, "cancelAndDecrypt"):
                actions.append(_submit(party, ctx.dec_chain, ctx.dec_contract, "cancelAndDecrypt",
                                       (tx, dec_from_addr, dec.enc_success, dec.enc_failure)))
            actions.extend(self._claim_actions(world, party, lock,
                                               lock.hash_seller if lock else None))
        return actions


class WrapperStrategy(Erc7573Strategy):
    """Wrapper flow adds the HTLC refund step after a key-based cancellation."""

    def next_actions(self, world: World, party: str) -> List[dict]:
        actions = super().next_actions(world, party)
        ctx = self.ctx
        if party != ctx.lock_from:
            return actions
        wrapper = world.chains[ctx.lock_chain].contracts[ctx.lock_contract]
        record = wrapper.records.get(ctx.tx_id)
        htlc = world.chains[ctx.lock_chain].contracts[ctx.htlc_asset]
        htlc_record = htlc.records.get(ctx.tx_id)
        if record is not None and record.phase == WRAPPER_CANCELLED \
                and htlc_record is not None and htlc_record.phase == HTLC_LOCKED:
            clock = world.chains[ctx.lock_chain].clock
            my_addr = ctx.party_addr(world, party, ctx.lock_chain)
            if clock >= htlc_record.timeout:
                if not _has_submitted(world, my_addr, ctx.htlc_asset, "refund"):
                    actions.append(_submit(party, ctx.lock_chain, ctx.htlc_asset,
                                           "refund", (ctx.tx_id,)))
            elif not self.exploration:
                actions.append({"kind": "tick", "chain": ctx.lock_chain})
        return actions


class HtlcStrategy(Strategy):
    """Classical two-chain HTLC swap; the seller's key B drives both locks."""

    def __init__(self, ctx: Context, exploration: bool = False):
        self.ctx = ctx
        self.exploration = exploration

    def _commit(self, world: World, text: str) -> str:
        return world.oracle.committer()(text)

    def next_actions(self, world: World, party: str) -> List[dict]:
        ctx = self.ctx
        scenario = ctx.scenario
        tx = ctx.tx_id
        asset = world.chains["asset"].contracts[ctx.htlc_asset]
        payment = world.chains["payment"].contracts[ctx.htlc_payment]
        asset_rec = asset.records.get(tx)
        pay_rec = payment.records.get(tx)
        actions: List[dict] = []
        my_asset = ctx.party_addr(world, party, "asset")
        my_pay = ctx.party_addr(world, party, "payment")
        buyer_asset = ctx.party_addr(world, "buyer", "asset")
        seller_pay = ctx.party_addr(world, "seller", "payment")
        if party == "seller":
            if asset_rec is None and not _has_submitted(world, my_asset, ctx.htlc_asset, "lock"):
                actions.append(_submit(party, "asset", ctx.htlc_asset, "lock",
                                       (tx, scenario.amount_asset, buyer_asset,
                                        ctx.hashes["B"], scenario.t2)))
            if (
                pay_rec is not None and pay_rec.phase == HTLC_LOCKED
                and pay_rec.hash == ctx.hashes["B"] and pay_rec.receiver == seller_pay
                and not _has_submitted(world, my_pay, ctx.htlc_payment, "complete")
            ):
                actions.append(_submit(party, "payment", ctx.htlc_payment, "complete",
                                       (tx, ctx.secrets["B"])))
            if (
                asset_rec is not None and asset_rec.phase == HTLC_LOCKED
                and world.chains["asset"].clock >= asset_rec.timeout
                and not _has_submitted(world, my_asset, ctx.htlc_asset, "refund")
            ):
                actions.append(_submit(party, "asset", ctx.htlc_asset, "refund", (tx,)))
        else:
            if (
                asset_rec is not None and asset_rec.phase == HTLC_LOCKED
                and asset_rec.receiver == buyer_asset
                and pay_rec is None
                and not _has_submitted(world, my_pay, ctx.htlc_payment, "lock")
            ):
                actions.append(_submit(party, "payment", ctx.htlc_payment, "lock",
                                       (tx, scenario.amount_payment, seller_pay,
                                        asset_rec.hash, scenario.t1)))
            if asset_rec is not None and asset_rec.phase == HTLC_LOCKED:
                for kind in ("opaque", "keydoc"):
                    for text in world.known_values(party, kind):
                        if self._commit(world, text) == asset_rec.hash:
                            if not _has_submitted(world, my_asset, ctx.htlc_asset,
                                                  "complete", (tx, text)):
                                actions.append(_submit(party, "asset", ctx.htlc_asset,
                                                       "complete", (tx, text)))
            if (
                pay_rec is not None and pay_rec.phase == HTLC_LOCKED
                and world.chains["payment"].clock >= pay_rec.timeout
                and not _has_submitted(world, my_pay, ctx.htlc_payment, "refund")
            ):
                actions.append(_submit(party, "payment", ctx.htlc_payment, "refund", (tx,)))
        return actions


class DoubleLockStrategy(Strategy):
    """The nine-step double-locking flow from the appendix of the scheme."""

    def __init__(self, ctx: Context, exploration: bool = False):
        self.ctx = ctx
        self.exploration = exploration

    def next_actions(self, world: World, party: str) -> List[dict]:
        ctx = self.ctx
        asset = world.chains["asset"].contracts[ctx.htlc_asset]
        payment = world.chains["payment"].contracts[ctx.htlc_payment]
        h = ctx.hashes
        s = ctx.secrets
        knowledge = world.parties[party].knowledge
        actions: List[dict] = []
        my_asset = ctx.party_addr(world, party, "asset")
        my_pay = ctx.party_addr(world, party, "payment")

        def offer(chain, contract, method, args):
            caller = my_asset if chain == "asset" else my_pay
            if not _has_submitted(world, caller, contract, method, args):
                actions.append(_submit(party, chain, contract, method, args))

        if party == "buyer":
            if asset.phase == "Start":
                offer("asset", ctx.htlc_asset, "incept", (h["S"], h["Y"]))
            if asset.phase == "Confirmed" and payment.phase == "Start":
                offer("payment", ctx.htlc_payment, "incept",
                      (h["B"], h["S"], h["C"], h["X"], h["Y"]))
            if payment.phase == "Confirmed" and asset.phase == "Confirmed" and s["X"] in knowledge:
                offer("asset", ctx.htlc_asset, "lock", (h["B"], h["S"], s["X"], s["Y"]))
            if asset.phase in ("Confirmed", "Locked") and s["B"] in knowledge:
                offer("asset", ctx.htlc_asset, "retrieve", (s["B"],))
            if self.exploration:
                if payment.phase == "Confirmed":
                    offer("payment", ctx.htlc_payment, "retrieve", (s["S"],))
                # defensive exits: withdraw an unconfirmed offer, or refund
                # against C once the seller's cancellation exposed it
                if payment.phase == "Incepted":
                    offer("payment", ctx.htlc_payment, "cancel",
                          (h["B"], h["S"], h["C"], h["X"], h["Y"]))
                if payment.phase == "Confirmed" and s["C"] in knowledge:
                    offer("payment", ctx.htlc_payment, "cancel", (s["C"],))
        else:
            if asset.phase == "Incepted":
                offer("asset", ctx.htlc_asset, "confirm", (h["B"], h["C"], h["X"]))
            if payment.phase == "Incepted":
                offer("payment", ctx.htlc_payment, "confirm", (h["B"], h["S"], h["C"], s["X"]))
            if payment.phase == "Confirmed" and s["Y"] in knowledge:
                offer("payment", ctx.htlc_payment, "retrieve", (s["B"], s["Y"]))
            if asset.phase == "Locked" and s["S"] in knowledge:
                offer("asset", ctx.htlc_asset, "retrieve", (s["S"],))
            if self.exploration and asset.phase == "Confirmed":
                offer("asset", ctx.htlc_asset, "cancel", (s["C"],))
        return actions


def make_strategy(ctx: Context, branch: Optional[str] = None, exploration: bool = False) -> Strategy:
    protocol = ctx.scenario.protocol
    if protocol in ("erc7573", "replay"):
        return Erc7573Strategy(ctx, branch=branch, exploration=exploration)
    if protocol == "htlc_wrapper":
        return WrapperStrategy(ctx, branch=branch, exploration=exploration)
    if protocol == "htlc":
        return HtlcStrategy(ctx, exploration=exploration)
    if protocol == "double_lock":
        return DoubleLockStrategy(ctx, exploration=exploration)
    raise ScenarioError(f"no strategy for protocol {protocol}")


def apply_strategy_action(world: World, action: dict) -> None:
    kind = action["kind"]
    if kind == "submit":
        world.submit(
            action["chain"],
            world.parties[action["party"]].addresses[action["chain"]],
            action["contract"],
            action["method"],
            tuple(action["args"]),
            party=action["party"],
        )
    elif kind == "verify":
        world.verify_key(action["party"], action["encrypted"])
    elif kind == "combine":
        world.combine_partials(action["party"], action["encrypted"], action["partials"])
    elif kind == "tick":
        world.tick(action["chain"])
    else:
        raise DvpError(f"strategies cannot emit action kind {kind!r}")


def drive(world: World, ctx: Context, strategies: Dict[str, Strategy], max_rounds: int = 2000) -> None:
    """Eager deterministic scheduler: execute, deliver, then poll strategies."""
    for _ in range(max_rounds):
        pending = world.pending_calls()
        if pending:
            world.exec_call(pending[0].seq)
            continue
        if world.pending_deliveries:
            event_seq, node = world.pending_deliveries[0]
            world.deliver(event_seq, node)
            continue
        chosen = None
        for party in ("buyer", "seller"):
            options = strategies[party].next_actions(world, party)
            if options:
                chosen = options[0]
                break
        if chosen is None:
            return
        apply_strategy_action(world, chosen)
    raise DvpError("drive did not reach quiescence")


def outcome_of(world: World, ctx: Context) -> str:
    """Terminal classification against the initial balances."""
    scenario = ctx.scenario
    deltas = {}
    for party in world.parties:
        deltas[party] = {
            chain: world.chains[chain].ledger.balance(world.parties[party].addresses[chain])
            - ctx.initial_balances[party][chain]
            for chain in world.chains
        }
    escrow = sum(chain.ledger.escrow_total() for chain in world.chains.values())
    swap = (
        deltas["buyer"]["asset"] == scenario.amount_asset
        and deltas["seller"]["asset"] == -scenario.amount_asset
        and deltas["buyer"]["payment"] == -scenario.amount_payment
        and deltas["seller"]["payment"] == scenario.amount_payment
        and escrow == 0
    )
    reverted = (
        all(d == 0 for pd in deltas.values() for d in pd.values()) and escrow == 0
    )
    if swap:
        return "swap-completed"
    if reverted:
        return "fully-reverted"
    return "mixed"


def expected_outcome(scenario: Scenario) -> str:
    if scenario.protocol in ("htlc", "double_lock"):
        return "swap-completed"
    return "swap-completed" if scenario.branch == "success" else "fully-reverted"


@dataclass
class RunResult:
    world: World
    ctx: Context
    outcome: str
    expected: str

    @property
    def ok(self) -> bool:
        return self.outcome == self.expected


def run(scenario: Scenario) -> RunResult:
    world, ctx = build(scenario)
    strategies = {
        "buyer": make_strategy(ctx),
        "seller": make_strategy(ctx),
    }
    drive(world, ctx, strategies)
    return RunResult(world, ctx, outcome_of(world, ctx), expected_outcome(scenario))


def replay_actions(scenario: Scenario, actions: List[dict]) -> World:
    """Rebuild the world and re-apply a recorded action log.

    build() deterministically regenerates the setup prefix of the log; the
    recorded prefix must match it exactly, and the remaining actions are
    applied one by one.
    """
    world, _ = build(scenario)
    prefix = world.actions
    if list(actions[: len(prefix)]) != prefix:
        raise DvpError("trace setup prefix diverges from the scenario")
    for action in actions[len(prefix):]:
        world.apply_action(action)
    return world
