"""Deterministic simulation of two ledgers with observable mempools.

The central modelling decision: every argument of a submitted call becomes
visible to every party at submission time, whether or not the call later
executes or is rejected.  That is the leak that makes cross-chain races
exploitable, and the engine enforces its flip side with a knowledge gate:
a party can only pass values it has previously observed (or the designated
garbage constant standing in for anything it could make up locally).

Everything is driven through recorded actions (submit / exec / tick /
deliver / request / verify / combine), so any run can be replayed
bit-exactly from its action log and a world can be fingerprinted for
search deduplication.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import crypto
from .errors import (
    ContractError,
    DvpError,
    MalformedDocument,
    UnconstructibleArgument,
    UndecryptableCiphertext,
    UnknownMethod,
)
from .keycodec import ContractRef, EncryptedKey, TxId, looks_like_key_text
from .oracle import EVENT_KEY_REQUESTED, OracleContext, OracleService

GARBAGE_TEXT = "garbage"

_HEX64_RE = re.compile(r"^[0-9a-f]{64}$")


def address_for(label: str) -> str:
    return "0x" + hashlib.sha256(b"dvp-addr:" + label.encode("utf-8")).hexdigest()[:40]


def classify_value(text: str) -> str:
    """Structural classification of an observed string value."""
    if text == GARBAGE_TEXT:
        return "garbage"
    if looks_like_key_text(text):
        return "keydoc"
    try:
        crypto.PartialDecryption.from_text(text)
        return "partial"
    except MalformedDocument:
        pass
    if _HEX64_RE.match(text):
        return "hash"
    try:
        EncryptedKey.from_text(text)
        return "cipher"
    except MalformedDocument:
        pass
    return "opaque"


@dataclass
class ChainCall:
    seq: int
    chain: str
    caller: str
    contract: str
    method: str
    args: tuple
    submitted_at: int
    status: str = "pending"
    error: Optional[str] = None

    def signature(self) -> tuple:
        return (self.chain, self.caller, self.contract, self.method, self.args)

    def copy(self) -> "ChainCall":
        return ChainCall(
            self.seq, self.chain, self.caller, self.contract, self.method,
            self.args, self.submitted_at, self.status, self.error,
        )


@dataclass(frozen=True)
class ChainEvent:
    seq: int
    chain: str
    emitter: str
    name: str
    payload: tuple
    emitted_at: int

    def identity(self) -> tuple:
        return (self.chain, self.emitter, self.name, self.payload)


class Ledger:
    """Token balances plus per-(contract, id) escrow; total supply is conserved."""

    def __init__(self):
        self.balances: Dict[str, int] = {}
        self.escrow: Dict[Tuple[str, int], Dict[str, int | str]] = {}

    def balance(self, addr: str) -> int:
        return self.balances.get(addr, 0)

    def credit(self, addr: str, amount: int) -> None:
        self.balances[addr] = self.balance(addr) + amount

    def try_transfer(self, frm: str, to: str, amount: int) -> bool:
        if self.balance(frm) < amount:
            return False
        self.balances[frm] = self.balance(frm) - amount
        self.credit(to, amount)
        return True

    def lock(self, contract: str, tx_id: int, owner: str, amount: int) -> bool:
        key = (contract, tx_id)
        if key in self.escrow or self.balance(owner) < amount:
            return False
        self.balances[owner] = self.balance(owner) - amount
        self.escrow[key] = {"amount": amount, "owner": owner}
        return True

    def release(self, contract: str, tx_id: int, to: str) -> int:
        entry = self.escrow.pop((contract, tx_id))
        self.credit(to, entry["amount"])
        return entry["amount"]

    def escrow_total(self) -> int:
        return sum(entry["amount"] for entry in self.escrow.values())

    def total(self) -> int:
        return sum(self.balances.values()) + self.escrow_total()

    def clone(self) -> "Ledger":
        other = Ledger()
        other.balances = dict(self.balances)
        other.escrow = {k: dict(v) for k, v in self.escrow.items()}
        return other

    def state(self) -> dict:
        return {
            "balances": sorted(self.balances.items()),
            "escrow": sorted(
                (c, i, e["amount"], e["owner"]) for (c, i), e in self.escrow.items()
            ),
        }


class Contract:
    """Base for on-chain state machines; methods are ``m_<abiName>``."""

    def __init__(self, address: str):
        self.address = address

    def invoke(self, env: "CallEnv", method: str, args: tuple):
        handler = getattr(self, "m_" + method, None)
        if handler is None:
            raise UnknownMethod(f"{type(self).__name__} has no method {method}")
        try:
            return handler(env, *args)
        except TypeError as exc:
            if "positional argument" in str(exc):
                raise UnknownMethod(f"bad arity for {method}: {exc}") from exc
            raise

    def state(self) -> dict:
        raise NotImplementedError

    def clone(self) -> "Contract":
        raise NotImplementedError


class Chain:
    def __init__(self, name: str, chain_id: str):
        self.name = name
        self.chain_id = chain_id
        self.ledger = Ledger()
        self.contracts: Dict[str, Contract] = {}
        self.clock = 0

    def clone(self) -> "Chain":
        other = Chain(self.name, self.chain_id)
        other.ledger = self.ledger.clone()
        other.contracts = {addr: c.clone() for addr, c in self.contracts.items()}
        other.clock = self.clock
        return other


@dataclass
class Party:
    name: str
    addresses: Dict[str, str] = field(default_factory=dict)
    knowledge: set = field(default_factory=set)

    def clone(self) -> "Party":
        return Party(self.name, dict(self.addresses), set(self.knowledge))


class CallEnv:
    """What a contract sees while executing one call."""

    def __init__(self, world: "World", chain: Chain, caller: str, buffer: List[Tuple[str, str, tuple]]):
        self.world = world
        self.chain = chain
        self.caller = caller
        self._buffer = buffer

    @property
    def ledger(self) -> Ledger:
        return self.chain.ledger

    @property
    def clock(self) -> int:
        return self.chain.clock

    def emit(self, emitter: str, name: str, *payload) -> None:
        self._buffer.append((emitter, name, tuple(payload)))

    def invoke(self, contract_addr: str, method: str, caller: str, args: tuple):
        inner = self.chain.contracts.get(contract_addr)
        if inner is None:
            raise UnknownMethod(f"no contract at {contract_addr}")
        child = CallEnv(self.world, self.chain, caller, self._buffer)
        return inner.invoke(child, method, tuple(args))


class World:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(f"dvp-world:{seed}")
        self.chains: Dict[str, Chain] = {}
        self.parties: Dict[str, Party] = {}
        self.oracle: Optional[OracleService] = None
        self.oracle_addresses: Dict[str, str] = {}
        self.contract_refs: Dict[str, ContractRef] = {}
        self.calls: List[ChainCall] = []
        self.events: Dict[int, ChainEvent] = {}
        self.pending_deliveries: List[Tuple[int, str]] = []
        self.value_kinds: Dict[str, str] = {GARBAGE_TEXT: "garbage"}
        self.actions: List[dict] = []
        self._next_event_seq = 0

    # ---------------------------------------------------------------- setup

    def add_chain(self, name: str, chain_id: str) -> Chain:
        chain = Chain(name, chain_id)
        self.chains[name] = chain
        return chain

    def add_party(self, name: str) -> Party:
        party = Party(name)
        for chain_name in self.chains:
            party.addresses[chain_name] = address_for(f"party:{name}@{chain_name}")
        self.parties[name] = party
        return party

    def register_contract(self, chain_name: str, contract: Contract) -> None:
        chain = self.chains[chain_name]
        chain.contracts[contract.address] = contract
        self.contract_refs[contract.address] = ContractRef(
            "eip155", chain.chain_id, contract.address
        )

    def set_oracle(self, service: OracleService) -> None:
        self.oracle = service
        for node_name in service.node_names():
            self.oracle_addresses[node_name] = address_for(f"oracle:{node_name}")

    def seed_public_knowledge(self) -> None:
        public = {GARBAGE_TEXT}
        for party in self.parties.values():
            public.update(party.addresses.values())
        public.update(self.oracle_addresses.values())
        for addr, ref in self.contract_refs.items():
            public.add(addr)
            public.add(ref.text())
        for party in self.parties.values():
            party.knowledge.update(public)

    # ------------------------------------------------------------- recording

    def _record(self, action: dict) -> None:
        self.actions.append(action)

    def _note(self, **fields) -> None:
        self._record({"kind": "note", **fields})

    def _absorb(self, text: str, parties: Optional[Sequence[str]] = None) -> None:
        if text not in self.value_kinds:
            self.value_kinds[text] = classify_value(text)
        targets = self.parties.values() if parties is None else [
            self.parties[p] for p in parties
        ]
        for party in targets:
            party.knowledge.add(text)

    def known_values(self, party_name: str, kind: str) -> List[str]:
        party = self.parties[party_name]
        return sorted(
            text for text in party.knowledge if self.value_kinds.get(text) == kind
        )

    # ------------------------------------------------------------- chain ops

    def submit(
        self,
        chain_name: str,
        caller: str,
        contract: str,
        method: str,
        args: tuple,
        party: Optional[str] = None,
        auto: bool = False,
    ) -> int:
        chain = self.chains[chain_name]
        if party is not None:
            knowledge = self.parties[party].knowledge
            for arg in args:
                if isinstance(arg, str) and arg not in knowledge:
                    raise UnconstructibleArgument(
                        f"{party} has never observed {arg[:32]!r}..."
                    )
        call = ChainCall(
            seq=len(self.calls),
            chain=chain_name,
            caller=caller,
            contract=contract,
            method=method,
            args=tuple(args),
            submitted_at=chain.clock,
        )
        self.calls.append(call)
        # the mempool leak: arguments are public the moment they are submitted
        for arg in call.args:
            if isinstance(arg, str):
                self._absorb(arg)
        record = {
            "kind": "submit",
            "chain": chain_name,
            "party": party,
            "caller": caller,
            "contract": contract,
            "method": method,
            "args": list(call.args),
        }
        if auto:
            record["auto"] = True
        self._record(record)
        return call.seq

    def exec_call(self, seq: int) -> ChainCall:
        if not 0 <= seq < len(self.calls):
            raise DvpError(f"no call with seq {seq}")
        call = self.calls[seq]
        if call.status != "pending":
            raise DvpError(f"call {seq} is not pending")
        chain = self.chains[call.chain]
        contract = chain.contracts.get(call.contract)
        buffer: List[Tuple[str, str, tuple]] = []
        env = CallEnv(self, chain, call.caller, buffer)
        total_before = chain.ledger.total()
        self._record({"kind": "exec", "chain": call.chain, "call": seq})
        if contract is None:
            call.status = "rejected"
            call.error = "UnknownContract"
        else:
            try:
                contract.invoke(env, call.method, call.args)
            except DvpError as exc:
                # crypto errors raised inside contract code reject the call too
                call.status = "rejected"
                call.error = type(exc).__name__
                buffer.clear()
            else:
                call.status = "executed"
        if chain.ledger.total() != total_before:
            raise DvpError(f"token conservation violated by call {seq}")
        emitted = []
        for emitter, name, payload in buffer:
            event = ChainEvent(
                seq=self._next_event_seq,
                chain=call.chain,
                emitter=emitter,
                name=name,
                payload=payload,
                emitted_at=chain.clock,
            )
            self._next_event_seq += 1
            self.events[event.seq] = event
            emitted.append(event)
            for item in payload:
                if isinstance(item, str):
                    self._absorb(item)
            if name == EVENT_KEY_REQUESTED and self.oracle is not None:
                for node_name in self.oracle.node_names():
                    self.pending_deliveries.append((event.seq, node_name))
        self._note(
            call=seq,
            status=call.status,
            error=call.error,
            events=[[e.seq, e.name, list(e.payload)] for e in emitted],
        )
        return call

    def tick(self, chain_name: str) -> int:
        chain = self.chains[chain_name]
        chain.clock += 1
        self._record({"kind": "tick", "chain": chain_name})
        return chain.clock

    def deliver(self, event_seq: int, node_name: str) -> None:
        pair = (event_seq, node_name)
        if event_seq not in self.events or pair not in self.pending_deliveries:
            raise DvpError(f"no pending delivery {pair}")
        self.pending_deliveries.remove(pair)
        event = self.events[event_seq]
        ctx = OracleContext(
            caller_contract=self.contract_refs[event.emitter],
            caller_transaction=TxId(int(event.payload[0])),
        )
        self._record({"kind": "deliver", "event": event_seq, "oracle": node_name})
        reaction = self.oracle.node(node_name).on_event(event.name, event.payload, ctx)
        if reaction.note:
            self._note(oracle=node_name, event=event_seq, oracle_note=reaction.note)
        if reaction.submit is not None:
            method, args = reaction.submit
            self.submit(
                event.chain,
                self.oracle_addresses[node_name],
                event.emitter,
                method,
                tuple(args),
                auto=True,
            )

    # ---------------------------------------------------------- off-chain ops

    def request_key(self, party_name: str, contract_ref: str, tx_value: int):
        ehk = self.oracle.request_encrypted_hashed_key(
            ContractRef.parse(contract_ref), TxId(tx_value), self.rng
        )
        self._record(
            {
                "kind": "request",
                "party": party_name,
                "contract": contract_ref,
                "tx": tx_value,
            }
        )
        self.value_kinds[ehk.encrypted.text()] = "cipher"
        self.value_kinds.setdefault(
            ehk.hashed, "cipher" if self.oracle.config.hash_eq_enc else "hash"
        )
        self._absorb(ehk.encrypted.text(), parties=[party_name])
        self._absorb(ehk.hashed, parties=[party_name])
        return ehk

    def verify_key(self, party_name: str, encrypted_text: str):
        self._record({"kind": "verify", "party": party_name, "encrypted": encrypted_text})
        try:
            result = self.oracle.verify(EncryptedKey.from_text(encrypted_text))
        except (UndecryptableCiphertext, MalformedDocument) as exc:
            self._note(party=party_name, verify="failed", reason=type(exc).__name__)
            return None
        self._absorb(result.hashed, parties=[party_name])
        self._note(
            party=party_name,
            verify="ok",
            contract=result.contract.text(),
            tx=result.transaction.value,
            hashed=result.hashed,
        )
        return result

    def combine_partials(self, party_name: str, encrypted_text: str, partial_texts: Sequence[str]):
        knowledge = self.parties[party_name].knowledge
        for needed in [encrypted_text, *partial_texts]:
            if needed not in knowledge:
                raise UnconstructibleArgument(f"{party_name} has never observed {needed[:32]!r}")
        self._record(
            {
                "kind": "combine",
                "party": party_name,
                "encrypted": encrypted_text,
                "partials": sorted(partial_texts),
            }
        )
        try:
            key_text = self.oracle.combine_partial_texts(encrypted_text, partial_texts)
        except DvpError as exc:
            self._note(party=party_name, combine="failed", reason=type(exc).__name__)
            return None
        self._absorb(key_text, parties=[party_name])
        return key_text

    def record_stop(self, party_name: str) -> None:
        self._record({"kind": "stop", "party": party_name})

    def apply_action(self, action: dict) -> None:
        kind = action["kind"]
        if kind == "note":
            return
        if kind == "submit":
            if action.get("auto"):
                return  # regenerated when the triggering deliver is replayed
            self.submit(
                action["chain"],
                action["caller"],
                action["contract"],
                action["method"],
                tuple(action["args"]),
                party=action.get("party"),
            )
        elif kind == "exec":
            self.exec_call(action["call"])
        elif kind == "tick":
            self.tick(action["chain"])
        elif kind == "deliver":
            self.deliver(action["event"], action["oracle"])
        elif kind == "request":
            self.request_key(action["party"], action["contract"], action["tx"])
        elif kind == "verify":
            self.verify_key(action["party"], action["encrypted"])
        elif kind == "combine":
            self.combine_partials(action["party"], action["encrypted"], action["partials"])
        elif kind == "stop":
            self.record_stop(action["party"])
        else:
            raise DvpError(f"unknown action kind {kind!r}")

    # ------------------------------------------------------------- inspection

    def pending_calls(self) -> List[ChainCall]:
        return [c for c in self.calls if c.status == "pending"]

    def find_calls(self, **match) -> List[ChainCall]:
        out = []
        for call in self.calls:
            if all(getattr(call, key) == value for key, value in match.items()):
                out.append(call)
        return out

    def snapshot(self) -> str:
        """Stable hash of everything that determines future behaviour.

        Pending calls are included as an order-free multiset; executed and
        rejected history is not (its effects live in ledgers, contract
        records and knowledge sets), so interleavings that commute to the
        same state collapse to the same fingerprint.
        """
        state = (
            tuple(
                (
                    name,
                    tuple(sorted(chain.ledger.balances.items())),
                    tuple(sorted(
                        (c, i, e["amount"], e["owner"])
                        for (c, i), e in chain.ledger.escrow.items()
                    )),
                    chain.clock,
                    tuple(
                        (addr, repr(contract.state()))
                        for addr, contract in sorted(chain.contracts.items())
                    ),
                )
                for name, chain in sorted(self.chains.items())
            ),
            tuple(sorted(
                (call.signature() for call in self.calls if call.status == "pending"),
                key=repr,
            )),
            tuple(
                (name, tuple(sorted(party.knowledge)))
                for name, party in sorted(self.parties.items())
            ),
            tuple(sorted(
                (self.events[seq].identity() + (node,)
                 for seq, node in self.pending_deliveries),
                key=repr,
            )),
        )
        return hashlib.sha256(repr(state).encode("utf-8")).hexdigest()

    def clone(self) -> "World":
        other = World.__new__(World)
        other.seed = self.seed
        other.rng = random.Random()
        other.rng.setstate(self.rng.getstate())
        other.chains = {name: chain.clone() for name, chain in self.chains.items()}
        other.parties = {name: party.clone() for name, party in self.parties.items()}
        other.oracle = self.oracle  # stateless: nodes hold key material and config only
        other.oracle_addresses = dict(self.oracle_addresses)
        other.contract_refs = dict(self.contract_refs)
        other.calls = [call.copy() for call in self.calls]
        other.events = dict(self.events)
        other.pending_deliveries = list(self.pending_deliveries)
        other.value_kinds = dict(self.value_kinds)
        other.actions = list(self.actions)
        other._next_event_seq = self._next_event_seq
        return other
