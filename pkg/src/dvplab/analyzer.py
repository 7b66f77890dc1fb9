"""Bounded exhaustive exploration of interleavings and adversarial play.

The search node is (world fingerprint, adversary stop flags).  Decisions
are: execute a pending call, advance a clock (only while some timeout is
still relevant), deliver a requested event to an oracle node, let an
honest strategy take its next step, let an adversary fire one action
template, or let an adversary permanently stop attacking.

Adversary actions are fused submit+execute: an adversary gains nothing by
separating its own submission from execution that it could not get by
choosing the submission moment, while honest parties' pending calls stay
in the mempool where they can be delayed and front-run.  A fused action
whose call is rejected and whose arguments leak nothing new is discarded
as a no-op branch.

Depth counts state-advancing steps (exec, tick, deliver, fused adversary
action); submissions and off-chain bookkeeping are free.  A leaf is a
fully quiescent state; the atomicity verdict is taken there, after a
recovery closure that lets every party run its defensive moves (cancel,
reclaim, refund, claim) so that a party abandoning its own recoverable
funds does not masquerade as a protocol violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .baselines import (
    DoubleLockAssetContract,
    DoubleLockPaymentContract,
    HtlcContract,
    TimedDecryptionContract,
    HTLC_LOCKED,
)
from .chainsim import GARBAGE_TEXT, World
from .decryption import DecryptionContract, INCEPTED as DEC_INCEPTED
from .errors import DvpError
from .locking import INCEPTED as LOCK_INCEPTED, LOCKED, LockingContract
from .protocols import (
    Context,
    Scenario,
    apply_strategy_action,
    build,
    make_strategy,
    outcome_of,
)

RECOVERY_METHODS = {
    "cancelTransfer", "cancelAndDecrypt", "transferWithKey",
    "refund", "complete", "retrieve", "cancel",
}


@dataclass
class SearchBudget:
    max_depth: int = 24
    max_ticks: int = 0
    max_states: Optional[int] = None

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "SearchBudget":
        return cls(
            max_depth=scenario.depth,
            max_ticks=scenario.ticks_budget(),
            max_states=scenario.max_states,
        )


@dataclass
class Violation:
    predicate: str
    klass: str
    fingerprint: str
    descriptor: dict
    actions: List[dict]


@dataclass
class ExploreResult:
    scenario: dict
    adversaries: List[str]
    violations: List[Violation] = field(default_factory=list)
    states_visited: int = 0
    exhausted: bool = True

    def classes(self) -> List[str]:
        return sorted({v.klass for v in self.violations})

    def merged_with(self, other: "ExploreResult") -> "ExploreResult":
        return ExploreResult(
            scenario=self.scenario,
            adversaries=sorted(set(self.adversaries) | set(other.adversaries)),
            violations=self.violations + other.violations,
            states_visited=self.states_visited + other.states_visited,
            exhausted=self.exhausted and other.exhausted,
        )


def _adversary_list(scenario: Scenario) -> List[str]:
    if scenario.adversary == "none":
        return []
    if scenario.adversary == "both":
        return ["buyer", "seller"]
    return [scenario.adversary]


# --------------------------------------------------------------------------
# Adversary action templates
# --------------------------------------------------------------------------


def _submit_template(party, chain, contract, method, args) -> dict:
    return {
        "kind": "submit", "party": party, "chain": chain,
        "contract": contract, "method": method, "args": list(args),
    }


def _is_delivery(contract, method: str) -> bool:
    """Methods that hand the caller's funds over (escrow or transfer)."""
    if isinstance(contract, LockingContract):
        return method == "confirmTransfer"
    if isinstance(contract, DecryptionContract):
        return method == "transferAndDecrypt"
    if isinstance(contract, HtlcContract):
        return method == "lock"
    if isinstance(contract, (DoubleLockAssetContract, DoubleLockPaymentContract)):
        return method == "confirm"
    return False


def adversary_templates(
    world: World, ctx: Context, party: str, rational: bool = False
) -> List[dict]:
    """Finite action menu: protocol calls with argument slots drawn from
    the party's knowledge, plus a single garbage stand-in for anything it
    could fabricate.  Stored-argument methods are instantiated only with
    the stored values (a mismatch is rejected on-chain and leaks nothing
    the submission itself would not leak).

    With ``rational`` (used when both parties deviate), funds-delivering
    calls are restricted to the honest strategy's guarded instantiations:
    a gain-seeking party does not hand over value while skipping its own
    protocol protections, and between two colluding deviants such gifts
    would be indistinguishable from theft."""
    scenario = ctx.scenario
    out: List[dict] = []
    other = "seller" if party == "buyer" else "buyer"

    def pool(kind: str) -> List[str]:
        return world.known_values(party, kind)

    hash_pool = (pool("cipher") if scenario.hash_eq_enc else pool("hash")) + [GARBAGE_TEXT]
    cipher_pool = pool("cipher") + [GARBAGE_TEXT]
    key_pool = pool("keydoc") + pool("opaque") + [GARBAGE_TEXT]
    secret_pool = pool("opaque")

    for chain_name, chain in world.chains.items():
        my_addr = world.parties[party].addresses[chain_name]
        other_addr = world.parties[other].addresses[chain_name]

        def offer(contract_addr, method, args):
            out.append(_submit_template(party, chain_name, contract_addr, method, args))

        for contract in chain.contracts.values():
            if isinstance(contract, LockingContract):
                record = contract.records.get(ctx.tx_id)
                if record is None:
                    for h in hash_pool:
                        for e in cipher_pool:
                            offer(contract.address, "inceptTransfer",
                                  (ctx.tx_id, ctx.lock_amount, other_addr, h, e))
                elif record.phase == LOCK_INCEPTED:
                    if record.to == my_addr:
                        offer(contract.address, "cancelTransfer",
                              (ctx.tx_id, record.amount, record.frm,
                               record.hash_seller, record.enc_seller))
                    if record.frm == my_addr:
                        for h in hash_pool:
                            for e in cipher_pool:
                                offer(contract.address, "confirmTransfer",
                                      (ctx.tx_id, record.amount, record.to, h, e))
                elif record.phase == LOCKED:
                    for k in key_pool:
                        offer(contract.address, "transferWithKey", (ctx.tx_id, k))
            elif isinstance(contract, DecryptionContract):
                ids = [ctx.tx_id]
                if scenario.protocol == "replay":
                    ids.append(scenario.extra_tx_id)
                for tx in ids:
                    record = contract.records.get(tx)
                    if record is None:
                        for e1 in cipher_pool:
                            for e2 in cipher_pool:
                                offer(contract.address, "inceptTransfer",
                                      (tx, ctx.dec_amount, other_addr, e1, e2))
                    elif record.phase == DEC_INCEPTED:
                        if record.frm == my_addr:
                            offer(contract.address, "transferAndDecrypt",
                                  (tx, record.amount, record.to,
                                   record.enc_success, record.enc_failure))
                        if record.to == my_addr:
                            offer(contract.address, "cancelAndDecrypt",
                                  (tx, record.frm, record.enc_success, record.enc_failure))
            elif isinstance(contract, HtlcContract):
                record = contract.records.get(ctx.tx_id)
                amount = scenario.amount_asset if chain_name == "asset" else scenario.amount_payment
                if record is None:
                    for h in hash_pool:
                        for timeout in sorted({scenario.t1, scenario.t2}):
                            offer(contract.address, "lock",
                                  (ctx.tx_id, amount, other_addr, h, timeout))
                elif record.phase == HTLC_LOCKED:
                    for k in key_pool:
                        offer(contract.address, "complete", (ctx.tx_id, k))
                    if chain.clock >= record.timeout:
                        offer(contract.address, "refund", (ctx.tx_id,))
            elif isinstance(contract, DoubleLockAssetContract):
                h = ctx.hashes
                if contract.phase == "Start":
                    offer(contract.address, "incept", (h["S"], h["Y"]))
                elif contract.phase == "Incepted":
                    offer(contract.address, "confirm", (h["B"], h["C"], h["X"]))
                elif contract.phase == "Confirmed":
                    for s in secret_pool:
                        offer(contract.address, "cancel", (s,))
                    for sx in secret_pool:
                        for sy in secret_pool:
                            offer(contract.address, "lock", (h["B"], h["S"], sx, sy))
                if contract.phase in ("Confirmed", "Locked"):
                    for s in secret_pool:
                        offer(contract.address, "retrieve", (s,))
            elif isinstance(contract, DoubleLockPaymentContract):
                h = ctx.hashes
                if contract.phase == "Start":
                    offer(contract.address, "incept",
                          (h["B"], h["S"], h["C"], h["X"], h["Y"]))
                elif contract.phase == "Incepted":
                    offer(contract.address, "cancel",
                          (h["B"], h["S"], h["C"], h["X"], h["Y"]))
                    for sx in secret_pool:
                        offer(contract.address, "confirm", (h["B"], h["S"], h["C"], sx))
                elif contract.phase == "Confirmed":
                    for s in secret_pool:
                        offer(contract.address, "cancel", (s,))
                        offer(contract.address, "retrieve", (s,))
                    for sb in secret_pool:
                        for sy in secret_pool:
                            offer(contract.address, "retrieve", (sb, sy))

    if rational:
        honest_offers = {
            (a["contract"], a["method"], tuple(a["args"]))
            for a in make_strategy(ctx, exploration=True).next_actions(world, party)
            if a["kind"] == "submit"
        }
        out = [
            a
            for a in out
            if not _is_delivery(
                world.chains[a["chain"]].contracts.get(a["contract"]), a["method"]
            )
            or (a["contract"], a["method"], tuple(a["args"])) in honest_offers
        ]

    # drop exact repeats of anything this party already has in flight or done
    filtered = []
    for action in out:
        caller = world.parties[party].addresses[action["chain"]]
        if not _already_submitted(world, caller, action):
            filtered.append(action)
    return filtered


def _already_submitted(world: World, caller: str, action: dict) -> bool:
    args = tuple(action["args"])
    for call in world.calls:
        if (
            call.caller == caller
            and call.contract == action["contract"]
            and call.method == action["method"]
            and call.args == args
        ):
            return True
    return False


def _adds_knowledge(world: World, action: dict) -> bool:
    for arg in action["args"]:
        if isinstance(arg, str):
            for party in world.parties.values():
                if arg not in party.knowledge:
                    return True
    return False


# --------------------------------------------------------------------------
# Clock relevance
# --------------------------------------------------------------------------


def _tick_stops(chain) -> List[int]:
    """Clock values at which some guard in the system flips.

    No contract or strategy reads the clock between these thresholds, so
    the scheduler only ever needs to advance a chain to the next one."""
    stops = set()
    for contract in chain.contracts.values():
        if isinstance(contract, HtlcContract):
            for record in contract.records.values():
                if record.phase == HTLC_LOCKED:
                    stops.add(record.timeout)
        if isinstance(contract, TimedDecryptionContract):
            for record in contract.records.values():
                if record.phase == DEC_INCEPTED:
                    stops.add(contract.t1 + 1)
    return sorted(stops)


def _next_tick_stop(world: World, chain_name: str, budget: SearchBudget) -> Optional[int]:
    chain = world.chains[chain_name]
    for stop in _tick_stops(chain):
        if chain.clock < stop <= budget.max_ticks:
            return stop
    return None


def _tick_enabled(world: World, chain_name: str, budget: SearchBudget) -> bool:
    return _next_tick_stop(world, chain_name, budget) is not None


# --------------------------------------------------------------------------
# Recovery closure and the atomicity verdict
# --------------------------------------------------------------------------


def _is_recovery_action(world: World, action: dict) -> bool:
    kind = action["kind"]
    if kind in ("verify", "combine"):
        return True
    if kind != "submit":
        return False
    if action["method"] in RECOVERY_METHODS:
        return True
    if action["method"] == "inceptTransfer":
        contract = world.chains[action["chain"]].contracts.get(action["contract"])
        return isinstance(contract, DecryptionContract)
    return False


def recovery_closure(world: World, ctx: Context, budget: SearchBudget, max_rounds: int = 400) -> World:
    """Run every party's defensive moves to quiescence: cancellations,
    reclaims, refunds and entitled claims, but nothing that hands over new
    value.  Used before judging a leaf so that abandoned-but-recoverable
    positions resolve instead of reading as broken atomicity."""
    w = world.clone()
    strategies = {p: make_strategy(ctx, exploration=True) for p in w.parties}
    for _ in range(max_rounds):
        pending = w.pending_calls()
        if pending:
            w.exec_call(pending[0].seq)
            continue
        if w.pending_deliveries:
            seq, node = w.pending_deliveries[0]
            w.deliver(seq, node)
            continue
        chosen = None
        for party in ("buyer", "seller"):
            for option in strategies[party].next_actions(w, party):
                if _is_recovery_action(w, option):
                    chosen = option
                    break
            if chosen:
                break
        if chosen is not None:
            apply_strategy_action(w, chosen)
            continue
        ticked = False
        for chain_name in w.chains:
            if _tick_enabled(w, chain_name, budget):
                w.tick(chain_name)
                ticked = True
                break
        if not ticked:
            return w
    raise DvpError("recovery closure did not quiesce")


def atomicity_passes(world: World, ctx: Context) -> bool:
    """The bare predicate: terminal outcome is a completed swap or a full revert."""
    return outcome_of(world, ctx) in ("swap-completed", "fully-reverted")


def _legitimate_outcomes(ctx: Context, party: str) -> List[Tuple[int, int]]:
    a, p = ctx.scenario.amount_asset, ctx.scenario.amount_payment
    if party == "buyer":
        return [(0, 0), (a, -p)]
    return [(0, 0), (-a, p)]


def _party_delta(world: World, ctx: Context, party: str) -> Tuple[int, int]:
    deltas = _deltas(world, ctx)[party]
    return deltas["asset"], deltas["payment"]


def _gained_both(world: World, ctx: Context, party: str) -> bool:
    delta = _party_delta(world, ctx, party)
    for legit in _legitimate_outcomes(ctx, party):
        if delta[0] >= legit[0] and delta[1] >= legit[1] and delta != legit:
            return True
    return False


def _harmed(world: World, ctx: Context, party: str) -> bool:
    delta = _party_delta(world, ctx, party)
    for legit in _legitimate_outcomes(ctx, party):
        if not (delta[0] <= legit[0] and delta[1] <= legit[1] and delta != legit):
            return False
    return True


def atomicity_verdict(
    world: World, ctx: Context, budget: SearchBudget, adversaries: Sequence[str]
) -> Tuple[bool, World]:
    """(passes, judged world) for a quiescent leaf.

    A clean two-outcome state passes outright.  Anything else is first run
    through the recovery closure; the residue is a violation when an
    adversarial party ends strictly better than some legitimate outcome
    (it extracted value) or an honest party ends strictly worse than every
    legitimate outcome (it was robbed or its recovery was denied).  An
    adversary that only damaged itself does not count: the protocol's goal
    is to protect the counterparty, not to stop a party from burning its
    own funds.  With no adversaries configured the bare predicate decides.
    """
    if atomicity_passes(world, ctx):
        return True, world
    closed = recovery_closure(world, ctx, budget)
    if atomicity_passes(closed, ctx):
        return True, closed
    if not adversaries:
        return False, closed
    for party in closed.parties:
        if party in adversaries and _gained_both(closed, ctx, party):
            return False, closed
        if party not in adversaries and _harmed(closed, ctx, party):
            return False, closed
    return True, closed


# --------------------------------------------------------------------------
# Violation classification
# --------------------------------------------------------------------------


def _deltas(world: World, ctx: Context) -> Dict[str, Dict[str, int]]:
    return {
        party: {
            chain: world.chains[chain].ledger.balance(world.parties[party].addresses[chain])
            - ctx.initial_balances[party][chain]
            for chain in world.chains
        }
        for party in world.parties
    }


def _leaked_secrets(world: World, ctx: Context) -> List[str]:
    leaked = []
    for label, text in ctx.secrets.items():
        holder = ctx.secret_holders[label]
        for name, party in world.parties.items():
            if name != holder and text in party.knowledge:
                leaked.append(label)
                break
    return sorted(leaked)


def _used_secret(world: World, ctx: Context, party: str, chain: str,
                 contract: str, method: str, label: str) -> bool:
    addr = world.parties[party].addresses[chain]
    text = ctx.secrets.get(label)
    for call in world.calls:
        if (
            call.status == "executed" and call.caller == addr
            and call.contract == contract and call.method == method
            and text in call.args
        ):
            return True
    return False


def classify_violation(world: World, ctx: Context) -> Tuple[str, dict]:
    scenario = ctx.scenario
    deltas = _deltas(world, ctx)
    escrow = {name: chain.ledger.escrow_total() for name, chain in world.chains.items()}
    leaked = _leaked_secrets(world, ctx)
    descriptor = {
        "deltas": deltas,
        "escrow": escrow,
        "leaked": leaked,
        "outcome": outcome_of(world, ctx),
    }
    a, p = scenario.amount_asset, scenario.amount_payment
    if scenario.protocol == "double_lock":
        b_leaked = "B" in leaked
        s_leaked = "S" in leaked
        if b_leaked and s_leaked:
            return "B∧S", descriptor
        if _used_secret(world, ctx, "seller", "payment", ctx.htlc_payment, "retrieve", "Y"):
            return "Y", descriptor
        if _used_secret(world, ctx, "buyer", "asset", ctx.htlc_asset, "lock", "X"):
            return "X", descriptor
        return "other", descriptor
    if scenario.protocol == "replay":
        if deltas["buyer"]["asset"] == a and deltas["buyer"]["payment"] == 0:
            return "asset-without-payment", descriptor
        if (
            deltas["seller"]["payment"] == p
            and deltas["seller"]["asset"] == 0
            and deltas["buyer"]["payment"] == -p
        ):
            return "reclaim-after-payment", descriptor
        return "other", descriptor
    if deltas["buyer"]["asset"] == a and deltas["buyer"]["payment"] == 0:
        return "double-win:buyer", descriptor
    if deltas["seller"]["payment"] == p and deltas["seller"]["asset"] == 0:
        return "double-win:seller", descriptor
    return "mixed", descriptor


# --------------------------------------------------------------------------
# The search itself
# --------------------------------------------------------------------------


def _saturate_offchain(world: World, honest: Dict[str, object]) -> None:
    """Apply honest verify/combine steps eagerly: they touch only the
    acting party's own knowledge, so they commute with every other decision
    and need not multiply the search."""
    progressed = True
    while progressed:
        progressed = False
        for party, strategy in honest.items():
            for action in strategy.next_actions(world, party):
                if action["kind"] in ("verify", "combine"):
                    apply_strategy_action(world, action)
                    progressed = True
                    break


def _decisions(
    world: World,
    ctx: Context,
    honest: Dict[str, object],
    adversaries: Sequence[str],
    stopped: FrozenSet[str],
    budget: SearchBudget,
) -> List[dict]:
    out: List[dict] = []
    for call in world.pending_calls():
        out.append({"type": "exec", "seq": call.seq})
    for event_seq, node in world.pending_deliveries:
        out.append({"type": "deliver", "event": event_seq, "oracle": node})
    for chain_name in world.chains:
        stop = _next_tick_stop(world, chain_name, budget)
        if stop is not None:
            out.append({"type": "tick", "chain": chain_name, "to": stop})
    for party, strategy in honest.items():
        for action in strategy.next_actions(world, party):
            if action["kind"] in ("verify", "combine"):
                continue  # folded into the state by _saturate_offchain
            out.append({"type": "honest", "party": party, "action": action})
    rational = len(adversaries) > 1
    for party in adversaries:
        if party in stopped:
            continue
        out.append({"type": "stop", "party": party})
        for action in adversary_templates(world, ctx, party, rational=rational):
            out.append({"type": "adv", "party": party, "action": action})
    return out


_STEP_COST = {"exec": 1, "deliver": 1, "tick": 1, "adv": 1, "honest": 0, "stop": 0}


def _apply_decision(
    world: World, decision: dict, stopped: FrozenSet[str]
) -> Tuple[Optional[World], FrozenSet[str]]:
    """Apply one decision to a cloned world; None means a discarded no-op."""
    child = world.clone()
    kind = decision["type"]
    if kind == "exec":
        child.exec_call(decision["seq"])
    elif kind == "deliver":
        child.deliver(decision["event"], decision["oracle"])
    elif kind == "tick":
        while child.chains[decision["chain"]].clock < decision["to"]:
            child.tick(decision["chain"])
    elif kind == "honest":
        apply_strategy_action(child, decision["action"])
    elif kind == "stop":
        child.record_stop(decision["party"])
        return child, stopped | {decision["party"]}
    elif kind == "adv":
        action = decision["action"]
        fresh = _adds_knowledge(world, action)
        seq = child.submit(
            action["chain"],
            child.parties[action["party"]].addresses[action["chain"]],
            action["contract"],
            action["method"],
            tuple(action["args"]),
            party=action["party"],
        )
        call = child.exec_call(seq)
        if call.status == "rejected" and not fresh:
            return None, stopped
    else:
        raise DvpError(f"unknown decision type {kind}")
    return child, stopped


def explore(
    scenario: Scenario,
    adversaries: Optional[Sequence[str]] = None,
    budget: Optional[SearchBudget] = None,
    leaf_check=None,
) -> ExploreResult:
    """Exhaustive bounded search.  ``leaf_check(world, ctx)`` may add extra
    predicates: it runs on every quiescent leaf and a non-None string is
    reported as a violation of that class."""
    scenario.validate()
    if adversaries is None:
        adversaries = _adversary_list(scenario)
    if budget is None:
        budget = SearchBudget.from_scenario(scenario)
    root, ctx = build(scenario)
    honest = {
        party: make_strategy(ctx, exploration=True)
        for party in root.parties
        if party not in adversaries
    }
    result = ExploreResult(scenario=scenario.to_dict(), adversaries=list(adversaries))
    seen_violations = set()
    _saturate_offchain(root, honest)
    visited = {root.snapshot() + "|"}
    stack: List[Tuple[World, FrozenSet[str], int]] = [(root, frozenset(), 0)]
    while stack:
        world, stopped, depth = stack.pop()
        result.states_visited += 1
        if budget.max_states is not None and result.states_visited > budget.max_states:
            result.exhausted = False
            break
        decisions = _decisions(world, ctx, honest, adversaries, stopped, budget)
        if not decisions:
            passed, judged = atomicity_verdict(world, ctx, budget, adversaries)
            findings = []
            if not passed:
                findings.append(("atomicity",) + classify_violation(judged, ctx))
            if leaf_check is not None:
                extra = leaf_check(judged, ctx)
                if extra is not None:
                    findings.append(("leaf-check", extra, classify_violation(judged, ctx)[1]))
            for predicate, klass, descriptor in findings:
                fingerprint = judged.snapshot()
                if (predicate, klass, fingerprint) not in seen_violations:
                    seen_violations.add((predicate, klass, fingerprint))
                    result.violations.append(
                        Violation(
                            predicate=predicate,
                            klass=klass,
                            fingerprint=fingerprint,
                            descriptor=descriptor,
                            actions=list(judged.actions),
                        )
                    )
            continue
        for decision in reversed(decisions):
            cost = _STEP_COST[decision["type"]]
            if depth + cost > budget.max_depth:
                result.exhausted = False
                continue
            child, child_stopped = _apply_decision(world, decision, stopped)
            if child is None:
                continue
            _saturate_offchain(child, honest)
            key = child.snapshot() + "|" + ",".join(sorted(child_stopped))
            if key in visited:
                continue
            visited.add(key)
            stack.append((child, child_stopped, depth + cost))
    return result


def replay_attack_scenario(
    eligibility: bool, seed: int = 0, depth: int = 24
) -> ExploreResult:
    """The two-transaction replay differential: a locked transfer plus a
    throwaway id through which an adversary replays an observed ciphertext."""
    base = Scenario(protocol="replay", eligibility=eligibility, seed=seed, depth=depth)
    merged: Optional[ExploreResult] = None
    for adversary in ("buyer", "seller"):
        outcome = explore(replace(base, adversary=adversary))
        merged = outcome if merged is None else merged.merged_with(outcome)
    return merged
