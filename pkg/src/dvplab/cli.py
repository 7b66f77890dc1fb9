"""Command-line front end.

Subcommands:
  run           execute a scenario with honest parties, write the trace
  explore       bounded exhaustive search for atomicity violations
  replay        re-execute a trace and check the terminal fingerprint
  oracle-serve  host the oracle endpoints over stdin/stdout JSON lines

Exit codes: 0 success; 1 protocol error in run; 2 bad configuration or
unparseable input; 3 explore found violations; 4 explore exhausted its
budget without covering the space; 5 replay diverged.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from dataclasses import replace
from typing import Optional

from . import analyzer, protocols, trace
from .errors import DvpError, ScenarioError, TraceError
from .keycodec import ContractRef, TxId, to_xml
from .oracle import OracleConfig, OracleContext, OracleService, parse_ciphertext


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvplab",
        description="Two-chain delivery-versus-payment laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", required=True, help="key=value scenario file")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", help="output file (trace or verdict)")
        p.add_argument("--oracle-mode", dest="oracle_mode",
                       help="single or threshold:k:n")
        p.add_argument("--eligibility", choices=("on", "off"))
        p.add_argument("--hash-eq-enc", dest="hash_eq_enc", nargs="?",
                       const="on", choices=("on", "off"))
        p.add_argument("--locking-side", dest="locking_side", choices=("asset", "payment"))
        p.add_argument("--branch", choices=protocols.BRANCHES)

    run_p = sub.add_parser("run", help="run a scenario with honest parties")
    add_common(run_p)

    explore_p = sub.add_parser("explore", help="search interleavings for violations")
    add_common(explore_p)
    explore_p.add_argument("--depth", type=int, help="max state-advancing steps")
    explore_p.add_argument("--ticks", type=int, help="max clock ticks per chain")
    explore_p.add_argument("--max-states", dest="max_states", type=int)
    explore_p.add_argument("--adversary", choices=protocols.ADVERSARIES)

    replay_p = sub.add_parser("replay", help="re-execute a recorded trace")
    replay_p.add_argument("--trace", required=True)

    serve_p = sub.add_parser("oracle-serve", help="serve oracle endpoints on stdio")
    serve_p.add_argument("--seed", type=int, default=0)
    serve_p.add_argument("--oracle-mode", dest="oracle_mode", default="single")
    serve_p.add_argument("--hash-eq-enc", dest="hash_eq_enc", nargs="?",
                         const="on", choices=("on", "off"))
    serve_p.add_argument("--eligibility", choices=("on", "off"), default="on")
    return parser


def _load_scenario(args) -> protocols.Scenario:
    scenario = protocols.Scenario.from_file(args.scenario)
    overrides = {}
    for name in ("seed", "oracle_mode", "locking_side", "branch"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "eligibility", None) is not None:
        overrides["eligibility"] = args.eligibility == "on"
    if getattr(args, "hash_eq_enc", None) is not None:
        overrides["hash_eq_enc"] = args.hash_eq_enc == "on"
    if getattr(args, "depth", None) is not None:
        overrides["depth"] = args.depth
    if getattr(args, "ticks", None) is not None:
        overrides["max_ticks"] = args.ticks
    if getattr(args, "max_states", None) is not None:
        overrides["max_states"] = args.max_states
    if getattr(args, "adversary", None) is not None:
        overrides["adversary"] = args.adversary
    scenario = replace(scenario, **overrides)
    scenario.validate()
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    try:
        result = protocols.run(scenario)
    except DvpError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 1
    text = trace.dump_trace(
        scenario.to_dict(), result.world.actions, result.world.snapshot()
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    print(
        f"outcome={result.outcome} expected={result.expected}",
        file=sys.stderr,
    )
    return 0 if result.ok else 1


def cmd_explore(args) -> int:
    try:
        scenario = _load_scenario(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    result = analyzer.explore(scenario)
    verdict = {
        "scenario": result.scenario,
        "adversaries": result.adversaries,
        "predicate": "atomicity",
        "states_visited": result.states_visited,
        "exhausted": result.exhausted,
        "violation_classes": result.classes(),
        "violations": [
            {
                "class": v.klass,
                "predicate": v.predicate,
                "fingerprint": v.fingerprint,
                "descriptor": v.descriptor,
                "trace": trace.dump_trace(result.scenario, v.actions, v.fingerprint),
            }
            for v in result.violations
        ],
    }
    text = json.dumps(verdict, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    print(
        f"states={result.states_visited} exhausted={result.exhausted} "
        f"violations={len(result.violations)} classes={result.classes()}",
        file=sys.stderr,
    )
    if result.violations:
        return 3
    if not result.exhausted:
        return 4
    return 0


def cmd_replay(args) -> int:
    try:
        scenario_dict, actions, recorded = trace.read_trace(args.trace)
        scenario = protocols.Scenario.from_dict(scenario_dict, source=args.trace)
    except (TraceError, ScenarioError) as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return 2
    try:
        world = protocols.replay_actions(scenario, actions)
    except DvpError as exc:
        print(f"replay diverged: {exc}", file=sys.stderr)
        return 5
    fingerprint = world.snapshot()
    if fingerprint != recorded:
        print(
            f"replay diverged: fingerprint {fingerprint} != recorded {recorded}",
            file=sys.stderr,
        )
        return 5
    print(f"replay ok: {fingerprint}", file=sys.stderr)
    return 0


def cmd_oracle_serve(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    config = OracleConfig(
        hash_eq_enc=args.hash_eq_enc == "on",
        eligibility_checks=args.eligibility == "on",
    )
    if args.oracle_mode == "single":
        service = OracleService.single(args.seed, config)
    else:
        scenario = protocols.Scenario(oracle_mode=args.oracle_mode)
        threshold = scenario.parse_oracle_mode()
        service = OracleService.threshold(threshold, args.seed, config)
    rng = random.Random(f"dvp-serve:{args.seed}")
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"error": "BadRequest"}), file=stdout, flush=True)
            continue
        print(json.dumps(_serve_one(service, rng, request), sort_keys=True),
              file=stdout, flush=True)
    return 0


def _serve_one(service: OracleService, rng: random.Random, request) -> dict:
    if not isinstance(request, dict):
        return {"error": "BadRequest"}
    op = request.get("op")
    try:
        if op == "request":
            issued = service.request_encrypted_hashed_key(
                ContractRef.parse(str(request["contract"])),
                TxId.parse(str(request["transaction"])),
                rng,
            )
            return {"encrypted": issued.encrypted.text(), "hashed": issued.hashed}
        if op == "verify":
            result = service.verify(parse_ciphertext(str(request["encrypted"])))
            return {
                "contract": result.contract.text(),
                "transaction": result.transaction.text(),
                "hashed": result.hashed,
            }
        if op == "decrypt":
            ctx = OracleContext(
                caller_contract=ContractRef.parse(str(request["caller_contract"])),
                caller_transaction=TxId.parse(str(request["caller_transaction"])),
            )
            doc = service.decrypt(parse_ciphertext(str(request["encrypted"])), ctx)
            return {
                "contract": doc.contract.text(),
                "transaction": doc.transaction.text(),
                "xml": to_xml(doc),
            }
        return {"error": "UnknownOp"}
    except KeyError as exc:
        return {"error": "MissingField", "field": str(exc)}
    except DvpError as exc:
        return {"error": type(exc).__name__}


def main(argv: Optional[list] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "explore":
        return cmd_explore(args)
    if args.command == "replay":
        return cmd_replay(args)
    if args.command == "oracle-serve":
        return cmd_oracle_serve(args)
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
