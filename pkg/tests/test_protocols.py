import itertools

import pytest

from dvplab.decryption import EVENT_KEY_RELEASED
from dvplab.errors import ScenarioError
from dvplab.oracle import EVENT_KEY_REQUESTED
from dvplab.protocols import (
    Scenario,
    build,
    expected_outcome,
    outcome_of,
    replay_actions,
    run,
    verify_consistency,
)

BRANCHES = ("success", "seller_cancel", "buyer_cancel_pre_lock", "payment_failure")


class TestScenarioConfig:
    def test_defaults_validate(self):
        Scenario().validate()

    def test_unknown_key_fails_fast(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("protocol=erc7573\nnonsense=1\n")
        with pytest.raises(ScenarioError) as err:
            Scenario.from_file(str(path))
        assert "nonsense" in str(err.value)

    def test_file_parsing(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text(
            "# comment\nprotocol=erc7573\nbranch=seller_cancel\n"
            "oracle_mode=threshold:2:3\nhash_eq_enc=on\nseed=5\n"
        )
        scenario = Scenario.from_file(str(path))
        assert scenario.branch == "seller_cancel"
        assert scenario.hash_eq_enc is True
        assert scenario.seed == 5
        assert scenario.parse_oracle_mode().n == 3

    def test_malformed_line_number_reported(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("protocol=erc7573\nthis line has no equals\n")
        with pytest.raises(ScenarioError) as err:
            Scenario.from_file(str(path))
        assert ":2:" in str(err.value)

    def test_bad_oracle_mode(self):
        with pytest.raises(ScenarioError):
            Scenario(oracle_mode="threshold:4:3").validate()
        with pytest.raises(ScenarioError):
            Scenario(oracle_mode="quorum").validate()

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "s.cfg"
        path.write_text("seed=1\nseed=2\n")
        with pytest.raises(ScenarioError):
            Scenario.from_file(str(path))


class TestHonestGrid:
    @pytest.mark.parametrize(
        "branch,side,mode,heq",
        list(itertools.product(BRANCHES, ("asset", "payment"),
                               ("single", "threshold:2:3"), (False, True))),
    )
    def test_branch_reaches_expected_terminal(self, branch, side, mode, heq):
        scenario = Scenario(branch=branch, locking_side=side,
                            oracle_mode=mode, hash_eq_enc=heq)
        result = run(scenario)
        assert result.outcome == expected_outcome(scenario)

    def test_publish_release_variant(self):
        result = run(Scenario(oracle_mode="threshold:3:4", threshold_release="publish"))
        assert result.outcome == "swap-completed"

    def test_exactly_one_request_and_release_per_run(self):
        for branch in BRANCHES:
            result = run(Scenario(branch=branch))
            events = list(result.world.events.values())
            requested = [e for e in events if e.name == EVENT_KEY_REQUESTED]
            released = [e for e in events if e.name == EVENT_KEY_RELEASED]
            assert len(requested) == 1, branch
            assert len(released) == 1, branch

    def test_baseline_protocols_complete(self):
        assert run(Scenario(protocol="htlc")).outcome == "swap-completed"
        assert run(Scenario(protocol="double_lock")).outcome == "swap-completed"
        assert run(Scenario(protocol="htlc_wrapper")).outcome == "swap-completed"
        assert run(Scenario(protocol="htlc_wrapper",
                            branch="seller_cancel")).outcome == "fully-reverted"

    def test_deterministic_traces(self):
        a = run(Scenario(seed=77))
        b = run(Scenario(seed=77))
        assert a.world.actions == b.world.actions
        assert a.world.snapshot() == b.world.snapshot()
        c = run(Scenario(seed=78))
        assert c.world.snapshot() != a.world.snapshot()


class TestVerifyConsistency:
    def test_honest_setup_verifies_both_pairs(self):
        world, ctx = build(Scenario())
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        assert verify_consistency(
            world, ctx.lock_from, ctx.success.enc, ctx.success.hashed, dec_ref, ctx.tx_id
        )
        assert verify_consistency(
            world, ctx.lock_to, ctx.failure.enc, ctx.failure.hashed, dec_ref, ctx.tx_id
        )

    def test_mismatched_hash_fails(self):
        world, ctx = build(Scenario())
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        assert not verify_consistency(
            world, ctx.lock_from, ctx.success.enc, ctx.failure.hashed, dec_ref, ctx.tx_id
        )

    def test_foreign_transaction_fails(self):
        world, ctx = build(Scenario())
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        assert not verify_consistency(
            world, ctx.lock_from, ctx.success.enc, ctx.success.hashed, dec_ref, ctx.tx_id + 1
        )

    def test_undecryptable_is_false_not_raise(self):
        world, ctx = build(Scenario())
        dec_ref = world.contract_refs[ctx.dec_contract].text()
        world.parties[ctx.lock_from].knowledge.add("garbage")
        assert not verify_consistency(
            world, ctx.lock_from, "garbage", ctx.success.hashed, dec_ref, ctx.tx_id
        )


class TestReplay:
    def test_roundtrip_reproduces_fingerprint(self):
        result = run(Scenario(branch="seller_cancel"))
        world = replay_actions(result.ctx.scenario, result.world.actions)
        assert world.snapshot() == result.world.snapshot()
        assert world.actions == result.world.actions

    def test_replay_across_protocols(self):
        for scenario in (
            Scenario(protocol="htlc"),
            Scenario(protocol="double_lock"),
            Scenario(protocol="htlc_wrapper", branch="payment_failure"),
            Scenario(oracle_mode="threshold:2:3", threshold_release="publish"),
        ):
            result = run(scenario)
            world = replay_actions(scenario, result.world.actions)
            assert world.snapshot() == result.world.snapshot()

    def test_outcome_of_detects_mixed(self):
        result = run(Scenario())
        # tamper: move a token directly
        ledger = result.world.chains["asset"].ledger
        ledger.credit(result.world.parties["buyer"].addresses["asset"], 1)
        ledger.balances[result.world.parties["seller"].addresses["asset"]] -= 1
        assert outcome_of(result.world, result.ctx) == "mixed"
