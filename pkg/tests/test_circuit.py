"""Static circuits: graph building, bootstrap placement, plans, cache."""
from __future__ import annotations

import numpy as np
import pytest

from pqlm.circuit import attention_graph
from pqlm.circuit.attention_graph import build_attention_plans, build_graph
from pqlm.circuit.compile import (
    CompileError,
    ExecutionPlan,
    PlanCache,
    deserialize_plan,
    deserialize_plan_set,
    place_pbs,
    serialize_plan,
    serialize_plan_set,
)
from pqlm.circuit.graph import (
    INPUT_CARRIED,
    KIND_LUT,
    KIND_MUL,
    GraphBuilder,
    signed_code,
)
from pqlm.circuit.executor import (
    FheBackend,
    FloatBackend,
    IntBackend,
    decode_output,
    run_plan,
)
from pqlm.encattn.config import HEAD_SCOPE_ALL, FheMode
from pqlm.fhe import micro_params
from pqlm.fhe.params import CryptoParams

from conftest import make_enc


def doubling_chain_plan(params, depth: int) -> ExecutionPlan:
    """x added to itself ``depth`` times; noise doubles per level while the
    value interval stays pinned at zero."""
    gb = GraphBuilder(params)
    cur = gb.input_node("x", 1.0, (0, 0))
    for i in range(depth):
        cur = gb.linear((cur, cur), (1, 1), 0, 1.0, (0.5, 0.5), 0.0,
                        label=f"depth{i}")
    gb.mark_output("y", cur)
    return place_pbs(gb, 1)


def tiny_plan(params) -> ExecutionPlan:
    """input -> affine -> rescale table -> square: one of every node kind."""
    gb = GraphBuilder(params)
    x = gb.input_node("x", 0.5, (-2, 2))
    aff = gb.linear((x,), (2,), 1, 0.5, (2.0,), 0.5, label="affine")
    half = gb.requant_lut(aff, 1.0, label="half")
    sq = gb.mul(half, half, label="square")
    gb.mark_output("y", sq)
    return place_pbs(gb, 1)


class TestSignedCode:
    def test_two_complement_decode(self):
        assert [signed_code(v, 5) for v in (0, 1, 15, 16, 31)] == [0, 1, 15, -16, -1]

    def test_wraps_modulo_space(self):
        assert signed_code(33, 5) == 1
        assert signed_code(-1, 5) == -1


class TestGraphBuilder:
    def test_interval_escape_rejected(self, micro):
        gb = GraphBuilder(micro)
        with pytest.raises(ValueError, match="leaves"):
            gb.input_node("x", 1.0, (-17, 0))
        with pytest.raises(ValueError, match="leaves"):
            gb.input_node("y", 1.0, (0, 16))

    def test_empty_interval_rejected(self, micro):
        gb = GraphBuilder(micro)
        with pytest.raises(ValueError, match="empty"):
            gb.input_node("x", 1.0, (3, 2))

    def test_duplicate_labels_rejected(self, micro):
        gb = GraphBuilder(micro)
        nid = gb.input_node("x", 1.0, (0, 1))
        with pytest.raises(ValueError, match="duplicate input"):
            gb.input_node("x", 1.0, (0, 1))
        gb.mark_output("y", nid)
        with pytest.raises(ValueError, match="duplicate output"):
            gb.mark_output("y", nid)

    def test_linear_interval_propagation(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (-2, 1))
        y = gb.linear((x,), (3,), 1, 1.0, (3.0,), 1.0)
        assert gb.nodes[y].interval == (-5, 4)
        z = gb.linear((x,), (-3,), 0, 1.0, (-3.0,), 0.0)
        assert gb.nodes[z].interval == (-3, 6)

    def test_linear_overflowing_interval_rejected(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (-2, 1))
        with pytest.raises(ValueError, match="leaves"):
            gb.linear((x,), (9,), 0, 1.0, (9.0,), 0.0)

    def test_linear_arity_mismatch(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (0, 1))
        with pytest.raises(ValueError, match="arity"):
            gb.linear((x,), (1, 2), 0, 1.0, (1.0, 2.0), 0.0)

    def test_mul_interval_is_product_hull(self, micro):
        gb = GraphBuilder(micro)
        a = gb.input_node("a", 1.0, (-2, 3))
        b = gb.input_node("b", 1.0, (-4, 1))
        m = gb.mul(a, b)
        assert gb.nodes[m].interval == (-12, 8)
        assert gb.nodes[m].scale == 1.0

    def test_lut_requires_full_space_table(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (0, 1))
        with pytest.raises(ValueError, match="full widened space"):
            gb.lut_node(x, (0, 1, 2, 3), 1.0, lambda v: v)

    def test_requant_lut_rescales_codes(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 0.5, (-8, 8))
        y = gb.requant_lut(x, 1.0)
        node = gb.nodes[y]
        # code c at scale .5 becomes round(c/2) at scale 1
        assert node.lut.entries[4] == 2
        assert signed_code(node.lut.entries[(-5) % 32], 5) == -2  # ties to even
        assert node.scale == 1.0


class TestPlacePbs:
    def test_static_counts_for_tiny_plan(self, micro):
        plan = tiny_plan(micro)
        assert plan.pbs_count == 1 + 2  # one table + one product
        kinds = [n.kind for n in plan.nodes]
        assert kinds.count(KIND_MUL) == 1 and kinds.count(KIND_LUT) == 1

    def test_doubling_chain_stays_refresh_free_at_depth_15(self, micro):
        plan = doubling_chain_plan(micro, 15)
        assert plan.pbs_count == 0
        assert all(n.kind != KIND_LUT for n in plan.nodes)
        # worst-case noise of the last node: 2^15 fresh units
        assert plan.nodes[-1].noise.magnitude == 2**15 * micro.fresh_noise_mag

    def test_doubling_chain_needs_exactly_one_refresh_at_depth_16(self, micro):
        plan = doubling_chain_plan(micro, 16)
        assert plan.pbs_count == 1
        refreshes = [n for n in plan.nodes if n.label.endswith(".refresh")]
        assert len(refreshes) == 1
        assert plan.nodes[-1].noise.magnitude < micro.pbs_input_budget

    def test_every_node_stays_below_bootstrap_budget(self, micro, weights,
                                                     calibration_for):
        plan = build_graph(make_enc(FheMode.SIMULATE), 3,
                           weights=weights, layer=0,
                           calibration=calibration_for())
        for node in plan.nodes:
            assert node.noise.magnitude < micro.pbs_input_budget, node.label

    def test_refresh_is_memoized_across_consumers(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (0, 0))
        cur = x
        # depth 15 stays refresh-free, but doubling it once more would not
        for i in range(15):
            cur = gb.linear((cur, cur), (1, 1), 0, 1.0, (0.5, 0.5), 0.0,
                            label=f"d{i}")
        # two separate consumers that each push past the budget
        out1 = gb.linear((cur, cur), (1, 1), 0, 1.0, (0.5, 0.5), 0.0, label="c1")
        out2 = gb.linear((cur, cur), (1, 1), 0, 1.0, (0.5, 0.5), 0.0, label="c2")
        gb.mark_output("a", out1)
        gb.mark_output("b", out2)
        plan = place_pbs(gb, 1)
        refreshes = [n for n in plan.nodes if n.label.endswith(".refresh")]
        assert len(refreshes) == 1
        assert plan.pbs_count == 1

    def test_oversized_coefficient_is_uncompilable(self, micro):
        gb = GraphBuilder(micro)
        x = gb.input_node("x", 1.0, (0, 0))
        y = gb.linear((x,), (49152,), 0, 1.0, (1.0,), 0.0, label="big")
        gb.mark_output("y", y)
        with pytest.raises(CompileError, match="coefficients too large"):
            place_pbs(gb, 1)

    def test_unrefreshable_product_is_uncompilable(self):
        params = CryptoParams(lwe_dim=16, ring_dim=64,
                              fresh_noise_mag=1 << 56)
        gb = GraphBuilder(params)
        a = gb.input_node("a", 1.0, (0, 1))
        b = gb.input_node("b", 1.0, (0, 1))
        ra = gb.requant_lut(a, 1.0, label="ra")
        rb = gb.requant_lut(b, 1.0, label="rb")
        m = gb.mul(ra, rb)
        gb.mark_output("y", m)
        with pytest.raises(CompileError, match="even when refreshed"):
            place_pbs(gb, 1)

    def test_bootstrap_noise_beyond_budget_is_uncompilable(self):
        params = CryptoParams(lwe_dim=16, ring_dim=64,
                              fresh_noise_mag=1 << 57)
        gb = GraphBuilder(params)
        gb.mark_output("x", gb.input_node("x", 1.0, (0, 1)))
        with pytest.raises(CompileError, match="exceeds its own input budget"):
            place_pbs(gb, 1)

    def test_carried_inputs_start_at_bootstrap_noise(self, micro):
        gb = GraphBuilder(micro)
        gb.mark_output("x", gb.input_node("x", 1.0, (0, 1),
                                          noise_kind=INPUT_CARRIED))
        plan = place_pbs(gb, 1)
        assert plan.nodes[0].noise.magnitude == float(micro.pbs_noise_mag)


class TestExecutor:
    def test_int_float_fhe_agree_on_tiny_plan(self, micro, km, escrow, blind):
        plan = tiny_plan(micro)
        for code in range(-2, 3):
            ints = run_plan(plan, {"x": code}, IntBackend(micro))
            floats = run_plan(plan, {"x": code * 0.5}, FloatBackend(micro))
            enc = run_plan(
                plan, {"x": km.encrypt(code % 32, plaintext_space=5)},
                FheBackend(escrow, micro))
            y_node = plan.nodes[plan.outputs["y"]]
            int_val = decode_output(ints.outputs["y"], y_node)
            enc_val = decode_output(enc.outputs["y"], y_node, km)
            assert int_val == enc_val
            assert abs(floats.outputs["y"] - int_val) <= y_node.deviation

    def test_blind_rotate_backend_matches_int_backend(self, micro, km, blind):
        plan = tiny_plan(micro)
        for code in (-2, 0, 2):
            ints = run_plan(plan, {"x": code}, IntBackend(micro))
            enc = run_plan(
                plan, {"x": km.encrypt(code % 32, plaintext_space=5)},
                FheBackend(blind, micro))
            assert km.decrypt(enc.outputs["y"]) % 32 == ints.outputs["y"] % 32

    def test_fhe_pbs_usage_matches_static_count(self, micro, km, escrow):
        plan = tiny_plan(micro)
        for code in (-2, 1):
            res = run_plan(plan, {"x": km.encrypt(code % 32, plaintext_space=5)},
                           FheBackend(escrow, micro))
            assert res.pbs_used == plan.pbs_count

    def test_int_backend_reports_static_count(self, micro):
        plan = tiny_plan(micro)
        assert run_plan(plan, {"x": 1}, IntBackend(micro)).pbs_used == plan.pbs_count

    def test_missing_input_error(self, micro):
        plan = tiny_plan(micro)
        with pytest.raises(KeyError, match="missing plan inputs"):
            run_plan(plan, {}, IntBackend(micro))

    def test_interval_violation_detected(self, micro):
        plan = tiny_plan(micro)
        with pytest.raises(AssertionError, match="escapes"):
            run_plan(plan, {"x": 9}, IntBackend(micro))
        # and the check can be disabled for diagnostics
        run_plan(plan, {"x": 3}, IntBackend(micro, check_intervals=False))

    def test_keep_node_values(self, micro):
        plan = tiny_plan(micro)
        res = run_plan(plan, {"x": 2}, IntBackend(micro), keep_node_values=True)
        assert res.node_values is not None
        assert len(res.node_values) == len(plan.nodes)

    def test_decode_output_paths(self, micro, km):
        plan = tiny_plan(micro)
        node = plan.nodes[plan.outputs["y"]]
        assert decode_output(3, node) == 3 * node.scale
        ct = km.encrypt(3, plaintext_space=5)
        assert decode_output(ct, node, km) == 3 * node.scale
        with pytest.raises(ValueError, match="key material"):
            decode_output(ct, node)

    def test_float_backend_needs_rebuilt_semantics(self, micro):
        plan = tiny_plan(micro)
        wire = deserialize_plan(serialize_plan(plan), micro)
        with pytest.raises(ValueError, match="no real-valued semantics"):
            run_plan(wire, {"x": 0.5}, FloatBackend(micro))

    def test_deserialized_plan_runs_identically_on_codes(self, micro):
        plan = tiny_plan(micro)
        wire = deserialize_plan(serialize_plan(plan), micro)
        for code in range(-2, 3):
            a = run_plan(plan, {"x": code}, IntBackend(micro)).outputs["y"]
            b = run_plan(wire, {"x": code}, IntBackend(micro)).outputs["y"]
            assert a == b


class TestPlanFormat:
    def test_roundtrip_is_byte_exact(self, micro):
        plan = tiny_plan(micro)
        blob = serialize_plan(plan)
        again = serialize_plan(deserialize_plan(blob, micro))
        assert blob == again

    def test_roundtrip_preserves_structure(self, micro):
        plan = tiny_plan(micro)
        back = deserialize_plan(serialize_plan(plan), micro)
        assert back.inputs == plan.inputs
        assert back.outputs == plan.outputs
        assert back.seq_len == plan.seq_len
        assert back.pbs_count == plan.pbs_count
        for a, b in zip(plan.nodes, back.nodes):
            assert (a.kind, a.inputs, a.interval, a.scale) == (
                b.kind, b.inputs, b.interval, b.scale)
            assert a.deviation == b.deviation
            assert a.noise.magnitude == b.noise.magnitude

    def test_bad_magic_rejected(self, micro):
        blob = bytearray(serialize_plan(tiny_plan(micro)))
        blob[:4] = b"NOPE"
        with pytest.raises(ValueError, match="magic"):
            deserialize_plan(bytes(blob), micro)

    def test_bad_version_rejected(self, micro):
        blob = bytearray(serialize_plan(tiny_plan(micro)))
        blob[4] = 9
        with pytest.raises(ValueError, match="version"):
            deserialize_plan(bytes(blob), micro)

    def test_fingerprint_mismatch_rejected(self, micro):
        blob = serialize_plan(tiny_plan(micro))
        with pytest.raises(ValueError, match="different crypto parameters"):
            deserialize_plan(blob, micro_params(seed=31337))

    def test_trailing_bytes_rejected(self, micro):
        blob = serialize_plan(tiny_plan(micro)) + b"\x00"
        with pytest.raises(ValueError, match="trailing"):
            deserialize_plan(blob, micro)

    def test_plan_set_roundtrip(self, micro):
        plans = [tiny_plan(micro), doubling_chain_plan(micro, 3)]
        blob = serialize_plan_set(plans)
        back = deserialize_plan_set(blob, micro)
        assert len(back) == 2
        assert serialize_plan_set(back) == blob

    def test_empty_plan_set_rejected(self, micro):
        with pytest.raises(ValueError, match="empty"):
            serialize_plan_set([])

    def test_plan_set_trailing_bytes_rejected(self, micro):
        blob = serialize_plan_set([tiny_plan(micro)]) + b"\x00"
        with pytest.raises(ValueError, match="trailing"):
            deserialize_plan_set(blob, micro)

    def test_byte_size_matches_serialization(self, micro):
        plan = tiny_plan(micro)
        assert plan.byte_size() == len(serialize_plan(plan))


class TestPlanCache:
    def test_compile_once_semantics(self, micro):
        cache = PlanCache()
        ticks = iter(range(100))
        clock = lambda: float(next(ticks))  # noqa: E731

        builds = []

        def build():
            builds.append(1)
            return [tiny_plan(micro)]

        plans1, dt1, cached1 = cache.get_or_compile("k", micro, build, clock)
        plans2, dt2, cached2 = cache.get_or_compile("k", micro, build, clock)
        assert (cached1, cached2) == (False, True)
        assert len(builds) == 1
        assert cache.compiles == 1 and cache.hits == 1
        assert dt1 == 1.0 and dt2 == 0.0
        assert plans1 is plans2

    def test_distinct_keys_compile_separately(self, micro):
        cache = PlanCache()
        cache.get_or_compile("a", micro, lambda: [tiny_plan(micro)])
        cache.get_or_compile("b", micro, lambda: [tiny_plan(micro)])
        assert cache.compiles == 2 and cache.hits == 0

    def test_disk_persistence_across_instances(self, micro, tmp_path):
        d = str(tmp_path / "plans")
        first = PlanCache(d)
        plans, _, _ = first.get_or_compile("k", micro,
                                           lambda: [tiny_plan(micro)])
        second = PlanCache(d)
        loaded, dt, cached = second.get_or_compile(
            "k", micro, lambda: pytest.fail("must not compile"))
        assert cached and dt == 0.0
        assert second.compiles == 0 and second.hits == 1
        assert serialize_plan_set(loaded) == serialize_plan_set(plans)

    def test_digest_depends_on_every_part(self):
        assert PlanCache.digest(b"a", b"b") != PlanCache.digest(b"ab", b"")
        assert PlanCache.digest(b"x") != PlanCache.digest(b"y")


@pytest.fixture(scope="module")
def plans3(weights, calibration_for):
    return build_attention_plans(make_enc(FheMode.SIMULATE), 3,
                                 weights=weights, layer=0,
                                 calibration=calibration_for())


class TestAttentionPlans:
    def test_one_plan_per_position(self, plans3):
        assert [p.seq_len for p in plans3] == [1, 2, 3]

    def test_first_position_has_no_products(self, plans3):
        assert all(n.kind != KIND_MUL for n in plans3[0].nodes)

    def test_bootstraps_grow_with_positions(self, plans3):
        counts = [p.pbs_count for p in plans3]
        assert counts[0] < counts[1] < counts[2]

    def test_expected_io_labels(self, plans3, weights):
        d = weights.config.d_emb
        first = plans3[0]
        assert set(first.inputs) == {f"x.{j}" for j in range(d)}
        assert {f"out.{j}" for j in range(d)} <= set(first.outputs)
        assert {"kcache.g0.0", "kcache.g0.1", "vcache.g0.0",
                "vcache.g0.1"} <= set(first.outputs)
        third = plans3[2]
        carried = {lbl for lbl in third.inputs if not lbl.startswith("x.")}
        assert carried == {f"{nm}.t{tau}.g0.{i}"
                           for nm in ("k", "v") for tau in (0, 1)
                           for i in range(weights.config.d_head)}

    def test_carried_inputs_marked_carried(self, plans3):
        third = plans3[2]
        for lbl, nid in third.inputs.items():
            node = third.nodes[nid]
            if lbl.startswith("x."):
                assert node.input_noise != INPUT_CARRIED
            else:
                assert node.input_noise == INPUT_CARRIED

    def test_all_heads_cost_at_least_single_head(self, weights, calibration_for):
        single = build_attention_plans(make_enc(FheMode.SIMULATE), 2,
                                       weights=weights, layer=0,
                                       calibration=calibration_for())
        full = build_attention_plans(
            make_enc(FheMode.SIMULATE, scope=HEAD_SCOPE_ALL), 2,
            weights=weights, layer=0,
            calibration=calibration_for(HEAD_SCOPE_ALL))
        for s, f in zip(single, full):
            assert f.pbs_count >= s.pbs_count
        assert full[1].pbs_count > single[1].pbs_count

    def test_outputs_respect_deviation_bounds(self, plans3, micro):
        rng = np.random.default_rng(21)
        for plan in plans3:
            for _ in range(20):
                int_in, float_in = {}, {}
                for lbl, nid in plan.inputs.items():
                    node = plan.nodes[nid]
                    code = int(rng.integers(node.interval[0],
                                            node.interval[1] + 1))
                    int_in[lbl] = code
                    float_in[lbl] = code * node.scale
                ints = run_plan(plan, int_in, IntBackend(micro))
                floats = run_plan(plan, float_in, FloatBackend(micro))
                for lbl, nid in plan.outputs.items():
                    node = plan.nodes[nid]
                    gap = abs(floats.outputs[lbl]
                              - ints.outputs[lbl] * node.scale)
                    assert gap <= node.deviation + 1e-9, (plan.seq_len, lbl)

    def test_build_graph_validation(self, weights, calibration_for):
        enc = make_enc(FheMode.SIMULATE)
        with pytest.raises(ValueError, match="at least one position"):
            build_graph(enc, 0, weights=weights, layer=0,
                        calibration=calibration_for())
        with pytest.raises(ValueError, match="not a target layer"):
            build_graph(enc, 1, weights=weights, layer=1,
                        calibration=calibration_for())

    def test_derived_qparams_cover_every_grid(self, calibration_for):
        qp = attention_graph.derive_plan_qparams(calibration_for(), 0, 2, 2)
        assert {"x", "q", "k", "v", "ctx", "out", "exp", "recip", "w"} <= set(qp)
