import numpy as np

from pqlm.circuit import IntBackend, FloatBackend, run_plan, build_attention_plans
from pqlm.circuit.compile import serialize_plan, deserialize_plan, serialize_plan_set, deserialize_plan_set
from pqlm.encattn import EncAttnConfig, FheMode, calibrate_block, HybridModel
from pqlm.fhe.params import micro_params
from pqlm.model.config import ModelConfig, GenerationConfig
from pqlm.model.weights import init_weights
from pqlm.model.io import load_prompts, encode_text
from pqlm.model.decoder import Decoder, generate
from pqlm.quant import quantize

cfg = ModelConfig()
weights = init_weights(cfg)
enc = EncAttnConfig(mode=FheMode.SIMULATE, crypto=micro_params())
prompts = load_prompts()[:8]
seqs = [encode_text(p)[:12] for p in prompts]
calib = calibrate_block(weights, enc, seqs)
print("calib ranges:")
for (layer, label), rec in sorted(calib.records.items()):
    print(f"  L{layer} {label:6s} [{rec.lo:+.4f}, {rec.hi:+.4f}] n={rec.count}")

plans = build_attention_plans(enc, 6, weights=weights, layer=0, calibration=calib)
for t, plan in enumerate(plans):
    print(f"plan t={t}: nodes={len(plan.nodes)} pbs={plan.pbs_count} "
          f"inputs={len(plan.inputs)} outputs={len(plan.outputs)} bytes={len(serialize_plan(plan))}")

# serialization roundtrip
blob = serialize_plan_set(plans)
plans2 = deserialize_plan_set(blob, enc.crypto)
same = all(
    len(a.nodes) == len(b.nodes) and a.pbs_count == b.pbs_count
    and a.inputs == b.inputs and a.outputs == b.outputs
    for a, b in zip(plans, plans2)
)
print("plan set roundtrip consistent:", same, f"({len(blob)} bytes)")

# int vs float on random in-box inputs, t=0 then t=1 with carried codes
rng = np.random.default_rng(7)
int_b = IntBackend(enc.crypto)
flt_b = FloatBackend(enc.crypto)
viol = 0
worst_ratio = 0.0
for trial in range(200):
    int_kv, flt_kv = {}, {}
    for t in (0, 1, 2):
        plan = plans[t]
        qp = plan.qparams
        x = rng.uniform(qp["x"].observed_min, qp["x"].observed_max, size=cfg.d_emb)
        iin = {f"x.{j}": int(quantize(x[j], qp["x"])) - qp["x"].zero_point for j in range(cfg.d_emb)}
        fin = {f"x.{j}": float(x[j]) for j in range(cfg.d_emb)}
        iin.update(int_kv); fin.update(flt_kv)
        ir = run_plan(plan, iin, int_b)
        fr = run_plan(plan, fin, flt_b)
        for label, nid in plan.outputs.items():
            node = plan.nodes[nid]
            got = ir.outputs[label] * node.scale
            want = fr.outputs[label]
            err = abs(got - want)
            if err > node.deviation + 1e-12:
                viol += 1
                if viol < 5:
                    print(f"VIOLATION t={t} {label}: err={err:.5f} bound={node.deviation:.5f}")
            if node.deviation > 0:
                worst_ratio = max(worst_ratio, err / node.deviation)
            if label.startswith(("kcache.", "vcache.")):
                carried = f"{label[0]}.t{t}.{label.split('.')[1]}.{label.split('.')[2]}"
                int_kv[carried] = ir.outputs[label]
                flt_kv[carried] = fr.outputs[label]
print(f"bound violations: {viol} / worst err/bound ratio: {worst_ratio:.3f}")

# hybrid: disable == plain decoder, simulate runs
dec = Decoder(weights)
gen_cfg = GenerationConfig(max_new_tokens=3, top_k=1)
prompt = encode_text("the cat")[:4]
ref_steps, _ = generate(dec, prompt, gen_cfg)
h_dis = HybridModel(weights, EncAttnConfig(mode=FheMode.DISABLE, crypto=micro_params()))
r_dis = h_dis.generate(prompt, gen_cfg)
print("disable == plain:", [s.token for s in ref_steps] == [s.token for s in r_dis.steps])

h_sim = HybridModel(weights, enc, calibration=calib, max_positions=8)
r_sim = h_sim.generate(prompt, gen_cfg)
print("simulate tokens:", [s.token for s in r_sim.steps], "pbs/step:",
      [s.pbs_used for s in r_sim.steps], "compile_s:", round(r_sim.compile_s, 3))
print("plan pbs/position:", r_sim.plan_pbs_per_position[:8])
err0 = np.abs(r_sim.steps[0].enc_out[0] - r_sim.steps[0].ideal_out[0])
print("step0 |enc-ideal| max:", err0.max(), "bound max:", r_sim.steps[0].bound_out[0].max())

# compile-once: second hybrid with same cache hits
h_sim2 = HybridModel(weights, enc, calibration=calib, max_positions=8,
                     plan_cache=h_sim.plan_cache)
print("cache: compiles=", h_sim.plan_cache.compiles, "hits=", h_sim.plan_cache.hits)
