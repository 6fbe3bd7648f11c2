import numpy as np

from pqlm.circuit import IntBackend, run_plan, build_attention_plans
from pqlm.encattn import EncAttnConfig, FheMode, calibrate_block
from pqlm.fhe.keys import generate_key_material
from pqlm.fhe.params import micro_params
from pqlm.model.config import ModelConfig
from pqlm.model.io import load_prompts, encode_text
from pqlm.model.weights import init_weights
from pqlm.protocol import (
    ClientSession, ServerSession, InProcessTransport, TcpServer, TcpClient,
    Frame, TYPE_CIPHERTEXT_BATCH, TYPE_ERROR, pack_labeled_blobs, unpack_error,
    ProtocolError,
)
from pqlm.quant import quantize

cfg = ModelConfig()
weights = init_weights(cfg)
enc = EncAttnConfig(mode=FheMode.EXECUTE, crypto=micro_params())
seqs = [encode_text(p)[:12] for p in load_prompts()[:8]]
calib = calibrate_block(weights, enc, seqs)
plans = build_attention_plans(enc, 4, weights=weights, layer=0, calibration=calib)
km = generate_key_material(enc.crypto)

rng = np.random.default_rng(11)
qp_x = plans[0].qparams["x"]
xs = [rng.uniform(qp_x.observed_min, qp_x.observed_max, size=cfg.d_emb)
      for _ in range(3)]

# reference: simulate (plain int codes) with carried kv
int_b = IntBackend(enc.crypto)
int_kv = {}
ref_vals = []
for t, x in enumerate(xs):
    plan = plans[t]
    iin = {f"x.{j}": int(quantize(x[j], plan.qparams["x"])) - plan.qparams["x"].zero_point
           for j in range(cfg.d_emb)}
    iin.update(int_kv)
    ir = run_plan(plan, iin, int_b)
    for label, nid in plan.outputs.items():
        if label.startswith(("kcache.", "vcache.")):
            parts = label.split(".")
            int_kv[f"{label[0]}.t{t}.{parts[1]}.{parts[2]}"] = ir.outputs[label]
    ref_vals.append({lbl: ir.outputs[nid_l] * plan.nodes[plan.outputs[lbl]].scale
                     for lbl, nid_l in ((lbl, lbl) for lbl in plan.outputs)
                     if lbl.startswith("out.")})
ref_pbs = [plans[t].pbs_count for t in range(3)]

def drive(round_trip):
    client = ClientSession(km, plans)
    for f in client.handshake_frames():
        client.expect_ack(round_trip(f))
    out = []
    for t, x in enumerate(xs):
        res = client.parse_result(round_trip(client.batch_frame(t, x)))
        out.append(res)
    return out

# in-process
server = ServerSession(enc.crypto)
tr = InProcessTransport(server)
steps = drive(tr.round_trip)
ok = True
for t, step in enumerate(steps):
    for lbl, val in step.values.items():
        if abs(val - ref_vals[t][lbl]) > 1e-12:
            ok = False
            print(f"MISMATCH t={t} {lbl}: {val} vs {ref_vals[t][lbl]}")
    if step.pbs_used != ref_pbs[t]:
        ok = False
        print(f"PBS MISMATCH t={t}: {step.pbs_used} vs {ref_pbs[t]}")
print("in-process protocol matches simulate:", ok,
      f"pbs={[s.pbs_used for s in steps]}")

# order-violation errors
fresh = ServerSession(enc.crypto)
tr2 = InProcessTransport(fresh)
client2 = ClientSession(km, plans)
reply = tr2.round_trip(client2.batch_frame(0, xs[0]))
assert reply.type == TYPE_ERROR, "batch before key must error"
code, msg = unpack_error(reply.payload)
print("early batch rejected:", code, msg)
hs = client2.handshake_frames()
client2.expect_ack(tr2.round_trip(hs[0]))
reply = tr2.round_trip(client2.batch_frame(0, xs[0]))
assert reply.type == TYPE_ERROR, "batch before plan must error"
client2.expect_ack(tr2.round_trip(hs[1]))
reply = tr2.round_trip(client2.batch_frame(1, xs[0]))  # skip position 0
assert reply.type == TYPE_ERROR, "out-of-order position must error"
code, msg = unpack_error(reply.payload)
print("out-of-order rejected:", code, msg)

# TCP loopback
srv = TcpServer(lambda: ServerSession(enc.crypto)).serve_background()
with TcpClient(srv.host, srv.port) as tc:
    steps_tcp = drive(tc.round_trip)
srv.close()
tcp_ok = all(
    abs(a.values[l] - b.values[l]) < 1e-12
    for a, b in zip(steps, steps_tcp) for l in a.values
) and [s.pbs_used for s in steps_tcp] == ref_pbs
print("tcp protocol matches:", tcp_ok)
print("ALL PROTOCOL SMOKE CHECKS DONE")
