"""Command-line interface.

Subcommands:

* ``keygen``   — generate client key material (+ public evaluation key).
* ``compile``  — build and save the static attention plan set.
* ``generate`` — run hybrid generation from a prompt, any mode.
* ``bench``    — accuracy/timing/bootstrap sweep, CSV or JSON out.
* ``serve``    — host the encrypted-attention evaluator on a TCP port.
* ``query``    — run generation against a running server.

Everything defaults to the micro crypto profile and the bundled
deterministic toy weights, so each command works out of the box.
The crypto here uses deliberately tiny, insecure parameters — this is
a study artifact, not a privacy tool.
"""
from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .bench.runner import ExperimentSpec, render_csv, render_json, run_experiment
from .circuit.compile import PlanCache, serialize_plan_set
from .encattn.calibration import CalibrationTable, calibrate_block
from .encattn.config import EncAttnConfig, FheMode
from .encattn.hybrid import HybridModel
from .fhe.keys import (
    deserialize_key_material,
    generate_key_material,
    make_eval_key,
    serialize_eval_key,
    serialize_key_material,
)
from .fhe.params import CryptoParams, micro_params, toy_params
from .model.config import GenerationConfig, ModelConfig
from .model.decoder import Decoder, generate as plain_generate
from .model.io import decode_tokens, encode_text, load_prompts
from .model.weights import Weights, init_weights, load_weights, save_weights
from .protocol.remote import RemoteAttentionModel
from .protocol.session import ServerSession
from .protocol.transport import TcpClient, TcpServer


def _params(name: str, seed: int) -> CryptoParams:
    if name == "micro":
        return micro_params(seed)
    if name == "toy":
        return toy_params(seed)
    raise SystemExit(f"unknown crypto profile {name!r} (use micro or toy)")


def _add_crypto_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--params", default="micro", choices=("micro", "toy"),
                   help="crypto profile (micro: n=16/N=64; toy: n=512/N=1024)")
    p.add_argument("--key-seed", type=int, default=1337,
                   help="seed for key-material randomness")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weights", default=None,
                   help="weights file (.pql3); omit to use seeded toy weights")
    p.add_argument("--weight-seed", type=int, default=2024,
                   help="seed for the built-in toy weights")


def _add_enc_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, nargs="+", default=[0],
                   help="decoder layers whose attention is compiled")
    p.add_argument("--scope", default="single", choices=("single", "all-heads"),
                   help="encrypt one attention head or all of them")
    p.add_argument("--n-bits", type=int, default=2,
                   help="quantization bits for activations (1-4)")
    p.add_argument("--plan-cache", default=None,
                   help="directory for compiled plan reuse across runs")


def _add_prompt_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prompt-file", default=None,
                   help="prompt corpus, one per line (default: bundled)")
    p.add_argument("--prompt-limit", type=int, default=None,
                   help="use only the first N prompts")
    p.add_argument("--max-prompt-tokens", type=int, default=12,
                   help="truncate each prompt to this many tokens")


def _resolve_weights(args) -> Weights:
    if args.weights:
        return load_weights(args.weights)
    return init_weights(ModelConfig(weight_seed=args.weight_seed))


def _enc_config(args, params: CryptoParams) -> EncAttnConfig:
    return EncAttnConfig(
        mode=FheMode(args.mode), target_layers=tuple(args.layers),
        head_scope=args.scope, n_bits=args.n_bits, crypto=params,
        plan_cache_dir=args.plan_cache)


def _calibration(weights: Weights, enc: EncAttnConfig, args) -> CalibrationTable:
    prompts = load_prompts(args.prompt_file)
    if args.prompt_limit:
        prompts = prompts[: args.prompt_limit]
    seqs = [encode_text(p)[: args.max_prompt_tokens] for p in prompts]
    return calibrate_block(weights, enc, [s for s in seqs if s])


# -- subcommands -------------------------------------------------------------


def cmd_keygen(args) -> int:
    params = _params(args.params, args.key_seed)
    t0 = time.perf_counter()
    km = generate_key_material(params)
    blob = serialize_key_material(km)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"client key material -> {args.out} ({len(blob)} bytes) "
          f"[SECRET: never send this]")
    if args.eval_key_out:
        ek = serialize_eval_key(make_eval_key(km))
        with open(args.eval_key_out, "wb") as fh:
            fh.write(ek)
        print(f"evaluation key      -> {args.eval_key_out} ({len(ek)} bytes)")
    print(f"profile={args.params} fingerprint={params.fingerprint().hex()[:16]} "
          f"({time.perf_counter() - t0:.2f}s)")
    return 0


def cmd_compile(args) -> int:
    params = _params(args.params, args.key_seed)
    weights = _resolve_weights(args)
    args.mode = "simulate"  # compilation is mode-independent
    enc = _enc_config(args, params)
    calib = _calibration(weights, enc, args)
    cache = PlanCache(args.plan_cache)
    model = HybridModel(weights, enc, calibration=calib, plan_cache=cache,
                        max_positions=args.max_positions)
    for layer in enc.target_layers:
        plans = model.plans[layer]
        print(f"layer {layer}: {len(plans)} position plans, "
              f"bootstraps/position {[p.pbs_count for p in plans]}")
    if args.out:
        if len(enc.target_layers) != 1:
            raise SystemExit("--out writes a single layer's plan set; "
                             "pass exactly one --layers value")
        blob = serialize_plan_set(model.plans[enc.target_layers[0]])
        with open(args.out, "wb") as fh:
            fh.write(blob)
        print(f"plan set -> {args.out} ({len(blob)} bytes)")
    print(f"compile time: {model.compile_s:.3f}s "
          f"(cache: {cache.compiles} compiled, {cache.hits} hits)")
    return 0


def _print_generation(result, weights, gen_cfg) -> None:
    text = decode_tokens(result.tokens)
    print(f"tokens: {result.tokens}")
    print(f"text:   {text!r}")
    walls = [s.wall_s for s in result.steps]
    pbs = sum(s.pbs_used for s in result.steps)
    if walls:
        print(f"steps: {len(walls)}  avg {sum(walls) / len(walls):.4f}s/token  "
              f"bootstraps: prefill {result.prefill_pbs} + generate {pbs}")
    print(f"compile: {result.compile_s:.3f}s  plan bytes: {result.plan_bytes}")


def cmd_generate(args) -> int:
    params = _params(args.params, args.key_seed)
    weights = _resolve_weights(args)
    enc = _enc_config(args, params)
    prompt = encode_text(args.prompt)
    if not prompt:
        raise SystemExit("empty prompt")
    gen_cfg = GenerationConfig(
        max_new_tokens=args.max_new_tokens, top_k=args.top_k,
        selection_rule="sample" if args.sample else "argmax",
        sample_seed=args.sample_seed, vocab_size=weights.config.vocab_size)
    if enc.mode == FheMode.DISABLE:
        model = HybridModel(weights, enc)
        result = model.generate(prompt, gen_cfg)
        _print_generation(result, weights, gen_cfg)
        return 0
    calib = _calibration(weights, enc, args)
    km = None
    if enc.mode == FheMode.EXECUTE:
        km = (deserialize_key_material(open(args.key, "rb").read(), params)
              if args.key else generate_key_material(params))
    model = HybridModel(weights, enc, calibration=calib, key_material=km,
                        max_positions=len(prompt) + args.max_new_tokens,
                        plan_cache=PlanCache(args.plan_cache))
    result = model.generate(prompt, gen_cfg)
    _print_generation(result, weights, gen_cfg)
    return 0


def cmd_bench(args) -> int:
    params = _params(args.params, args.key_seed)
    weights = _resolve_weights(args)
    rows = []
    cache = PlanCache(args.plan_cache)
    for mode in args.modes:
        args.mode = mode
        enc = _enc_config(args, params)
        spec = ExperimentSpec(
            enc=enc, prompt_path=args.prompt_file, weights=weights,
            top_k=tuple(args.top_k), max_new_tokens=tuple(args.new_tokens),
            repetitions=args.reps, output_format=args.format,
            prompt_limit=args.prompt_limit,
            max_prompt_tokens=args.max_prompt_tokens,
            use_escrow=args.escrow)
        report = run_experiment(spec, plan_cache=cache)
        rows.extend(report.rows)
        print(f"[{mode}] {len(report.cells)} cells, "
              f"{report.prompt_count} prompts, compile {report.compile_s:.3f}s",
              file=sys.stderr)
    text = render_csv(rows) if args.format == "csv" else render_json(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"report -> {args.out}", file=sys.stderr)
    else:
        print(text, end="")
    return 0


def cmd_serve(args) -> int:
    params = _params(args.params, args.key_seed)
    server = TcpServer(lambda: ServerSession(params), args.host, args.port)
    print(f"evaluator listening on {server.host}:{server.port} "
          f"(profile={args.params}); Ctrl-C to stop")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("stopping")
    finally:
        server.close()
    return 0


def cmd_query(args) -> int:
    params = _params(args.params, args.key_seed)
    weights = _resolve_weights(args)
    args.mode = "execute"
    enc = _enc_config(args, params)
    if len(enc.target_layers) != 1:
        raise SystemExit("query drives a single encrypted layer; "
                         "pass exactly one --layers value")
    prompt = encode_text(args.prompt)
    if not prompt:
        raise SystemExit("empty prompt")
    calib = _calibration(weights, enc, args)
    km = (deserialize_key_material(open(args.key, "rb").read(), params)
          if args.key else generate_key_material(params))
    gen_cfg = GenerationConfig(
        max_new_tokens=args.max_new_tokens, top_k=args.top_k,
        vocab_size=weights.config.vocab_size)
    with TcpClient(args.host, args.port) as tc:
        model = RemoteAttentionModel(
            weights, enc, calibration=calib, key_material=km,
            round_trip=tc.round_trip,
            max_positions=len(prompt) + args.max_new_tokens,
            plan_cache=PlanCache(args.plan_cache))
        result = model.generate(prompt, gen_cfg)
        _print_generation(result, weights, gen_cfg)
        print(f"server bootstraps: {model.remote_pbs_total}  "
              f"server wall: {model.remote_wall_total:.3f}s")
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pqlm",
        description="Toy transformer with attention under toy lattice FHE. "
                    "Insecure parameters; for study only.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate client + evaluation keys")
    _add_crypto_args(p)
    p.add_argument("--out", default="client.key", help="client key file")
    p.add_argument("--eval-key-out", default=None,
                   help="also write the public evaluation key here")
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("compile", help="build the static attention plans")
    _add_crypto_args(p)
    _add_model_args(p)
    _add_enc_args(p)
    _add_prompt_args(p)
    p.add_argument("--max-positions", type=int, default=16,
                   help="compile plans for positions 0..N-1")
    p.add_argument("--out", default=None, help="write the plan set here (.pqpl)")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("generate", help="hybrid generation from a prompt")
    _add_crypto_args(p)
    _add_model_args(p)
    _add_enc_args(p)
    _add_prompt_args(p)
    p.add_argument("--mode", default="simulate",
                   choices=("disable", "simulate", "execute"),
                   help="attention evaluation mode")
    p.add_argument("--prompt", required=True, help="prompt text")
    p.add_argument("--max-new-tokens", type=int, default=4)
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--sample", action="store_true",
                   help="sample from the top-k instead of greedy pick")
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--key", default=None,
                   help="client key file for execute mode (default: derive)")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("bench", help="accuracy/timing sweep to CSV or JSON")
    _add_crypto_args(p)
    _add_model_args(p)
    _add_enc_args(p)
    _add_prompt_args(p)
    p.add_argument("--modes", nargs="+", default=["simulate"],
                   choices=("disable", "simulate", "execute"),
                   help="modes to sweep (one section of rows per mode)")
    p.add_argument("--top-k", type=int, nargs="+",
                   default=[1, 2, 3, 5, 10])
    p.add_argument("--new-tokens", type=int, nargs="+", default=[4])
    p.add_argument("--reps", type=int, default=5,
                   help="timing repetitions per cell")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--escrow", action="store_true",
                   help="execute via the key-escrow oracle backend")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("serve", help="host the encrypted evaluator over TCP")
    _add_crypto_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="0 picks a free port and prints it")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("query", help="generate against a remote evaluator")
    _add_crypto_args(p)
    _add_model_args(p)
    _add_enc_args(p)
    _add_prompt_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-new-tokens", type=int, default=4)
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--key", default=None, help="client key file")
    p.set_defaults(fn=cmd_query)

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
