"""Command-line verification and reporting surface.

Subcommands:

* attn-check: run the attention equivalence suites; JSON report, exit 0
  only if every property holds.
* quant-report: blockwise INT8 stats (chosen clips, per-block MSE) for a
  tensor file.
* spike-report: spike expansion stats (firing rate, add/skip events) for
  a tensor file.
* scaling-table: CSV of modeled dense-vs-hybrid cost and memory across
  sequence lengths.
* plan-show: layer plan table with mechanism counts.
* layer-select: run the sensitivity-profile layer picker.
* loss-check: combined-loss breakdown for a fixture file or the built-in
  demo fixture.
* moba-trace: per-query block selections for seeded random inputs.

All JSON output carries schema_version and sorted keys; identical
arguments and seed give byte-identical bytes. Exit codes: 0 success,
1 check failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import costmodel, losses, quant, spike, stack, tensorio
from .attention import full_attention, linear_attention_parallel, linear_attention_recurrent
from .moba import MobaParams, moba_forward, moba_selections
from .sse import SSEParams, sse_forward
from .tensor_ops import NEG_INF, NumericsError, ShapeError, causal_additive_mask, softmax_rows, window_additive_mask

SCHEMA_VERSION = 1
DEFAULT_TOLERANCE = 1e-10


def _emit(text: str, out_path: str | None) -> None:
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj: dict, out_path: str | None) -> None:
    obj = {"schema_version": SCHEMA_VERSION, **obj}
    _emit(json.dumps(obj, sort_keys=True, indent=2) + "\n", out_path)


def _parse_int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def parse_length(text: str) -> int:
    """Sequence length with binary suffixes: 128k = 128*1024, 1M = 1024^2."""
    text = text.strip()
    if text.lower().endswith("k"):
        return int(text[:-1]) * 1024
    if text.lower().endswith("m"):
        return int(text[:-1]) * 1024 * 1024
    return int(text)


def _max_abs_diff(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b))) if a.size else 0.0


# ---------------------------------------------------------------- attn-check


def _swa_via_mask(q, k, v, window: int, fault: bool) -> np.ndarray:
    # explicit mask route so the fault flag can flip one mask bit
    n = q.shape[0]
    mask = causal_additive_mask(n) + window_additive_mask(n, window)
    if fault and n >= 2:
        mask[n - 1, 0] = NEG_INF
    return softmax_rows(q @ k.T, additive_mask=mask) @ v


def cmd_attn_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    sizes = _parse_int_list(args.sizes)
    dims = _parse_int_list(args.dims)
    errors = {
        "linear_parallel_vs_recurrent": 0.0,
        "sse_single_partition_vs_linear_recurrent": 0.0,
        "moba_select_all_vs_full": 0.0,
        "swa_full_window_vs_full": 0.0,
    }
    fault_pending = args.inject_fault
    for n in sizes:
        for d in dims:
            for _ in range(args.trials):
                q, k, v = (rng.standard_normal((n, d)) * 0.3 for _ in range(3))
                lin_par = linear_attention_parallel(q, k, v)
                lin_rec = linear_attention_recurrent(q, k, v)
                errors["linear_parallel_vs_recurrent"] = max(
                    errors["linear_parallel_vs_recurrent"], _max_abs_diff(lin_par, lin_rec)
                )
                sse_params = SSEParams(num_partitions=1, top_k=1, gate_weight=np.zeros((d, 1)))
                sse_out = sse_forward(q, q, k, v, sse_params).outputs
                errors["sse_single_partition_vs_linear_recurrent"] = max(
                    errors["sse_single_partition_vs_linear_recurrent"], _max_abs_diff(sse_out, lin_rec)
                )
                full = full_attention(q, k, v)
                moba_params = MobaParams(block_size=2, top_k=(n + 1) // 2 + 1)
                errors["moba_select_all_vs_full"] = max(
                    errors["moba_select_all_vs_full"],
                    _max_abs_diff(moba_forward(q, k, v, moba_params), full),
                )
                fault = fault_pending and n >= 2
                if fault:
                    fault_pending = False
                errors["swa_full_window_vs_full"] = max(
                    errors["swa_full_window_vs_full"],
                    _max_abs_diff(_swa_via_mask(q, k, v, n, fault), full),
                )
    properties = [
        {"name": name, "max_abs_error": err, "tolerance": args.tolerance, "pass": err <= args.tolerance}
        for name, err in sorted(errors.items())
    ]
    ok = all(p["pass"] for p in properties)
    _emit_json(
        {"command": "attn-check", "seed": args.seed, "properties": properties, "pass": ok},
        args.out,
    )
    return 0 if ok else 1


# -------------------------------------------------------------- quant-report


def cmd_quant_report(args) -> int:
    w = tensorio.load_tensor(args.input)
    if w.ndim != 2:
        raise ShapeError(f"quant-report needs a 2-D tensor, got shape {w.shape}")
    grid = tuple(float(part) for part in args.grid.split(",") if part)
    qw = quant.quantize_weight_blocks(w, grid=grid, block_shape=(args.block_size, args.block_size))
    if args.save:
        quant.save_block_matrix(args.save, qw)
    _emit_json(
        {
            "command": "quant-report",
            "shape": list(qw.shape),
            "block_shape": list(qw.block_shape),
            "grid": list(grid),
            "chosen_clip": qw.clips.tolist(),
            "mse_per_block": qw.mse.tolist(),
            "mean_mse": float(qw.mse.mean()),
        },
        args.out,
    )
    return 0


# -------------------------------------------------------------- spike-report


def cmd_spike_report(args) -> int:
    x = tensorio.load_tensor(args.input)
    if x.ndim != 2:
        raise ShapeError(f"spike-report needs a 2-D tensor, got shape {x.shape}")
    qa = quant.quantize_activation_groups(x, group_size=args.group_size)
    train = spike.spike_encode(qa)
    if args.weight:
        w = tensorio.load_tensor(args.weight)
    else:
        w = np.ones((x.shape[1], 1))  # notional single output column
    qw = quant.quantize_weight_blocks(w, block_shape=(args.group_size, args.group_size))
    _, report = spike.spike_matmul(train, qw)
    _emit_json(
        {
            "command": "spike-report",
            "shape": list(x.shape),
            "group_size": args.group_size,
            "firing_rate": spike.firing_rate(train),
            "add_events": report.add_events,
            "skipped_events": report.skipped_events,
            "dense_mac_equivalent": report.dense_mac_equivalent,
        },
        args.out,
    )
    return 0


# ------------------------------------------------------------- scaling-table


def _load_plan(path: str | None) -> stack.LayerPlan:
    if path is None:
        return stack.default_plan()
    with open(path) as fh:
        return stack.LayerPlan.loads(fh.read())


def cmd_scaling_table(args) -> int:
    lengths = [parse_length(part) for part in args.lengths.split(",") if part]
    plan = _load_plan(args.plan)
    params = costmodel.CostParams(
        d_model=args.d_model,
        moba_block_size=args.block_size,
        moba_top_k=args.top_k,
    )
    rows = costmodel.scaling_rows(lengths, params, plan=plan, schedule=args.schedule)
    lines = ["n,fa_cost,dssa_cost,ratio,fa_kv_bytes,dssa_kv_bytes,moba_activation_ratio"]
    for r in rows:
        lines.append(
            f"{r.n},{r.fa_cost:.10g},{r.dssa_cost:.10g},{r.ratio:.10g},"
            f"{r.fa_kv_bytes:.10g},{r.dssa_kv_bytes:.10g},{r.moba_activation_ratio:.10g}"
        )
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ----------------------------------------------------------------- plan-show


def cmd_plan_show(args) -> int:
    plan = _load_plan(args.plan)
    counts = plan.counts()
    lines = [
        f"layers: {len(plan)}",
        "counts: " + " ".join(f"{kind}={counts[kind]}" for kind in stack.LAYER_KINDS),
        "",
        "layer  mechanism",
    ]
    for i, kind in enumerate(plan.kinds):
        lines.append(f"{i:>5}  {kind}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# -------------------------------------------------------------- layer-select


def cmd_layer_select(args) -> int:
    with open(args.profile) as fh:
        profile = stack.SensitivityProfile.from_json(json.load(fh))
    selected = stack.select_moba_layers(profile, args.threshold)
    _emit_json(
        {
            "command": "layer-select",
            "num_layers": len(profile.scores),
            "threshold": args.threshold,
            "selected": selected,
        },
        args.out,
    )
    return 0


# ---------------------------------------------------------------- loss-check


def _demo_loss_fixture(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n, num_partitions, top_k, vocab = 8, 4, 2, 16
    gates = np.full((n, num_partitions), 1.0 / num_partitions)
    freqs = np.full((n, num_partitions), top_k / num_partitions)
    aux = losses.aux_loss(gates, freqs, num_partitions, top_k)
    teacher = rng.standard_normal((n, vocab))
    student = teacher + 0.1 * rng.standard_normal((n, vocab))
    kd = losses.kd_topk_kl(teacher, student, top_k=8)
    reps_t = [rng.standard_normal((n, 4)) for _ in range(2)]
    reps_s = [r + 0.05 for r in reps_t]
    mse = losses.layerwise_mse(reps_s, reps_t)
    return {
        "mode": "llm",
        "ce": 2.0,
        "aux": aux.per_token,
        "kd": kd.value,
        "mse": mse,
        "c": losses.LLM_AUX_COEFF,
        "alpha": losses.LLM_KD_COEFF,
        "beta": losses.LLM_MSE_COEFF,
    }


def cmd_loss_check(args) -> int:
    if args.fixture:
        with open(args.fixture) as fh:
            fixture = json.load(fh)
    else:
        fixture = _demo_loss_fixture(args.seed)
    mode = fixture.get("mode", "llm")
    if mode == "llm":
        breakdown = losses.combined_loss_llm(
            ce=float(fixture["ce"]),
            aux=float(fixture["aux"]),
            kd=float(fixture["kd"]),
            mse=float(fixture["mse"]),
            c=float(fixture.get("c", losses.LLM_AUX_COEFF)),
            alpha=float(fixture.get("alpha", losses.LLM_KD_COEFF)),
            beta=float(fixture.get("beta", losses.LLM_MSE_COEFF)),
        )
    elif mode == "vlm":
        breakdown = losses.combined_loss_vlm(
            kd=float(fixture["kd"]),
            mse=float(fixture["mse"]),
            alpha=float(fixture.get("alpha", losses.VLM_KD_COEFF)),
            beta=float(fixture.get("beta", losses.VLM_MSE_COEFF)),
        )
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    _emit_json({"command": "loss-check", "mode": mode, **breakdown.to_json()}, args.out)
    return 0


# ---------------------------------------------------------------- moba-trace


def cmd_moba_trace(args) -> int:
    params = MobaParams(block_size=args.block_size, top_k=args.top_k)
    if args.queries and args.keys:
        q = tensorio.load_tensor(args.queries)
        k = tensorio.load_tensor(args.keys)
    else:
        rng = np.random.default_rng(args.seed)
        q = rng.standard_normal((args.n, args.d))
        k = rng.standard_normal((args.n, args.d))
    selections = moba_selections(q, k, params)
    _emit_json(
        {
            "command": "moba-trace",
            "n": q.shape[0],
            "block_size": args.block_size,
            "top_k": args.top_k,
            "selections": [s.to_json() for s in selections],
        },
        args.out,
    )
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dssalab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attn-check", help="attention equivalence suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default="1,4,8,16", help="comma-separated sequence lengths")
    p.add_argument("--dims", default="2,4", help="comma-separated head dims")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--inject-fault", action="store_true",
                   help="flip one mask bit in the window suite (negative control)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_attn_check)

    p = sub.add_parser("quant-report", help="blockwise INT8 weight stats")
    p.add_argument("--input", required=True, help="tensor file (json or binary)")
    p.add_argument("--grid", default=",".join(str(c) for c in quant.DEFAULT_CLIP_GRID))
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--save", default=None, help="write the quantized container here")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_quant_report)

    p = sub.add_parser("spike-report", help="spike expansion stats")
    p.add_argument("--input", required=True, help="activation tensor file")
    p.add_argument("--group-size", type=int, default=128)
    p.add_argument("--weight", default=None, help="optional weight tensor file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_spike_report)

    p = sub.add_parser("scaling-table", help="cost/memory scaling CSV")
    p.add_argument("--lengths", default="128k,256k,512k,1M,2M,4M")
    p.add_argument("--plan", default=None, help="layer plan JSON file (default: built-in plan)")
    p.add_argument("--schedule", choices=("fixed", "auto"), default="fixed")
    p.add_argument("--d-model", type=int, default=4096)
    p.add_argument("--block-size", type=int, default=4096)
    p.add_argument("--top-k", type=int, default=12)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scaling_table)

    p = sub.add_parser("plan-show", help="layer plan table")
    p.add_argument("--plan", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan_show)

    p = sub.add_parser("layer-select", help="sensitivity-driven layer picking")
    p.add_argument("--profile", required=True, help="JSON file with baseline and scores")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_layer_select)

    p = sub.add_parser("loss-check", help="combined loss breakdown")
    p.add_argument("--fixture", default=None, help="JSON fixture with loss parts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("moba-trace", help="block selections per query")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--block-size", type=int, default=4)
    p.add_argument("--top-k", type=int, default=2)
    p.add_argument("--queries", default=None, help="query tensor file")
    p.add_argument("--keys", default=None, help="key tensor file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_moba_trace)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ShapeError, NumericsError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"dssalab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
