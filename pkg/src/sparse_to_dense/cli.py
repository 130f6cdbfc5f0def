"""Command line entry point: ``std-bench {agreement,run,sweep,cost}``.

Exit codes: 0 success, 1 usage error, 2 losslessness violation, 3 capacity error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench, cost
from .errors import CapacityError, ConfigError, DecodingError, LosslessnessError
from .model import ModelConfig
from .workload import WorkloadSpec

EXIT_OK, EXIT_USAGE, EXIT_LOSSLESS, EXIT_CAPACITY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_model_args(p):
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=4)
    g.add_argument("--d-model", type=int, default=128)
    g.add_argument("--q-heads", type=int, default=8)
    g.add_argument("--kv-heads", type=int, default=2)
    g.add_argument("--vocab", type=int, default=512)
    g.add_argument("--max-seq-len", type=int, default=1024)
    g.add_argument("--seed", type=int, default=0, help="model weight seed")
    g = p.add_argument_group("workload")
    g.add_argument("--mv", type=int, default=512, help="visual tokens")
    g.add_argument("--mt", type=int, default=32, help="textual tokens")
    g.add_argument("--workload-seed", type=int, default=0)
    g.add_argument("--workload", choices=["uniform", "block"], default="block")


def _add_output_args(p, default_format):
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], default=default_format)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="std-bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("agreement", help="per-token sparse/dense agreement for several k")
    _add_model_args(p)
    p.add_argument("--k-list", type=_int_list, required=True)
    p.add_argument("--horizon", type=int, default=bench.DEFAULT_MAX_NEW_TOKENS)
    _add_output_args(p, "csv")

    p = sub.add_parser("run", help="one speculative generation, checked against dense decoding")
    _add_model_args(p)
    p.add_argument("--k", type=int, help="retained visual rows (default: budget rule)")
    p.add_argument("--gamma", type=int, default=bench.DEFAULT_GAMMA)
    p.add_argument("--max-new-tokens", type=int, default=bench.DEFAULT_MAX_NEW_TOKENS)
    p.add_argument("--trace", help="write per-round JSON lines here")
    p.add_argument("--timing", action="store_true", help="include wall time (breaks byte-reproducibility)")
    _add_output_args(p, "json")

    p = sub.add_parser("sweep", help="gamma x k grid")
    _add_model_args(p)
    p.add_argument("--gamma-list", type=_int_list, required=True)
    p.add_argument("--k-list", type=_int_list, required=True)
    p.add_argument("--max-new-tokens", type=int, default=bench.DEFAULT_MAX_NEW_TOKENS)
    p.add_argument(
        "--workload-seeds", type=_int_list,
        help="pool acceptance over these workload seeds instead of --workload-seed",
    )
    p.add_argument("--jobs", type=int, default=1)
    _add_output_args(p, "csv")

    p = sub.add_parser("cost", help="evaluate the I/O cost model")
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mv", type=int, required=True)
    p.add_argument("--mt", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    _add_output_args(p, "json")
    return parser


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        n_layers=args.layers,
        d_model=args.d_model,
        n_q_heads=args.q_heads,
        n_kv_heads=args.kv_heads,
        vocab_size=args.vocab,
        max_seq_len=args.max_seq_len,
        seed=args.seed,
    )


def _workload(args, seed=None) -> WorkloadSpec:
    return WorkloadSpec(
        m_v=args.mv,
        m_t=args.mt,
        vocab_size=args.vocab,
        workload_seed=args.workload_seed if seed is None else seed,
        visual_structure=args.workload,
    )


def _emit(args, rows_or_obj):
    if args.format == "json":
        text = json.dumps(rows_or_obj, indent=2, sort_keys=True) + "\n"
    else:
        rows = rows_or_obj if isinstance(rows_or_obj, list) else [rows_or_obj]
        text = bench.rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run(args) -> int:
    if args.command == "cost":
        inp = cost.CostModelInput(gamma=args.gamma, k=args.k, m_v=args.mv, m_t=args.mt, alpha=args.alpha)
        _emit(args, cost.report(inp).to_dict())
        return EXIT_OK

    cfg = _model_config(args)
    if args.command == "agreement":
        _emit(args, bench.run_agreement_study(cfg, _workload(args), args.k_list, args.horizon))
    elif args.command == "run":
        result = bench.run_speedup_experiment(
            cfg, _workload(args), args.k, args.gamma, args.max_new_tokens,
            trace_path=args.trace, timing=args.timing,
        )
        _emit(args, result.to_dict())
    elif args.command == "sweep":
        seeds = args.workload_seeds or [args.workload_seed]
        rows = bench.run_sweep(
            cfg, [_workload(args, s) for s in seeds], args.gamma_list, args.k_list,
            args.max_new_tokens, jobs=args.jobs,
        )
        _emit(args, rows)
        if any(r["error"].startswith(LosslessnessError.__name__) for r in rows):
            return EXIT_LOSSLESS
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"std-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return _run(args)
    except LosslessnessError as exc:
        print(f"std-bench: losslessness violation: {exc}", file=sys.stderr)
        return EXIT_LOSSLESS
    except CapacityError as exc:
        print(f"std-bench: capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ConfigError, ValueError, DecodingError) as exc:
        print(f"std-bench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
