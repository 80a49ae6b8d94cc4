"""Command line front end: export, reference, verify.

Exit codes: 0 success, 1 fidelity failure, 2 usage or runtime error.
Errors go to stderr as single `ERROR <kind>: message` lines so wrapper
scripts can match on them.
"""

from __future__ import annotations

import argparse
import sys

from .export import ARCHITECTURES, ExportSpec, build_model, export
from .verify import (
    VERIFY_TOLERANCE,
    VerificationError,
    verify,
    write_reference,
)


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", required=True,
                   help=f"one of: {', '.join(ARCHITECTURES)}")
    p.add_argument("--weights", choices=["random", "pretrained", "file"],
                   default="random")
    p.add_argument("--weights-path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=96)
    p.add_argument("--include-top", action="store_true")
    p.add_argument("--model-id", default="")


def _spec(args, graph_path: str) -> ExportSpec:
    return ExportSpec(
        architecture=args.arch,
        graph_path=graph_path,
        weights=args.weights,
        weights_path=args.weights_path,
        seed=args.seed,
        input_side=args.side,
        include_top=args.include_top,
        model_id=args.model_id,
    )


def cmd_export(args) -> int:
    result = export(_spec(args, args.out))
    print(f"graph {result.graph_path}")
    print(f"manifest {result.manifest_path}")
    print(f"taps {result.tap_count}")
    print(f"weights_sha256 {result.weights_sha256}")
    return 0


def cmd_reference(args) -> int:
    taps = None
    if args.taps:
        taps = [int(t) for t in args.taps.split(",") if t.strip()]
    model = build_model(_spec(args, graph_path=""))
    header = write_reference(model, args.out, samples=args.samples,
                             seed=args.input_seed, taps=taps,
                             model_id=args.model_id or args.arch.lower())
    print(f"reference {args.out}")
    print(f"taps {len(header['taps'])}")
    return 0


def cmd_verify(args) -> int:
    report = verify(args.graph, args.manifest, args.reference,
                    tolerance=args.tolerance, subset_ok=args.subset_ok,
                    workdir=args.workdir)
    print(report)
    return 0 if report.ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelexport",
        description="export Keras models to tapped graphs and verify them",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("export", help="export an architecture to a graph file")
    _model_args(p)
    p.add_argument("--out", required=True, help="graph file path")

    p = subs.add_parser("reference",
                        help="write reference activations for an architecture")
    _model_args(p)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--input-seed", type=int, default=0,
                   help="seed for the pinned input batch")
    p.add_argument("--taps", help="comma-separated tap indices (default all)")
    p.add_argument("--out", required=True, help="reference blob path")

    p = subs.add_parser("verify", help="compare a graph against a reference")
    p.add_argument("--graph", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--tolerance", type=float, default=VERIFY_TOLERANCE)
    p.add_argument("--subset-ok", action="store_true",
                   help="allow the reference to cover only some taps")
    p.add_argument("--workdir", help="keep intermediate corpus files here")

    args = parser.parse_args(argv)
    handler = {"export": cmd_export, "reference": cmd_reference,
               "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except VerificationError as exc:
        print(f"ERROR verification: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"ERROR invalid-input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
