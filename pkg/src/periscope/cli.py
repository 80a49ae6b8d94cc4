"""Command-line surface: one subcommand per pipeline stage.

Every subcommand validates its inputs first, so --dry-run can stop
before anything is written. Runtime failures exit 1 with a single
"ERROR <code>: message" line on stderr; usage problems exit 2 with the
argparse usage text. Artifacts are deterministic: the same invocation
writes byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .corpus import (
    DuplicateSampleIdError,
    ManifestParseError,
    MissingAnnotationError,
    NormalizationConfig,
    NormalizedImage,
    implied_annotation,
    load_image,
    load_manifest,
    normalize_image,
    synth_corpus,
    to_gray,
    write_corpus,
)
from .deepfeat import (
    LayerNotFoundError,
    ShapeMismatchError,
    TapRequest,
    extract_tap,
    load_graph,
    manifest_path_for,
    randomize_weights,
    write_manifest,
)
from .handfeat import (
    BlockHistogramConfig,
    FeatureVector,
    ImageTooSmallError,
    KeypointSet,
    hog,
    lbph,
    sift_detect,
)
from .onnxlite import MalformedGraphError, UnsupportedOperatorError
from .protocol import (
    InfeasibleRuleError,
    PartitionSpec,
    SplitRule,
    enumerate_pairs,
    make_partition,
    read_pairs,
    write_pairs,
    write_partition,
)
from .simeng import (
    DimensionMismatchError,
    MissingFeatureError,
    SiftRatioConfig,
    ZeroNormError,
    read_scores,
    score_pairs,
    write_scores,
)
from .store import config_hash, read_features, read_keypoints, write_features, write_keypoints
from .sweep import SweepError, emit_report, read_report, run_sweep, transfer_matrix
from .verimetrics import (
    EmptyScoreListError,
    eer_from_scores,
    error_curve,
    format_eer_percent,
    frr_at_far,
    write_curve_csv,
)

COMMANDS = (
    "synth", "normalize", "partition", "extract", "score",
    "eval", "sweep", "transfer", "randomize",
)

ERROR_CODES = (
    (ManifestParseError, "manifest-parse"),
    (DuplicateSampleIdError, "duplicate-sample"),
    (MissingAnnotationError, "missing-annotation"),
    (InfeasibleRuleError, "infeasible-rule"),
    (UnsupportedOperatorError, "unsupported-operator"),
    (MalformedGraphError, "malformed-graph"),
    (LayerNotFoundError, "layer-not-found"),
    (ShapeMismatchError, "shape-mismatch"),
    (ImageTooSmallError, "image-too-small"),
    (EmptyScoreListError, "empty-scores"),
    (MissingFeatureError, "missing-feature"),
    (ZeroNormError, "zero-norm"),
    (DimensionMismatchError, "dimension-mismatch"),
    (SweepError, "sweep-failed"),
    (FileNotFoundError, "missing-file"),
    (json.JSONDecodeError, "bad-json"),
    (ValueError, "invalid-value"),
    (KeyError, "missing-key"),
    (OSError, "io-error"),
)


def _fail(exc: BaseException) -> int:
    code = "runtime"
    for klass, name in ERROR_CODES:
        if isinstance(exc, klass):
            code = name
            break
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"ERROR {code}: {message}", file=sys.stderr)
    return 1


def _dry(args, note: str) -> bool:
    if args.dry_run:
        print(f"dry-run: {note}; nothing written")
        return True
    return False


def _load_normalized(manifest_path) -> tuple[list, dict[str, NormalizedImage]]:
    """Read a normalized corpus: square gray images keyed by sample id."""
    records = load_manifest(manifest_path, warn_missing=False)
    images = {}
    for rec in records:
        if not rec.image_path:
            raise FileNotFoundError(f"sample {rec.sample_id} has no image_path")
        gray = to_gray(load_image(rec.image_path))
        if gray.shape[0] != gray.shape[1]:
            raise ValueError(f"sample {rec.sample_id}: normalized image must be square, got {gray.shape}")
        cfg = NormalizationConfig(output_side=gray.shape[0], mode="resize_only")
        images[rec.sample_id] = NormalizedImage(rec.sample_id, gray, cfg)
    return records, images


def cmd_synth(args) -> int:
    records, images = synth_corpus(args.identities, args.per_id, args.noise, args.seed, side=args.side)
    if _dry(args, f"would write {len(records)} samples to {args.out}"):
        return 0
    manifest = write_corpus(records, images, args.out)
    print(f"wrote {manifest} ({len(records)} samples)")
    return 0


def cmd_normalize(args) -> int:
    records = load_manifest(args.manifest, warn_missing=False)
    cfg = NormalizationConfig(
        target_sclera_radius=args.target_radius,
        crop_factor=args.crop_factor,
        output_side=args.output_side,
        mode=args.mode,
    )
    implied = implied_annotation(cfg)
    out_records, images = [], {}
    for rec in records:
        image = load_image(rec.image_path)
        if args.dry_run:
            if cfg.mode == "full" and rec.sclera is None:
                raise MissingAnnotationError(f"sample {rec.sample_id} has no sclera annotation")
            continue
        normalized = normalize_image(rec, image, cfg)
        images[rec.sample_id] = normalized.pixels
        out_records.append(replace(rec, sclera=implied, image_path=None))
    if _dry(args, f"would normalize {len(records)} samples into {args.out}"):
        return 0
    manifest = write_corpus(out_records, images, args.out)
    print(f"wrote {manifest} ({len(out_records)} samples, side {cfg.output_side})")
    return 0


def cmd_partition(args) -> int:
    records = load_manifest(args.manifest, warn_missing=False)
    rule = SplitRule(
        cw_test_per_identity=args.cw_test_per_identity,
        ow_train_identities=args.ow_train_identities,
    )
    made = make_partition(records, args.protocol, rule)
    specs = [made] if isinstance(made, PartitionSpec) else list(made)
    if _dry(args, f"would write {len(specs)} split(s) under {args.out_dir}"):
        return 0
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        pairs = enumerate_pairs(spec)
        spec_path = out_dir / f"{spec.split}.partition.json"
        pairs_path = out_dir / f"{spec.split}.pairs"
        write_partition(spec, spec_path)
        write_pairs(pairs, pairs_path)
        genuine, impostor = pairs.counts
        print(f"{spec.split}: {len(spec)} samples, {genuine} genuine, {impostor} impostor -> {pairs_path}")
    return 0


def cmd_extract(args) -> int:
    records, images = _load_normalized(args.manifest)
    ids = [rec.sample_id for rec in records]
    if args.descriptor in ("lbph", "hog"):
        cfg = BlockHistogramConfig(args.grid_rows, args.grid_cols, args.bins, args.lbp_raw_codes)
        if _dry(args, f"would extract {args.descriptor} for {len(ids)} samples to {args.out}"):
            return 0
        fn = lbph if args.descriptor == "lbph" else hog
        matrix = np.stack([fn(images[sid], cfg).values for sid in ids])
        write_features(args.out, ids, matrix, args.descriptor, config_hash(cfg.as_dict()))
    elif args.descriptor == "sift":
        if _dry(args, f"would extract sift keypoints for {len(ids)} samples to {args.out}"):
            return 0
        sets = [sift_detect(images[sid]) for sid in ids]
        write_keypoints(args.out, ids, [s.geometry for s in sets], [s.descriptors for s in sets])
    else:  # tap
        if not args.graph or args.layer is None:
            raise ValueError("descriptor tap needs --graph and --layer")
        handle, manifest = load_graph(args.graph)
        key = int(args.layer) if str(args.layer).lstrip("-").isdigit() else args.layer
        entry = manifest.layer(key)
        if _dry(args, f"would tap layer {entry.index} ({entry.name}) for {len(ids)} samples to {args.out}"):
            return 0
        vectors = extract_tap(
            handle, TapRequest(manifest.model_id, entry.index, [images[sid] for sid in ids]),
            batch_size=args.batch,
        )
        matrix = np.stack([v.values for v in vectors])
        write_features(
            args.out, ids, matrix, f"tap:{entry.index}", config_hash([manifest.model_id, entry.index])
        )
    print(f"wrote {args.out} ({len(ids)} samples)")
    return 0


def _load_any_features(path):
    """Feature store or keypoint store, by header shape."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
    if "descriptor_dim" in header:
        ids, geoms, descs = read_keypoints(path)
        return [KeypointSet(sid, g, d) for sid, g, d in zip(ids, geoms, descs)], "sift"
    ids, matrix, meta = read_features(path)
    return [FeatureVector(sid, row, meta.get("source", "")) for sid, row in zip(ids, matrix)], meta.get("source", "")


def cmd_score(args) -> int:
    features, source = _load_any_features(args.features)
    pairs = read_pairs(args.pairs)
    if _dry(args, f"would score {sum(pairs.counts)} pairs to {args.out}"):
        return 0
    ratio_cfg = SiftRatioConfig(literal_min=args.literal_min_ratio)
    scores = score_pairs(
        features, pairs, workers=args.workers, tile=args.tile,
        ratio_cfg=ratio_cfg, descriptor=source, partition=args.partition_id,
    )
    write_scores(scores, args.out)
    print(f"wrote {args.out} ({len(scores.genuine)} genuine, {len(scores.impostor)} impostor)")
    return 0


def cmd_eval(args) -> int:
    scores = read_scores(args.scores)
    if _dry(args, f"scores file {args.scores} is readable"):
        return 0
    result = eer_from_scores(scores.genuine, scores.impostor, method=args.method)
    if args.curve_out:
        write_curve_csv(error_curve(scores.genuine, scores.impostor), args.curve_out)
    print(format_eer_percent(result.eer))
    if args.far is not None:
        curve = error_curve(scores.genuine, scores.impostor)
        print(f"frr_at_far {args.far:g} {frr_at_far(curve, args.far):.6f}")
    return 0


def cmd_sweep(args) -> int:
    handle, manifest = load_graph(args.graph)
    _, images = _load_normalized(args.manifest)
    pairs = read_pairs(args.pairs)
    if _dry(args, f"would sweep {manifest.total_layers} layers of {manifest.model_id} into {args.out_dir}"):
        return 0
    result = run_sweep(
        handle, images, pairs, args.partition_id,
        first=args.first, last=args.last, stride=args.stride, refine=args.refine,
        workers=args.workers, batch_size=args.batch, cache_dir=args.cache_dir,
        strategy=args.strategy, protocol=args.protocol_tag,
    )
    for path in emit_report([result], args.out_dir, args.report_name):
        print(f"wrote {path}")
    return 0


def cmd_transfer(args) -> int:
    handle, _ = load_graph(args.graph)
    sweeps = {}
    for report_path in args.sweep_report:
        loaded, _ = read_report(report_path)
        for sweep in loaded:
            sweeps[sweep.partition_id] = sweep
    if not sweeps:
        raise ValueError("no sweeps found in the given reports")
    targets = {}
    for spec in args.target:
        try:
            name, rest = spec.split("=", 1)
            manifest_path, pairs_path = rest.split(",", 1)
        except ValueError:
            raise ValueError(f"--target must be NAME=MANIFEST,PAIRS (got {spec!r})") from None
        _, images = _load_normalized(manifest_path)
        targets[name] = (images, read_pairs(pairs_path))
    if _dry(args, f"would evaluate {len(sweeps)} selector(s) x {len(targets)} target(s)"):
        return 0
    cells = transfer_matrix(
        sweeps, targets, handle,
        workers=args.workers, batch_size=args.batch, cache_dir=args.cache_dir,
    )
    for path in emit_report(cells, args.out_dir, args.report_name):
        print(f"wrote {path}")
    return 0


def cmd_randomize(args) -> int:
    if _dry(args, f"graph {args.graph} parses; would write {args.out}"):
        load_graph(args.graph)
        return 0
    manifest = randomize_weights(args.graph, args.out, args.seed)
    write_manifest(manifest, manifest_path_for(args.out))
    print(f"wrote {args.out} ({manifest.total_layers} layers, seed {args.seed})")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="periscope",
        description="One-shot periocular verification experiments: corpora, pairs, descriptors, EER.",
    )
    subs = parser.add_subparsers(dest="command", required=True, metavar="|".join(COMMANDS))
    tables: dict[str, argparse.ArgumentParser] = {}

    def sub(name, help_text):
        p = subs.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of defaults for this subcommand; flags override")
        p.add_argument("--dry-run", action="store_true", help="validate inputs, write nothing")
        tables[name] = p
        return p

    p = sub("synth", "generate a labeled synthetic corpus")
    p.add_argument("--identities", type=int, required=True)
    p.add_argument("--per-id", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--side", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="corpus directory")

    p = sub("normalize", "geometric normalization of a raw corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="normalized corpus directory")
    p.add_argument("--target-radius", type=float, default=30.0)
    p.add_argument("--crop-factor", type=float, default=7.6)
    p.add_argument("--output-side", type=int, default=224)
    p.add_argument("--mode", choices=["full", "resize_only"], default="full")

    p = sub("partition", "protocol split plus exhaustive pair enumeration")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=["CW", "OW", "Complete"], required=True)
    p.add_argument("--cw-test-per-identity", type=int)
    p.add_argument("--ow-train-identities", type=int)
    p.add_argument("--out-dir", required=True)

    p = sub("extract", "descriptor extraction to a feature/keypoint store")
    p.add_argument("--manifest", required=True, help="normalized corpus manifest")
    p.add_argument("--descriptor", choices=["lbph", "hog", "sift", "tap"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-rows", type=int, default=8)
    p.add_argument("--grid-cols", type=int, default=8)
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--lbp-raw-codes", action="store_true")
    p.add_argument("--graph", help="graph file for --descriptor tap")
    p.add_argument("--layer", help="tap layer index or name")
    p.add_argument("--batch", type=int, default=16)

    p = sub("score", "pairwise similarity scores for a pair list")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--partition-id", default="")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--tile", type=int, default=4096)
    p.add_argument("--literal-min-ratio", action="store_true",
                   help="denominator min(K_a, K_b, eps) instead of max(min(K_a, K_b), eps)")

    p = sub("eval", "EER of a score set, printed as a percentage")
    p.add_argument("--scores", required=True)
    p.add_argument("--method", choices=["interpolated", "midpoint"], default="interpolated")
    p.add_argument("--far", type=float, help="also print FRR at this FAR")
    p.add_argument("--curve-out", help="write the FAR/FRR step curve as CSV")

    p = sub("sweep", "EER per tapped layer of a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--manifest", required=True, help="normalized corpus manifest")
    p.add_argument("--pairs", required=True)
    p.add_argument("--partition-id", required=True)
    p.add_argument("--first", type=int)
    p.add_argument("--last", type=int)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--refine", action="store_true")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--cache-dir", help="tap cache directory (default $PERISCOPE_CACHE or temp)")
    p.add_argument("--strategy", default="pretrained")
    p.add_argument("--protocol-tag", default="")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report-name", default="report")

    p = sub("transfer", "evaluate targets at each selector sweep's best layer")
    p.add_argument("--graph", required=True)
    p.add_argument("--sweep-report", action="append", required=True,
                   help="report JSON with selector sweeps (repeatable)")
    p.add_argument("--target", action="append", required=True,
                   help="NAME=MANIFEST,PAIRS (repeatable)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--cache-dir")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--report-name", default="report")

    p = sub("randomize", "re-draw a graph's learned weights from a seed")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    return parser, tables


HANDLERS = {
    "synth": cmd_synth,
    "normalize": cmd_normalize,
    "partition": cmd_partition,
    "extract": cmd_extract,
    "score": cmd_score,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "transfer": cmd_transfer,
    "randomize": cmd_randomize,
}


def _apply_config(argv, parser, tables) -> None:
    """Seed the chosen subcommand's defaults from its --config JSON."""
    command = next((a for a in argv if a in tables), None)
    if command is None:
        return
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    doc = json.loads(Path(known.config).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{known.config}: config must be a JSON object")
    sub = tables[command]
    valid = {action.dest for action in sub._actions}
    table = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in valid:
            sub.error(f"unknown config key {key!r}")
        table[dest] = value
    sub.set_defaults(**table)
    for action in sub._actions:
        if action.dest in table:
            action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, tables = build_parser()
    try:
        _apply_config(argv, parser, tables)
        args = parser.parse_args(argv)
    except (OSError, json.JSONDecodeError, ValueError) as exc:
        return _fail(exc)
    try:
        return HANDLERS[args.command](args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - single reporting point
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
