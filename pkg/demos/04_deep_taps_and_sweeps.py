"""
Deep-layer taps, layer sweeps, and transfer
===========================================

A frozen network is a stack of candidate feature extractors: every
intermediate layer's activation, flattened, is an embedding. This demo
loads a small instrumented computation graph, pulls activations at each
tapped layer, sweeps the layers to find which verifies best, checks how
that choice transfers across partitions, and shows the training-free
baseline of re-randomizing all weights.
"""

from pathlib import Path
from tempfile import TemporaryDirectory

from periscope.corpus import NormalizationConfig, NormalizedImage, synth_corpus
from periscope.deepfeat import (
    TapRequest,
    extract_tap,
    load_graph,
    randomize_weights,
    relative_depth,
)
from periscope.protocol import enumerate_pairs, make_partition
from periscope.sweep import best_layer, emit_report, run_sweep, transfer_matrix

GRAPH = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "toy4.onnx"

# The graph file carries its own layer manifest: tap index, layer name,
# and per-sample output shape (channel-last).
handle, manifest = load_graph(GRAPH)
print(f"model {manifest.model_id!r}, input {tuple(manifest.input_shape)}")
for entry in manifest.layers:
    depth = relative_depth(entry.index, manifest)
    print(f"  tap {entry.index}  {entry.name:<8} {str(tuple(entry.output_shape)):<14} depth {depth:.2f}")

# Build two corpora over disjoint subjects, sharing nothing but the
# generator. Images are 16x16 to match the toy graph's input; the noise
# level is set high enough that the layers actually disagree.
provenance = NormalizationConfig(output_side=16)
records, raw = synth_corpus(8, 4, 0.4, seed=3, side=16)
images = {sid: NormalizedImage(sid, px, provenance) for sid, px in raw.items()}


def partition_for(subjects):
    members = [rec for rec in records if rec.subject_id in subjects]
    pairs = enumerate_pairs(make_partition(members, "Complete"))
    return [images[rec.sample_id] for rec in members], pairs


batch_a, pairs_a = partition_for({"subj0000", "subj0001"})
batch_b, pairs_b = partition_for({"subj0002", "subj0003"})

# Extracting one layer runs only that layer's ancestors; vectors come
# back flattened channel-last, ready for cosine scoring.
vectors = extract_tap(handle, TapRequest(manifest.model_id, "pool0", batch_a[:2]))
print(f"\npool0 tap: {len(vectors[0].values)} dims, source {vectors[0].source!r}")

with TemporaryDirectory() as tmp:
    # Sweep every tapped layer on partition A and report EER per layer.
    sweep_a = run_sweep(handle, batch_a, pairs_a, "A", workers=2, cache_dir=tmp)
    print("\nlayer sweep on partition A:")
    for row in sweep_a.rows:
        print(f"  layer {row.layer_index}  depth {row.relative_depth:.2f}  EER {100 * row.eer:6.2f}%")
    layer, value = best_layer(sweep_a)
    print(f"best layer: {layer} at {100 * value:.2f}%")

    # Does A's best layer hold up on B, and vice versa? The transfer
    # matrix evaluates every partition at every selector's best layer.
    sweep_b = run_sweep(handle, batch_b, pairs_b, "B", workers=2, cache_dir=tmp)
    cells = transfer_matrix(
        {"A": sweep_a, "B": sweep_b},
        {"A": (batch_a, pairs_a), "B": (batch_b, pairs_b)},
        handle,
        cache_dir=tmp,
    )
    print("\ntransfer matrix (selector -> target):")
    for cell in cells:
        print(f"  {cell.selector} -> {cell.target}  layer {cell.layer_index}  EER {100 * cell.eer:6.2f}%")

    # Reports serialize to JSON plus CSV tables for spreadsheets.
    written = emit_report([sweep_a, sweep_b] + cells, Path(tmp) / "report", name="toy")
    print("\nreport files:", ", ".join(p.name for p in written))

    # Training-free baseline: same architecture, freshly drawn weights.
    # Structure alone carries some signal, but trained features it is not.
    rand_path = Path(tmp) / "toy4_random.onnx"
    randomize_weights(GRAPH, rand_path, seed=1)
    rand_handle, _ = load_graph(rand_path)
    rand_sweep = run_sweep(rand_handle, batch_a, pairs_a, "A", workers=2,
                           cache_dir=tmp, strategy="random")
    layer_r, value_r = best_layer(rand_sweep)
    print(f"\nrandomized weights, best layer {layer_r}: EER {100 * value_r:.2f}%"
          f" (was {100 * value:.2f}%)")
