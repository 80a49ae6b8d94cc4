"""Export Keras image models to tapped inference graphs.

The package turns a functional Keras model into a portable graph file
whose declared outputs expose every interesting intermediate layer
("taps"), writes the layer manifest sidecar describing them, and can
verify an export end to end by comparing source-framework activations
with activations extracted from the graph by the consumer's own
command line tool.
"""

from .convert import (
    DEFAULT_TAP_POLICY,
    ConversionError,
    TapRecord,
    UnsupportedLayerError,
    convert_model,
    tap_layers,
)
from .export import (
    ARCHITECTURES,
    ExportResult,
    ExportSpec,
    UnsupportedArchitectureError,
    build_model,
    export,
    export_model,
    manifest_path_for,
    weights_digest,
)
from .verify import (
    VERIFY_TOLERANCE,
    MissingTapError,
    TapCheck,
    VerificationError,
    VerifyReport,
    pinned_batch,
    read_reference,
    verify,
    verify_export,
    write_reference,
)

__all__ = [
    "ARCHITECTURES",
    "ConversionError",
    "DEFAULT_TAP_POLICY",
    "ExportResult",
    "ExportSpec",
    "MissingTapError",
    "TapCheck",
    "TapRecord",
    "UnsupportedArchitectureError",
    "UnsupportedLayerError",
    "VERIFY_TOLERANCE",
    "VerificationError",
    "VerifyReport",
    "build_model",
    "convert_model",
    "export",
    "export_model",
    "manifest_path_for",
    "pinned_batch",
    "read_reference",
    "tap_layers",
    "verify",
    "verify_export",
    "weights_digest",
    "write_reference",
]

__version__ = "0.1.0"
