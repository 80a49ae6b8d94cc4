"""Self-contained reader/writer/executor for the ONNX graph subset used
by the exported models: protobuf wire codec, typed graph model, and a
float32 numpy executor with truncated (tap) evaluation.
"""

from .model import (  # noqa: F401
    Attribute,
    Graph,
    MalformedGraphError,
    Model,
    Node,
    TensorData,
    ValueInfo,
    parse_model,
    serialize_model,
)
from .executor import GraphExecutor, UnsupportedOperatorError  # noqa: F401
