"""Message schemas, the value model, and the binary / YAML / JSON codecs."""

from .binary import decode_binary, encode_binary
from .schema import (
    DYNAMIC,
    FIXED,
    PRIMITIVES,
    SCALAR,
    FieldDescriptor,
    MessageSchema,
    SchemaRegistry,
    default_registry,
    parse_schema,
    service_types,
)
from .values import Violation, default_value, ensure_valid, fill_defaults, normalize, validate_value
from .yamlcodec import (
    from_json,
    from_yaml,
    json_to_yaml,
    load_yaml,
    render_tree,
    to_json,
    to_yaml,
    yaml_to_json,
)

__all__ = [
    "DYNAMIC",
    "FIXED",
    "PRIMITIVES",
    "SCALAR",
    "FieldDescriptor",
    "MessageSchema",
    "SchemaRegistry",
    "Violation",
    "decode_binary",
    "default_registry",
    "default_value",
    "encode_binary",
    "ensure_valid",
    "fill_defaults",
    "from_json",
    "from_yaml",
    "json_to_yaml",
    "load_yaml",
    "normalize",
    "parse_schema",
    "render_tree",
    "service_types",
    "to_json",
    "to_yaml",
    "validate_value",
    "yaml_to_json",
]
