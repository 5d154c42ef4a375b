"""HTTP bridge between the scene pipeline engine and model backends.

Server side: a request-serial HTTP service exposing text/image embeddings,
guidance gradients, text-to-image generation, exemplar-guided composition,
and open-vocabulary detection behind published JSON schemas, with a
deterministic offline provider built in. Client side: a typed client, a
record/replay tape for contract tests, and a world adapter that lets the
engine run its pipeline against the service.
"""

from .client import BridgeClient, BridgeError, ReplayServer, Tape
from .encoding import (
    EncodingError,
    array_from_png_b64,
    decode_image,
    decode_mask,
    encode_image,
    encode_mask,
    png_b64_from_array,
)
from .providers import ProviderLoadError, ToyProvider, load_provider
from .schemas import ENDPOINT_SCHEMAS, SchemaViolation, load_schema, schema_names, validate
from .service import BridgeServer, create_server, serve
from .world import RemoteDetector, RemoteLibrary, RemoteOracle, remote_world

__all__ = [
    "BridgeClient",
    "BridgeError",
    "BridgeServer",
    "ENDPOINT_SCHEMAS",
    "EncodingError",
    "ProviderLoadError",
    "RemoteDetector",
    "RemoteLibrary",
    "RemoteOracle",
    "ReplayServer",
    "SchemaViolation",
    "Tape",
    "ToyProvider",
    "array_from_png_b64",
    "create_server",
    "decode_image",
    "decode_mask",
    "encode_image",
    "encode_mask",
    "load_provider",
    "load_schema",
    "png_b64_from_array",
    "remote_world",
    "schema_names",
    "serve",
    "validate",
]
