"""Command line entry: serve a provider over HTTP.

Port resolution: --port flag, else the BRIDGE_PORT environment variable,
else 8765. Provider resolution: --provider flag, else BRIDGE_PROVIDER,
else the built-in deterministic one. A provider that fails to load leaves
the service up and answering 503 so health probes can see the failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .providers import ProviderLoadError, load_provider
from .service import serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scenebridge",
        description="HTTP bridge serving model endpoints to the scene "
                    "pipeline engine")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=None,
                        help="default: $BRIDGE_PORT or 8765")
    parser.add_argument("--provider", default=None,
                        help="'toy', 'toy:SEED', or 'module:factory' "
                             "(default: $BRIDGE_PROVIDER or 'toy')")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress per-request logging")
    args = parser.parse_args(argv)

    port = args.port if args.port is not None \
        else int(os.environ.get("BRIDGE_PORT", "8765"))
    spec = args.provider if args.provider is not None \
        else os.environ.get("BRIDGE_PROVIDER")
    try:
        provider = load_provider(spec)
    except ProviderLoadError as exc:
        print(f"scenebridge: provider unavailable: {exc}", file=sys.stderr)
        provider = None
    serve(provider, args.host, port, verbose=not args.quiet)
    return 0


if __name__ == "__main__":
    sys.exit(main())
