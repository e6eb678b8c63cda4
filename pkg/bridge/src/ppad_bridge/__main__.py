"""Run the bridge: `ppad-bridge --mode stub --bind 127.0.0.1:9900`."""

import argparse
import json
import os

import uvicorn

from .app import BridgeSettings, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ppad-bridge")
    parser.add_argument("--mode", choices=("stub", "pipeline"), default="stub")
    parser.add_argument("--bind", default="127.0.0.1:9900")
    parser.add_argument("--config", default=None,
                        help="JSON file with upstream endpoints (pipeline mode)")
    args = parser.parse_args(argv)

    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    settings = BridgeSettings(mode=args.mode, **overrides)
    if settings.api_key is None:
        settings.api_key = os.environ.get("PPAD_BRIDGE_API_KEY")
    if settings.mode == "pipeline" and not (settings.denoise_upstream
                                            or settings.critic_upstream):
        parser.error("pipeline mode needs at least one upstream in --config")

    host, _, port = args.bind.partition(":")
    uvicorn.run(create_app(settings), host=host or "127.0.0.1",
                port=int(port or 9900), log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
