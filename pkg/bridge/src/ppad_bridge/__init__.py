from .app import BridgeSettings, create_app, stub_app

__all__ = ["BridgeSettings", "create_app", "stub_app"]
