"""Broker-routed publish/subscribe middleware with typed message introspection."""

__version__ = "0.1.0"
