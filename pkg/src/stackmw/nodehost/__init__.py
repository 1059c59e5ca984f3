"""Isolated node execution contexts and their supervisor."""

from .behaviors import BEHAVIORS, Behavior, Listener, Talker, make_behavior, register_behavior
from .clock import VirtualClock, WallClock, iso_time
from .host import (
    FAILED,
    STARTED,
    STOPPED,
    NodeContext,
    NodeEvent,
    NodeHandle,
    NodeHost,
    NodeSpec,
    Transcript,
    spawn_node,
    stop_node,
    supervise,
)

__all__ = [
    "BEHAVIORS",
    "FAILED",
    "STARTED",
    "STOPPED",
    "Behavior",
    "Listener",
    "NodeContext",
    "NodeEvent",
    "NodeHandle",
    "NodeHost",
    "NodeSpec",
    "Talker",
    "Transcript",
    "VirtualClock",
    "WallClock",
    "iso_time",
    "make_behavior",
    "register_behavior",
    "spawn_node",
    "stop_node",
    "supervise",
]
