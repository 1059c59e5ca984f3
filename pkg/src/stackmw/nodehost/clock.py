from __future__ import annotations

import time
from datetime import datetime, timezone


class WallClock:
    virtual = False

    def now(self) -> float:
        return time.time()


class VirtualClock:
    """Seconds since the Unix epoch, advanced only by the scheduler."""

    virtual = True

    def __init__(self, start: float = 0.0):
        self._now = start

    def now(self) -> float:
        return self._now

    def set(self, t: float) -> None:
        if t < self._now:
            raise ValueError("virtual time cannot go backwards")
        self._now = t


def iso_time(t: float) -> str:
    dt = datetime.fromtimestamp(t, timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"
