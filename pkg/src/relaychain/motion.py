"""Polyline motion shared by real agents and dead-reckoned predictions.

Using one walker for both keeps a group's forecast of a teammate bit-exact
with the teammate's actual motion whenever their plans agree.
"""

import math
from dataclasses import dataclass, field


@dataclass
class PathWalker:
    """Advances a point along a waypoint list with collision checks."""

    waypoints: list
    pos: tuple[float, float] = None  # type: ignore[assignment]
    next_idx: int = 1
    blocked: bool = False

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("walker needs at least one waypoint")
        if self.pos is None:
            self.pos = (float(self.waypoints[0][0]), float(self.waypoints[0][1]))

    @property
    def done(self) -> bool:
        return self.next_idx >= len(self.waypoints)

    def advance(self, distance: float, grid, substep: float) -> bool:
        """Move up to `distance` along the polyline, halting before any
        occupied cell of `grid`. Returns True when a collision stopped the
        move (the agent needs to sense and its group to replan)."""
        self.blocked = False
        remaining = float(distance)
        x, y = self.pos
        while remaining > 1e-12 and self.next_idx < len(self.waypoints):
            wx, wy = self.waypoints[self.next_idx]
            dx = wx - x
            dy = wy - y
            seg = math.sqrt(dx * dx + dy * dy)
            if seg <= 1e-12:
                self.next_idx += 1
                continue
            step = min(remaining, seg, substep)
            nx = x + dx / seg * step
            ny = y + dy / seg * step
            if not grid.is_free((nx, ny)):
                self.blocked = True
                break
            if step == seg:  # land exactly on the waypoint, no float drift
                x, y = float(wx), float(wy)
                self.next_idx += 1
            else:
                x, y = nx, ny
            remaining -= step
        self.pos = (x, y)
        return self.blocked
