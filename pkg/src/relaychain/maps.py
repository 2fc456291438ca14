"""Built-in maps: the 100x100 reference environment and small scripted maps.

The reference map provides rooms and corridors between base (5,5) and goal
(80,80) with seven initially open doors (closable) and six initially closed
ones (openable), so the random change generator always has material to work
with. The scripted maps drive specific failure modes in tests and demos.
"""

from importlib import resources

import numpy as np

from .world import Door, GridMap, Rect, parse_map

REFERENCE_MAP_NAME = "reference"


def _wall_h(walls, y, x0, x1):
    walls[y, x0:x1 + 1] = 1


def _wall_v(walls, x, y0, y1):
    walls[y0:y1 + 1, x] = 1


def reference_map() -> GridMap:
    """The batch environment: three wall lines, an annex, a goal room,
    thirteen doors (seven open, six closed)."""
    walls = np.zeros((100, 100), np.uint8)
    walls[0, :] = walls[-1, :] = 1
    walls[:, 0] = walls[:, -1] = 1

    _wall_h(walls, 30, 0, 99)        # south band / mid band divider
    _wall_v(walls, 45, 30, 65)       # mid band divider (west/east)
    _wall_h(walls, 65, 0, 99)        # mid band / north band divider
    _wall_h(walls, 15, 50, 99)       # annex wall in the south band
    # goal room ring [72..92]^2
    _wall_h(walls, 74, 72, 92)
    _wall_h(walls, 92, 72, 92)
    _wall_v(walls, 72, 74, 92)
    _wall_v(walls, 92, 74, 92)

    doors = (
        Door("d1", Rect(18, 30, 25, 30), True),    # south -> west-mid
        Door("d2", Rect(58, 30, 65, 30), True),    # south -> east-mid
        Door("d3", Rect(45, 44, 45, 49), True),    # west-mid -> east-mid
        Door("d5", Rect(68, 65, 75, 65), True),    # east-mid -> north band
        Door("d6", Rect(74, 74, 82, 74), True),    # goal room south entrance
        Door("d7", Rect(68, 15, 74, 15), True),    # annex passage
        Door("d8", Rect(18, 65, 24, 65), True),    # west-mid -> north band
        Door("d9", Rect(80, 30, 86, 30), True),    # south -> east-mid, east side
        Door("d10", Rect(44, 65, 50, 65), True),   # mid -> north, center
        Door("c1", Rect(36, 30, 40, 30), False),
        Door("c2", Rect(90, 30, 94, 30), False),
        Door("c3", Rect(45, 55, 45, 59), False),
        Door("c4", Rect(88, 65, 92, 65), False),
        Door("c5", Rect(92, 80, 92, 85), False),   # goal room east exit
        Door("c6", Rect(55, 15, 59, 15), False),
    )
    for door in doors:
        r = door.region
        walls[r.y0:r.y1 + 1, r.x0:r.x1 + 1] = 0
    return GridMap(walls, doors)


def los_squeeze_map() -> GridMap:
    """Corridor whose only passage is a diagonal gap: a chain path exists,
    but no relay pair can hold line of sight across it."""
    walls = np.ones((20, 60), np.uint8)
    walls[2:18, 1:59] = 0
    walls[2:11, 30] = 1   # upper wall, column 30 (rows 2..10)
    walls[11:18, 31] = 1  # lower wall, column 31 (rows 11..17)
    return GridMap(walls)


def sealed_room_map() -> GridMap:
    """A room reachable through a single door, for trapped-routine trials."""
    walls = np.zeros((40, 40), np.uint8)
    walls[0, :] = walls[-1, :] = 1
    walls[:, 0] = walls[:, -1] = 1
    _wall_h(walls, 20, 12, 28)
    _wall_h(walls, 34, 12, 28)
    _wall_v(walls, 12, 20, 34)
    _wall_v(walls, 28, 20, 34)
    doors = (
        Door("room", Rect(19, 20, 21, 20), True),
        Door("spare1", Rect(28, 26, 28, 28), False),
        Door("spare2", Rect(12, 26, 12, 28), False),
    )
    for door in doors:
        r = door.region
        walls[r.y0:r.y1 + 1, r.x0:r.x1 + 1] = 0
    return GridMap(walls, doors)


def ring_map() -> GridMap:
    """A ring corridor around a solid block, for pursuit scenarios."""
    walls = np.ones((40, 40), np.uint8)
    walls[4:36, 4:36] = 0
    walls[12:28, 12:28] = 1  # central block
    return GridMap(walls)


_BUILTIN = {
    "reference": reference_map,
    "los_squeeze": los_squeeze_map,
    "sealed_room": sealed_room_map,
    "ring": ring_map,
}


def builtin_names():
    return sorted(_BUILTIN)


def load_builtin(name: str) -> GridMap:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin map {name!r}; have {builtin_names()}") from None


def packaged_reference() -> GridMap:
    """The reference map as shipped in package data (integrity-checked in
    tests against the builder)."""
    text = resources.files("relaychain").joinpath("data/reference.map").read_text()
    return parse_map(text)
