"""
2.5D chiplet system model.

A system is a set of rectangular chiplet meshes placed on an interposer mesh.
Each chiplet reaches the interposer through vertical links (VLs); the chiplet
router attached to a VL is a *boundary router* and the interposer router
directly beneath it hosts the other end of the link.

Routers are addressed two ways:

* ``RouterId(chiplet, x, y)`` -- layer plus mesh-local coordinates.  Interposer
  routers use ``chiplet=None``.
* a dense integer index used by the simulator and the verifier.  Numbering is
  chiplets first (in config order, row-major inside each), then the interposer
  row-major.  Trace files use this numbering.

Coordinates grow East in x and South in y.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union


class TopologyError(ValueError):
    """Raised when a system configuration violates a structural invariant."""


class Port(IntEnum):
    """Router ports.

    A port names the direction a flit travels on the channel leaving the
    router.  ``UP`` only exists on interposer routers under a VL and ``DOWN``
    only on chiplet boundary routers.  When used as an *input* port the same
    name refers to the channel the flit arrived on (e.g. a flit entering a
    boundary router from the interposer arrives on ``UP``).
    """

    EAST = 0
    WEST = 1
    SOUTH = 2
    NORTH = 3
    LOCAL = 4
    UP = 5
    DOWN = 6


HORIZONTAL = frozenset({Port.EAST, Port.WEST, Port.SOUTH, Port.NORTH})

PORT_DELTA = {
    Port.EAST: (1, 0),
    Port.WEST: (-1, 0),
    Port.SOUTH: (0, 1),
    Port.NORTH: (0, -1),
}


class RouterId(NamedTuple):
    chiplet: Optional[int]
    x: int
    y: int

    @property
    def on_interposer(self) -> bool:
        return self.chiplet is None

    def __str__(self) -> str:
        layer = "I" if self.chiplet is None else f"C{self.chiplet}"
        return f"{layer}({self.x},{self.y})"


@dataclass(frozen=True)
class ChipletSpec:
    width: int
    height: int
    origin_x: int
    origin_y: int

    @property
    def num_routers(self) -> int:
        return self.width * self.height

    def contains_global(self, gx: int, gy: int) -> bool:
        return (self.origin_x <= gx < self.origin_x + self.width
                and self.origin_y <= gy < self.origin_y + self.height)


@dataclass(frozen=True)
class VerticalLink:
    """A bidirectional chiplet/interposer link.

    ``id`` is the global VL index (position in ``Topology.vls``); ``local_id``
    is unique within the owning chiplet and is what selection tables and
    per-chiplet fault scenarios refer to.
    """

    id: int
    local_id: int
    chiplet: int
    chiplet_router: RouterId
    interposer_router: RouterId


def hop_distance(a: RouterId, b: RouterId) -> int:
    """Manhattan distance between two routers of the same mesh."""
    if a.chiplet != b.chiplet:
        raise TopologyError(f"hop_distance across layers: {a} vs {b}")
    return abs(a.x - b.x) + abs(a.y - b.y)


def default_vl_positions(width: int, height: int) -> List[Tuple[int, int]]:
    """One VL near the middle of each chiplet edge, pinwheel style.

    For a 4x4 chiplet this is ``[(1, 0), (3, 1), (2, 3), (0, 2)]``.
    Degenerate meshes collapse duplicate positions.
    """
    cands = [
        ((width - 1) // 2, 0),
        (width - 1, (height - 1) // 2),
        (width // 2, height - 1),
        (0, height // 2),
    ]
    out: List[Tuple[int, int]] = []
    for c in cands:
        if c not in out:
            out.append(c)
    return out


class Topology:
    """Validated, immutable 2.5D system description.

    Build one with :func:`load_topology` or :func:`preset`.
    """

    def __init__(
        self,
        chiplets: Sequence[ChipletSpec],
        interposer: Tuple[int, int],
        vl_positions: Sequence[Tuple[int, int, int]],
        interposer_sources: Iterable[Tuple[int, int]] = (),
    ):
        self.chiplets: Tuple[ChipletSpec, ...] = tuple(chiplets)
        self.interposer_width, self.interposer_height = interposer
        self._check_footprints()

        # VLs sorted by chiplet, local id follows config order inside a chiplet
        by_chiplet: Dict[int, List[Tuple[int, int]]] = {c: [] for c in range(len(self.chiplets))}
        for chiplet, lx, ly in vl_positions:
            if chiplet not in by_chiplet:
                raise TopologyError(f"VL on non-existent chiplet {chiplet}")
            spec = self.chiplets[chiplet]
            if not (0 <= lx < spec.width and 0 <= ly < spec.height):
                raise TopologyError(f"VL at ({lx},{ly}) outside chiplet {chiplet}")
            if (lx, ly) in by_chiplet[chiplet]:
                raise TopologyError(f"duplicate VL at ({lx},{ly}) on chiplet {chiplet}")
            by_chiplet[chiplet].append((lx, ly))
        vls = []
        for c, positions in by_chiplet.items():
            if not positions:
                raise TopologyError(f"chiplet {c} has no vertical link")
            spec = self.chiplets[c]
            for local_id, (lx, ly) in enumerate(positions):
                vls.append(VerticalLink(
                    id=len(vls), local_id=local_id, chiplet=c,
                    chiplet_router=RouterId(c, lx, ly),
                    interposer_router=RouterId(None, spec.origin_x + lx, spec.origin_y + ly),
                ))
        self.vls: Tuple[VerticalLink, ...] = tuple(vls)
        self.chiplet_vls: Tuple[Tuple[VerticalLink, ...], ...] = tuple(
            tuple(v for v in self.vls if v.chiplet == c) for c in range(len(self.chiplets))
        )

        # dense numbering
        ids: List[RouterId] = []
        self._chiplet_base: List[int] = []
        for c, spec in enumerate(self.chiplets):
            self._chiplet_base.append(len(ids))
            ids.extend(RouterId(c, x, y) for y in range(spec.height) for x in range(spec.width))
        self._interposer_base = len(ids)
        ids.extend(RouterId(None, x, y)
                   for y in range(self.interposer_height) for x in range(self.interposer_width))
        self.router_ids: Tuple[RouterId, ...] = tuple(ids)
        self._index = {rid: i for i, rid in enumerate(ids)}

        srcs = []
        for x, y in interposer_sources:
            rid = RouterId(None, x, y)
            if rid not in self._index:
                raise TopologyError(f"interposer source ({x},{y}) outside interposer")
            if self._index[rid] not in srcs:
                srcs.append(self._index[rid])
        self.interposer_sources: Tuple[int, ...] = tuple(sorted(srcs))

        self._build_tables()

    # -- construction helpers ---------------------------------------------

    def _check_footprints(self) -> None:
        if not self.chiplets:
            raise TopologyError("system needs at least one chiplet")
        if self.interposer_width < 1 or self.interposer_height < 1:
            raise TopologyError("interposer must be at least 1x1")
        seen: Dict[Tuple[int, int], int] = {}
        for c, spec in enumerate(self.chiplets):
            if spec.width < 1 or spec.height < 1:
                raise TopologyError(f"chiplet {c} must be at least 1x1")
            if (spec.origin_x < 0 or spec.origin_y < 0
                    or spec.origin_x + spec.width > self.interposer_width
                    or spec.origin_y + spec.height > self.interposer_height):
                raise TopologyError(f"chiplet {c} footprint exceeds interposer bounds")
            for y in range(spec.origin_y, spec.origin_y + spec.height):
                for x in range(spec.origin_x, spec.origin_x + spec.width):
                    if (x, y) in seen:
                        raise TopologyError(f"chiplets {seen[(x, y)]} and {c} overlap at ({x},{y})")
                    seen[(x, y)] = c

    def _build_tables(self) -> None:
        n = len(self.router_ids)
        # layer[i]: chiplet index, or -1 for interposer
        self.layer: List[int] = [(-1 if r.chiplet is None else r.chiplet) for r in self.router_ids]
        self.xs: List[int] = [r.x for r in self.router_ids]
        self.ys: List[int] = [r.y for r in self.router_ids]
        self.neighbors: List[List[int]] = [[-1] * 7 for _ in range(n)]
        for i, rid in enumerate(self.router_ids):
            if rid.chiplet is None:
                w, h = self.interposer_width, self.interposer_height
            else:
                spec = self.chiplets[rid.chiplet]
                w, h = spec.width, spec.height
            for port, (dx, dy) in PORT_DELTA.items():
                nx_, ny_ = rid.x + dx, rid.y + dy
                if 0 <= nx_ < w and 0 <= ny_ < h:
                    self.neighbors[i][port] = self._index[RouterId(rid.chiplet, nx_, ny_)]
        self.vl_at: List[Optional[VerticalLink]] = [None] * n
        for v in self.vls:
            b = self._index[v.chiplet_router]
            u = self._index[v.interposer_router]
            if self.vl_at[u] is not None:
                raise TopologyError(f"two VLs attached to interposer router {v.interposer_router}")
            self.vl_at[b] = v
            self.vl_at[u] = v
            self.neighbors[b][Port.DOWN] = u
            self.neighbors[u][Port.UP] = b
        self.endpoints: Tuple[int, ...] = tuple(range(self._interposer_base)) + self.interposer_sources

    # -- accessors --------------------------------------------------------

    @property
    def num_routers(self) -> int:
        return len(self.router_ids)

    @property
    def num_chiplet_routers(self) -> int:
        return self._interposer_base

    def index(self, rid: RouterId) -> int:
        try:
            return self._index[rid]
        except KeyError:
            raise TopologyError(f"no router {rid}") from None

    def router(self, i: int) -> RouterId:
        return self.router_ids[i]

    def chiplet_routers(self, chiplet: int) -> range:
        base = self._chiplet_base[chiplet]
        return range(base, base + self.chiplets[chiplet].num_routers)

    def local_index(self, i: int) -> int:
        """Row-major index of router ``i`` inside its own chiplet."""
        c = self.layer[i]
        if c < 0:
            raise TopologyError(f"router {self.router_ids[i]} is not on a chiplet")
        return i - self._chiplet_base[c]

    def interposer_index(self, x: int, y: int) -> int:
        return self._interposer_base + y * self.interposer_width + x

    def global_xy(self, i: int) -> Tuple[int, int]:
        c = self.layer[i]
        if c < 0:
            return self.xs[i], self.ys[i]
        spec = self.chiplets[c]
        return spec.origin_x + self.xs[i], spec.origin_y + self.ys[i]

    def footprint_origin(self, chiplet: int) -> Tuple[int, int]:
        spec = self.chiplets[chiplet]
        return spec.origin_x, spec.origin_y

    def boundary_router_of(self, vl: VerticalLink) -> RouterId:
        return vl.chiplet_router

    def vl_under(self, rid: RouterId) -> Optional[VerticalLink]:
        """The VL attached to ``rid`` (boundary router or the interposer router beneath one)."""
        return self.vl_at[self.index(rid)]

    def is_boundary(self, i: int) -> bool:
        return self.layer[i] >= 0 and self.vl_at[i] is not None

    def ports(self, i: int) -> List[Port]:
        """Output ports physically present on router ``i`` (Local included)."""
        return [p for p in Port if p == Port.LOCAL or self.neighbors[i][p] >= 0]

    def vl_id(self, chiplet: int, local_id: int) -> int:
        return self.chiplet_vls[chiplet][local_id].id

    # -- serialization ----------------------------------------------------

    def to_config(self) -> Dict[str, Any]:
        return {
            "chiplets": [
                {"width": c.width, "height": c.height, "origin_x": c.origin_x, "origin_y": c.origin_y}
                for c in self.chiplets
            ],
            "interposer": {"width": self.interposer_width, "height": self.interposer_height},
            "vls": [
                {"chiplet": v.chiplet, "local_x": v.chiplet_router.x, "local_y": v.chiplet_router.y}
                for v in self.vls
            ],
            "sources": {"interposer": [[self.xs[i], self.ys[i]] for i in self.interposer_sources]},
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return self.to_config() == other.to_config()

    def __hash__(self) -> int:
        return hash(dump_topology(self))

    def __repr__(self) -> str:
        return (f"Topology({len(self.chiplets)} chiplets, interposer "
                f"{self.interposer_width}x{self.interposer_height}, {len(self.vls)} VLs)")


def dump_topology(topo: Topology) -> str:
    """Deterministic JSON text for ``topo`` (sorted keys)."""
    return json.dumps(topo.to_config(), sort_keys=True, indent=2) + "\n"


def load_topology(config: Union[str, Mapping[str, Any]]) -> Topology:
    """Build a :class:`Topology` from a JSON document or an already-parsed mapping."""
    if isinstance(config, str):
        try:
            config = json.loads(config)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"config is not valid JSON: {exc}") from None
    if not isinstance(config, Mapping):
        raise TopologyError("config must be a JSON object")
    try:
        chiplets = [
            ChipletSpec(int(c["width"]), int(c["height"]), int(c["origin_x"]), int(c["origin_y"]))
            for c in config["chiplets"]
        ]
        interposer = (int(config["interposer"]["width"]), int(config["interposer"]["height"]))
        vls = [(int(v["chiplet"]), int(v["local_x"]), int(v["local_y"])) for v in config.get("vls", [])]
        sources = [(int(x), int(y)) for x, y in config.get("sources", {}).get("interposer", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise TopologyError(f"malformed config: {exc!r}") from None
    return Topology(chiplets, interposer, vls, sources)


def read_topology(path: Union[str, Path]) -> Topology:
    path = Path(path)
    if not path.exists():
        raise TopologyError(f"topology file not found: {path}")
    try:
        return load_topology(path.read_text())
    except TopologyError as e:
        raise TopologyError(f"{path}: {e}") from None


def grid_system(cols: int, rows: int, chiplet_w: int = 4, chiplet_h: int = 4,
                vl_positions: Optional[Sequence[Tuple[int, int]]] = None) -> Topology:
    """``cols`` x ``rows`` identical chiplets tiling an interposer exactly."""
    positions = list(vl_positions) if vl_positions is not None else default_vl_positions(chiplet_w, chiplet_h)
    chiplets = []
    vls = []
    for r in range(rows):
        for c in range(cols):
            idx = len(chiplets)
            chiplets.append(ChipletSpec(chiplet_w, chiplet_h, c * chiplet_w, r * chiplet_h))
            vls.extend((idx, x, y) for x, y in positions)
    return Topology(chiplets, (cols * chiplet_w, rows * chiplet_h), vls)


PRESETS = ("baseline4", "six6")


def preset(name: str) -> Topology:
    """Named systems.

    ``baseline4``: four 4x4 chiplets on an 8x8 interposer, 4 VLs each.
    ``six6``: six 4x4 chiplets (3 columns x 2 rows) on a 12-wide, 8-high
    interposer, 4 VLs each.
    """
    if name == "baseline4":
        return grid_system(2, 2)
    if name == "six6":
        return grid_system(3, 2)
    raise TopologyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
